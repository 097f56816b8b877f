"""Bundled mesh artifacts.

The airfoil base mesh is generated offline by scripts/make_airfoil_mesh.py
and checked in, so runs are reproducible without a mesher dependency.
"""

from importlib import resources

GMSH_TAGS = {1: "inflow", 2: "outflow", 3: "wall", 4: "obstacle"}


def mesh_path(name="airfoil_base.msh"):
    """Filesystem path of a bundled mesh file."""
    path = resources.files(__package__) / name
    if not path.is_file():
        raise FileNotFoundError(f"no bundled mesh {name!r}")
    return path
