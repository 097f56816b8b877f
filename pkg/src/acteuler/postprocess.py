"""Derived fields and exports from a converged state.

Everything here is a pure reader: vorticity and rate norms come straight
from the cellwise-affine velocity, the constitutive scatter re-reads the
first block of the residual, slices point-evaluate the fields, and the
writers emit legacy ASCII VTK and fixed-layout CSV.  Fields are exported
as cell data to match the lowest-order spaces; no nodal recovery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constitutive import generalized_fluidity
from .fem import broken_sym_gradient

__all__ = [
    "FieldSnapshot",
    "ScatterData",
    "SliceProfile",
    "circulation_identity",
    "compute_vorticity",
    "constitutive_scatter",
    "extract_slice",
    "output_basename",
    "read_csv",
    "write_csv",
    "write_vtk",
]


def compute_vorticity(space, v):
    """Cellwise-constant curl of the velocity field; (m,)."""
    g = space.gradient(v)
    return g[:, 1, 0] - g[:, 0, 1]


def circulation_identity(space, v):
    """Terms of the discrete Stokes theorem for a cellwise-affine field.

    Summing Green's theorem over cells gives

        int_Omega w_h dx = oint_dOmega v.t ds + sum_F int_F [[v]].t ds

    with t the normal rotated by +90 degrees and the sum over interior
    facets; the identity holds to rounding for any dof vector.

    Returns:
        dict with vorticity_integral, boundary_circulation,
        interior_jump_circulation.
    """
    tri = space.tri
    omega = compute_vorticity(space, v)
    total = float(np.sum(tri.cell_areas * omega))
    w = space.edges.weights

    def tangential(facets, jump):
        n = tri.facet_normals[facets]
        t = np.stack([-n[:, 1], n[:, 0]], axis=-1)
        jt = np.einsum("fgc,fc->fg", jump, t)
        # ds = (h/2) dxi
        return float(np.sum(0.5 * tri.facet_lengths[facets] * (jt @ w)))

    boundary = tri.boundary_facets
    circ = tangential(boundary, space.facet_values(v, boundary, 0))
    interior = tri.interior_facets
    jumps = 0.0
    if interior.size:
        jumps = tangential(interior,
                           space.facet_values(v, interior, 0)
                           - space.facet_values(v, interior, 1))
    return {"vorticity_integral": total,
            "boundary_circulation": circ,
            "interior_jump_circulation": jumps}


@dataclass(frozen=True)
class ScatterData:
    """Per-cell constitutive response of a converged state.

    lifted_rate is |D~_K| with D~_K read off the stress-equation rows
    (the symmetric gradient plus its facet-jump lifting), so at a
    converged state lifted_rate = alpha_g(|S_K|) |S_K| cell by cell;
    curve_rate is that right-hand side and identity_gap the difference.
    raw_rate is |D(v_h)| without the lifting, emitted for comparison.
    """

    stress_norm: np.ndarray
    lifted_rate: np.ndarray
    raw_rate: np.ndarray
    curve_rate: np.ndarray

    @property
    def identity_gap(self):
        return np.abs(self.lifted_rate - self.curve_rate)


def constitutive_scatter(assembler, state) -> ScatterData:
    """Per-cell (|D~|, |S|) pairs plus the raw |D(v)| column."""
    areas = assembler.tri.cell_areas
    lift = (assembler.G @ state.v + assembler.g_data).reshape(-1, 2)
    lift /= 2.0 * areas[:, None]
    lifted = np.sqrt(2.0 * np.sum(lift**2, axis=1))
    s = np.asarray(state.s).reshape(-1, 2)
    s_norm = np.sqrt(2.0 * np.sum(s**2, axis=1))
    curve = generalized_fluidity(s_norm, assembler.setup.params) * s_norm
    raw = broken_sym_gradient(assembler.velocity, state.v).norm()
    return ScatterData(stress_norm=s_norm, lifted_rate=lifted,
                       raw_rate=raw, curve_rate=curve)


@dataclass(frozen=True)
class FieldSnapshot:
    """Cell-data view of a converged state, ready for export.

    All arrays have one entry per cell; velocity is the centroid value
    (the cell average of an affine field).
    """

    tri: object
    velocity: np.ndarray
    speed: np.ndarray
    pressure: np.ndarray
    vorticity: np.ndarray
    stress_norm: np.ndarray
    rate_norm: np.ndarray
    params: object = None

    def __post_init__(self):
        m = self.tri.n_cells
        for name in ("speed", "pressure", "vorticity", "stress_norm",
                     "rate_norm"):
            arr = getattr(self, name)
            if arr.shape != (m,):
                raise ValueError(f"{name} must have one entry per cell")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if self.velocity.shape != (m, 2) or \
                not np.all(np.isfinite(self.velocity)):
            raise ValueError("velocity must be finite with shape (m, 2)")

    @classmethod
    def from_state(cls, assembler, state, params=None):
        tri = assembler.tri
        centroids = tri.cell_centroids()
        cells = np.arange(tri.n_cells)
        vel = assembler.velocity.evaluate(state.v, cells, centroids)
        s = np.asarray(state.s).reshape(-1, 2)
        return cls(
            tri=tri,
            velocity=vel,
            speed=np.hypot(vel[:, 0], vel[:, 1]),
            pressure=np.asarray(state.p, dtype=float),
            vorticity=compute_vorticity(assembler.velocity, state.v),
            stress_norm=np.sqrt(2.0 * np.sum(s**2, axis=1)),
            rate_norm=broken_sym_gradient(assembler.velocity, state.v).norm(),
            params=params if params is not None else assembler.setup.params)


@dataclass(frozen=True)
class SliceProfile:
    """Samples of (y, |v|, |omega|) along a vertical line.

    Samples falling outside the mesh (inside an obstacle) are omitted;
    n_requested - len(y) of them were absent.  y is strictly increasing.
    """

    x_station: float
    y: np.ndarray
    speed: np.ndarray
    vorticity: np.ndarray
    n_requested: int

    def __post_init__(self):
        if self.y.size and not np.all(np.diff(self.y) > 0.0):
            raise ValueError("slice samples must have increasing y")

    @property
    def n_absent(self):
        return self.n_requested - self.y.size


def _locate_cells(tri, points):
    """Containing cell per point, -1 if none; first match for determinism."""
    verts = tri.vertices[tri.cells]  # (m, 3, 2)
    a = verts[:, 0]
    jac = np.stack([verts[:, 1] - a, verts[:, 2] - a], axis=-1)  # (m, 2, 2)
    inv = np.linalg.inv(jac)
    rel = points[None, :, :] - a[:, None, :]  # (m, n, 2)
    loc = np.einsum("mde,mne->mnd", inv, rel)
    lam = np.stack([1.0 - loc[..., 0] - loc[..., 1],
                    loc[..., 0], loc[..., 1]], axis=-1)
    inside = np.all(lam >= -1e-12, axis=-1)  # (m, n)
    found = np.any(inside, axis=0)
    first = np.argmax(inside, axis=0)
    return np.where(found, first, -1)


def extract_slice(assembler, state, x_station, n_samples=400) -> SliceProfile:
    """Point samples of speed and cellwise vorticity along x = station.

    Pure evaluation of the affine velocity, linear in the state; sample
    placement is uniform over the mesh y-extent and deterministic.

    Raises:
        ValueError: station outside the mesh x-extent.
    """
    tri = assembler.tri
    xmin, xmax = tri.vertices[:, 0].min(), tri.vertices[:, 0].max()
    if not xmin <= x_station <= xmax:
        raise ValueError(
            f"station x={x_station} outside domain [{xmin}, {xmax}]")
    ymin, ymax = tri.vertices[:, 1].min(), tri.vertices[:, 1].max()
    y = np.linspace(ymin, ymax, n_samples)
    pts = np.column_stack([np.full(n_samples, float(x_station)), y])
    cells = _locate_cells(tri, pts)
    keep = cells >= 0
    vel = assembler.velocity.evaluate(state.v, cells[keep], pts[keep])
    omega = compute_vorticity(assembler.velocity, state.v)
    return SliceProfile(
        x_station=float(x_station),
        y=y[keep],
        speed=np.hypot(vel[:, 0], vel[:, 1]),
        vorticity=np.abs(omega[cells[keep]]),
        n_requested=n_samples)


# -- writers -------------------------------------------------------------------

def output_basename(scenario, refine, eu):
    """Canonical file stem <scenario>_<refine>_<eu>."""
    return f"{scenario}_{refine}_{eu:g}"


def _fmt(x):
    return f"{x:.17g}"


def write_vtk(snapshot: FieldSnapshot, path):
    """Legacy ASCII VTK 2.0 unstructured grid with cell data arrays."""
    tri = snapshot.tri
    lines = ["# vtk DataFile Version 2.0",
             "activated Euler flow snapshot",
             "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {tri.n_vertices} double"]
    for x, y in tri.vertices:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0")
    lines.append(f"CELLS {tri.n_cells} {4 * tri.n_cells}")
    for c in tri.cells:
        lines.append(f"3 {c[0]} {c[1]} {c[2]}")
    lines.append(f"CELL_TYPES {tri.n_cells}")
    lines.extend(["5"] * tri.n_cells)
    lines.append(f"CELL_DATA {tri.n_cells}")
    lines.append("VECTORS velocity double")
    for vx, vy in snapshot.velocity:
        lines.append(f"{_fmt(vx)} {_fmt(vy)} 0")
    for name, arr in (("pressure", snapshot.pressure),
                      ("vorticity", snapshot.vorticity),
                      ("stress_norm", snapshot.stress_norm),
                      ("rate_norm", snapshot.rate_norm)):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(x) for x in arr)
    _write_text(path, "\n".join(lines) + "\n")


SLICE_COLUMNS = ("y", "speed", "vorticity")
SCATTER_COLUMNS = ("stress_norm", "lifted_rate", "raw_rate")


def write_csv(data, path):
    """Fixed-layout CSV: slice profiles or constitutive scatter."""
    if isinstance(data, SliceProfile):
        header, cols = SLICE_COLUMNS, (data.y, data.speed, data.vorticity)
    elif isinstance(data, ScatterData):
        header, cols = SCATTER_COLUMNS, (data.stress_norm, data.lifted_rate,
                                         data.raw_rate)
    else:
        raise TypeError(f"no CSV layout for {type(data).__name__}")
    rows = [",".join(header)]
    for values in zip(*cols):
        rows.append(",".join(_fmt(v) for v in values))
    _write_text(path, "\n".join(rows) + "\n")


def read_csv(path):
    """Header tuple and column arrays of a CSV written by write_csv."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            header = tuple(fh.readline().strip().split(","))
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    return header, tuple(data[:, j] for j in range(data.shape[1]))


def _write_text(path, text):
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
