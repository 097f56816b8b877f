import numpy as np
import pytest

from acteuler.mesh import build_triangulation, generate_rectangle


def marker_edge_list(tri):
    return [(int(tri.facet_vertices[f, 0]), int(tri.facet_vertices[f, 1]),
             int(tri.facet_markers[f])) for f in tri.boundary_facets]


def perturbed_rectangle(nx, ny, x_range=(0.0, 1.0), y_range=(0.0, 1.0),
                        seed=0, amount=0.15, markers=None):
    """Structured rectangle with interior vertices jittered (fixed seed).

    Breaks the structured-mesh symmetries so tests do not pass by accident.
    """
    tri = generate_rectangle(nx, ny, x_range, y_range, markers=markers)
    rng = np.random.default_rng(seed)
    verts = tri.vertices.copy()
    hx = (x_range[1] - x_range[0]) / nx
    hy = (y_range[1] - y_range[0]) / ny
    on_boundary = np.zeros(tri.n_vertices, dtype=bool)
    for f in tri.boundary_facets:
        on_boundary[tri.facet_vertices[f]] = True
    inner = ~on_boundary
    verts[inner, 0] += amount * hx * rng.uniform(-1, 1, inner.sum())
    verts[inner, 1] += amount * hy * rng.uniform(-1, 1, inner.sum())
    return build_triangulation(verts, tri.cells, marker_edge_list(tri))


@pytest.fixture
def small_mesh():
    return perturbed_rectangle(3, 3, seed=7)


# -- shared convergence studies (expensive; computed once per session) ---------

@pytest.fixture(scope="session")
def manufactured_stokes_report():
    from acteuler.constitutive import ConstitutiveParams
    from acteuler.verification import ManufacturedCase, convergence_study
    case = ManufacturedCase(ConstitutiveParams(1.0, 0.0, 1e-3, re=0.0, ga=1.0))
    return convergence_study(case, (24, 48, 96))


@pytest.fixture(scope="session")
def channel_reports():
    """Channel studies keyed by eu; eu = 0 uses G = 1 so u = 1 - y^2."""
    from acteuler.constitutive import ConstitutiveParams
    from acteuler.verification import ChannelOracle, convergence_study
    out = {}
    for eu, g in ((0.0, 1.0), (15.0, 20.0)):
        oracle = ChannelOracle(
            g_force=g, params=ConstitutiveParams(1.0, eu, 1e-3, ga=g))
        out[eu] = (oracle, convergence_study(oracle, (8, 16, 32)))
    return out
