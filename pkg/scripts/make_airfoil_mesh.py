"""Generate the flow-past-an-airfoil base mesh shipped with the package.

The domain is the box (-8, 8)^2 with a closed-trailing-edge NACA 0012
profile of unit chord, leading edge at the origin.  The mesh has two
zones stitched along an ellipse around the profile:

  * a structured O-band of ten quad layers (split into triangles) that
    morphs from the airfoil polygon to the ellipse, carrying the wall
    resolution needed for the boundary layer at Re = 500;
  * an unstructured Delaunay region from the ellipse to the box, graded
    by concentric offset rings near the body, a refined strip along the
    wake, and a coarse far field.

Construction is deterministic (fixed RNG seed, fixed point ordering) and
tuned so the final mesh has exactly TARGET_CELLS triangles; the cell
count identity T = 2 V_i + V_b for a triangulated region with one hole
turns the target into an exact interior-point budget.

Run from the repository root:

    python3 scripts/make_airfoil_mesh.py

Writes src/acteuler/data/airfoil_base.msh and prints quality stats.
"""

import pathlib
import sys

import numpy as np
from scipy.spatial import Delaunay, cKDTree

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from acteuler.mesh import (MARKER_CODES, build_triangulation, export_gmsh,
                           import_gmsh)

TARGET_CELLS = 8808
BOX = 8.0

# airfoil discretization and O-band shape
N_LOOP = 160          # nodes around the profile (even: tip lies on a node)
N_CHORD = 81          # chord stations; loop = 2 * (N_CHORD - 1) - 2 + 2
H_LE, H_TE, H_POW = 1.2e-3, 6.0e-3, 0.65
BAND_LAYERS = 10
BAND_RATIO = 1.32
ELL_CX, ELL_A, ELL_B = 0.5, 0.85, 0.35

# outer grading; sized so the Delaunay zone lands on its cell budget
RING_GROWTH = 1.42    # spacing growth per offset ring
RING_CAP = 0.38       # stop offset rings once spacing exceeds this
WAKE_DY = 0.13        # wake strip row spacing
WAKE_HALF = 0.52      # strip half-height
WAKE_X_END = 7.45
FAR_PITCH = 0.34      # far-field lattice pitch
SEED = 20260816


def naca_half_thickness(x):
    """Closed-trailing-edge NACA 0012 half thickness on [0, 1]."""
    return 0.6 * (0.2969 * np.sqrt(x) - 0.1260 * x - 0.3516 * x**2
                  + 0.2843 * x**3 - 0.1036 * x**4)


def chord_nodes(n):
    """Chord stations graded by the target spacing h(x).

    Inverts the cumulative integral of 1/h for h(x) = H_LE +
    (H_TE - H_LE) x^H_POW, so spacing is finest at the leading edge and
    near-isotropic with the first band layer at the trailing edge.
    """
    xf = np.linspace(0.0, 1.0, 200001)
    h = H_LE + (H_TE - H_LE) * xf**H_POW
    cum = np.concatenate(
        [[0.0], np.cumsum(0.5 * (1.0 / h[1:] + 1.0 / h[:-1])) * np.diff(xf)])
    cum /= cum[-1]
    return np.interp(np.linspace(0.0, 1.0, n), cum, xf)


def airfoil_loop():
    """Closed profile polygon, counterclockwise from the trailing edge."""
    x = chord_nodes(N_CHORD)
    y = naca_half_thickness(x)
    y[0] = 0.0
    y[-1] = 0.0
    upper = np.column_stack([x[::-1], y[::-1]])
    lower = np.column_stack([x[1:-1], -y[1:-1]])
    loop = np.vstack([upper, lower])
    assert len(loop) == N_LOOP
    return loop


def loop_params(loop):
    """Normalized cumulative arc-length parameter of a closed polygon."""
    seg = np.hypot(*(np.roll(loop, -1, axis=0) - loop).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return s[:-1] / s[-1]


def resample_loop(ring, params):
    """Points at given arc-length parameters along a closed polygon."""
    closed = np.vstack([ring, ring[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    st = params * s[-1]
    return np.column_stack([np.interp(st, s, closed[:, 0]),
                            np.interp(st, s, closed[:, 1])])


def ellipse_loop(params, a=ELL_A, b=ELL_B):
    """Ellipse samples at arc-length parameters matching the profile's."""
    th = np.linspace(0.0, 2.0 * np.pi, 20000, endpoint=False)
    pts = np.column_stack([ELL_CX + a * np.cos(th), b * np.sin(th)])
    seg = np.hypot(*(np.roll(pts, -1, axis=0) - pts).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    xi = np.interp(params * s[-1], s[:-1], th)
    return np.column_stack([ELL_CX + a * np.cos(xi), b * np.sin(xi)])


def _tri_min_angle(a, b, c):
    best = 180.0
    for p, q, r in ((a, b, c), (b, c, a), (c, a, b)):
        u, v = q - p, r - p
        cosang = np.dot(u, v) / (np.hypot(*u) * np.hypot(*v))
        best = min(best, np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return best


def build_band():
    """Structured O-band: airfoil polygon to ellipse in BAND_LAYERS layers.

    Layer radii follow a geometric wall-normal grading; ring node
    parameters relax linearly from the profile's arc-length clustering
    to uniform, so the outermost ring is evenly spaced for the Delaunay
    zone.  Each quad is split along the diagonal that maximizes the
    minimum angle.

    Returns:
        (verts, cells): ring-major vertex array and triangle indices.
    """
    loop = airfoil_loop()
    par = loop_params(loop)
    oval = ellipse_loop(par)
    uni = np.arange(N_LOOP) / N_LOOP
    w = (BAND_RATIO**np.arange(BAND_LAYERS + 1) - 1.0) \
        / (BAND_RATIO**BAND_LAYERS - 1.0)

    rings = [loop]
    for j in range(1, BAND_LAYERS + 1):
        q = j / BAND_LAYERS
        ring = (1.0 - w[j]) * loop + w[j] * oval
        rings.append(resample_loop(ring, (1.0 - q) * par + q * uni))
    verts = np.vstack(rings)

    cells = []
    for j in range(BAND_LAYERS):
        lo, hi = j * N_LOOP, (j + 1) * N_LOOP
        for i in range(N_LOOP):
            k = (i + 1) % N_LOOP
            quad = (lo + i, lo + k, hi + k, hi + i)
            pa, pb, pc, pd = (verts[t] for t in quad)
            ac = min(_tri_min_angle(pa, pb, pc), _tri_min_angle(pa, pc, pd))
            bd = min(_tri_min_angle(pa, pb, pd), _tri_min_angle(pb, pc, pd))
            a, b, c, d = quad
            cells += [(a, b, c), (a, c, d)] if ac >= bd else \
                     [(a, b, d), (b, c, d)]
    return verts, np.asarray(cells, dtype=np.int64)


def offset_rings(s0):
    """Concentric near-ellipse rings with geometrically growing spacing.

    Returns a list of (points, spacing); ring k sits at cumulative
    offset sum(s0 * RING_GROWTH**i) and is sampled at spacing
    s0 * RING_GROWTH**k with alternating phase.
    """
    rings = []
    d = 0.0
    k = 1
    while True:
        sk = s0 * RING_GROWTH**k
        if sk > RING_CAP:
            break
        d += sk
        a, b = ELL_A + d, ELL_B + d
        th = np.linspace(0.0, 2.0 * np.pi, 4000, endpoint=False)
        pts = np.column_stack([ELL_CX + a * np.cos(th), b * np.sin(th)])
        seg = np.hypot(*(np.roll(pts, -1, axis=0) - pts).T)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        n = max(8, int(round(s[-1] / sk)))
        phase = 0.5 * (k % 2)
        xi = np.interp((np.arange(n) + phase) / n * s[-1], s[:-1], th)
        rings.append((np.column_stack([ELL_CX + a * np.cos(xi),
                                       b * np.sin(xi)]), sk))
        k += 1
    return rings


def wake_points(rng):
    """Staggered refined grid along the wake strip behind the body."""
    pts = []
    rows = np.arange(-WAKE_HALF, WAKE_HALF + 1e-9, WAKE_DY)
    for r, y in enumerate(rows):
        x = 1.35 + ELL_CX
        i = 0
        while x < WAKE_X_END:
            dx = WAKE_DY * min(1.05**i, 3.0)
            xs = x + (0.5 * dx if r % 2 else 0.0)
            if xs < WAKE_X_END:
                pts.append((xs, y))
            x += dx
            i += 1
    pts = np.asarray(pts)
    return pts + rng.uniform(-1.0, 1.0, pts.shape) * 0.02 * WAKE_DY


def far_lattice(rng):
    """Hexagonal far-field lattice covering the box minus a wall margin."""
    margin = 0.5
    dy = FAR_PITCH * np.sqrt(3.0) / 2.0
    ys = np.arange(-BOX + margin, BOX - margin + 1e-9, dy)
    pts = []
    for r, y in enumerate(ys):
        x0 = -BOX + margin + (0.5 * FAR_PITCH if r % 2 else 0.0)
        xs = np.arange(x0, BOX - margin + 1e-9, FAR_PITCH)
        pts.extend((x, y) for x in xs)
    pts = np.asarray(pts)
    return pts + rng.uniform(-1.0, 1.0, pts.shape) * 0.02 * FAR_PITCH


def box_side_nodes():
    """Boundary nodes of the box, corner nodes included once.

    The right side is graded finer where the wake crosses it; the node
    total is kept even so the interior-point budget for the target cell
    count is an integer.

    Returns:
        (points, side): coordinates and one of "left", "right",
        "top", "bottom" per node.
    """
    def seg(a, b, h):
        n = max(1, int(round(abs(b - a) / h)))
        return np.linspace(a, b, n + 1)

    right_y = np.concatenate([seg(-BOX, -1.2, 0.5)[:-1],
                              seg(-1.2, 1.2, 0.33)[:-1],
                              seg(1.2, BOX, 0.5)[:-1]])
    coarse = seg(-BOX, BOX, 0.5)[:-1]

    # walk counterclockwise, each side half-open so corners appear once
    pts, side = [], []
    for x in coarse:
        pts.append((x, -BOX)); side.append("bottom")
    for y in right_y:
        pts.append((BOX, y)); side.append("right")
    for x in -coarse:
        pts.append((x, BOX)); side.append("top")
    for y in -coarse:
        pts.append((-BOX, y)); side.append("left")
    pts = np.asarray(pts)
    if len(pts) % 2:
        pts = np.vstack([pts, [(0.5 * (coarse[0] + coarse[1]), BOX)]])
        side.append("top")
    return pts, side


def _prune(cand, accepted_tree, radius):
    """Drop candidates within radius of accepted points or prior survivors."""
    keep = []
    kept = []
    for i, p in enumerate(cand):
        if accepted_tree.query(p)[0] < radius:
            continue
        if kept and cKDTree(np.asarray(kept)).query(p)[0] < radius:
            continue
        keep.append(i)
        kept.append(p)
    return cand[keep]


def build_outer(ellipse_ring):
    """Delaunay zone between the band's outer ring and the box.

    Tunes the interior cloud to exactly the point budget implied by
    T = 2 V_i + V_b with TARGET_CELLS minus the band's cell count.
    """
    rng = np.random.default_rng(SEED)
    n_band_cells = 2 * BAND_LAYERS * N_LOOP
    seg = np.hypot(*(np.roll(ellipse_ring, -1, axis=0) - ellipse_ring).T)
    s0 = seg.mean()

    box_pts, box_side = box_side_nodes()
    v_b = len(ellipse_ring) + len(box_pts)
    assert v_b % 2 == 0, "boundary node total must be even"
    budget = (TARGET_CELLS - n_band_cells - v_b) // 2

    def outside_hole(p):
        return (((p[:, 0] - ELL_CX) / ELL_A)**2
                + (p[:, 1] / ELL_B)**2) > 1.05

    interior = [p for p, _ in offset_rings(s0)]
    ring_tree = cKDTree(np.vstack([ellipse_ring] + interior))
    wake = _prune(wake_points(rng), ring_tree, 0.62 * WAKE_DY)
    interior.append(wake)
    fine_tree = cKDTree(np.vstack([ellipse_ring] + interior + [box_pts]))
    far_cand = far_lattice(rng)
    far = _prune(far_cand[outside_hole(far_cand)], fine_tree,
                 0.58 * FAR_PITCH)
    interior.append(far)

    cloud = np.vstack(interior)
    print(f"points: rings {sum(len(r) for r, _ in offset_rings(s0))}  "
          f"wake {len(wake)}  far {len(far)}  budget {budget}")
    if len(cloud) < budget:
        raise SystemExit(f"cloud too sparse: {len(cloud)} < budget {budget}; "
                         "lower FAR_PITCH")
    # trim evenly in insertion order to hit the budget exactly
    excess = len(cloud) - budget
    if excess:
        far_start = len(cloud) - len(far)
        if excess > len(far):
            raise SystemExit("budget requires trimming non-far points; "
                             "raise FAR_PITCH")
        drop = far_start + np.round(
            np.linspace(0, len(far) - 1, excess)).astype(int)
        cloud = np.delete(cloud, drop, axis=0)

    pts = np.vstack([ellipse_ring, box_pts, cloud])
    tri = Delaunay(pts)
    if len(tri.coplanar):
        raise SystemExit("Delaunay dropped coplanar points")
    cells = tri.simplices.astype(np.int64)

    # remove the ellipse hole; convexity makes the centroid test exact
    cen = pts[cells].mean(axis=1)
    inside = (((cen[:, 0] - ELL_CX) / ELL_A)**2
              + (cen[:, 1] / ELL_B)**2) < 1.0
    cells = cells[~inside]
    return pts, cells, box_side, len(ellipse_ring)


def stitch():
    """Assemble band + outer zones into a marked Triangulation."""
    band_verts, band_cells = build_band()
    ring = band_verts[-N_LOOP:]
    outer_pts, outer_cells, box_side, n_ring = build_outer(ring)

    # outer point p reuses band vertex index for the shared ring
    n_band = len(band_verts)
    remap = np.arange(len(outer_pts), dtype=np.int64) + n_band - n_ring
    remap[:n_ring] = np.arange(n_band - n_ring, n_band)
    verts = np.vstack([band_verts, outer_pts[n_ring:]])
    cells = np.vstack([band_cells, remap[outer_cells]])
    assert len(cells) == TARGET_CELLS, f"{len(cells)} cells != {TARGET_CELLS}"

    markers = []
    obstacle = MARKER_CODES["obstacle"]
    for i in range(N_LOOP):
        markers.append((i, (i + 1) % N_LOOP, obstacle))

    box_start = n_band
    box_ids = np.arange(box_start, box_start + len(box_side))
    box_xy = verts[box_ids]
    for name, sel in (("left", box_xy[:, 0] == -BOX),
                      ("right", box_xy[:, 0] == BOX),
                      ("bottom", box_xy[:, 1] == -BOX),
                      ("top", box_xy[:, 1] == BOX)):
        ids = box_ids[sel]
        order = np.argsort(box_xy[sel][:, 1 if name in ("left", "right")
                                       else 0], kind="stable")
        ids = ids[order]
        code = MARKER_CODES["outflow" if name == "right" else "inflow"]
        markers.extend((int(ids[i]), int(ids[i + 1]), code)
                       for i in range(len(ids) - 1))

    tri = build_triangulation(verts, cells, markers)
    if len(tri.boundary_facets) != len(markers):
        raise SystemExit("boundary facet count does not match markers")
    return tri


def quality(tri):
    p = tri.vertices[tri.cells]
    angs = []
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.sum(a * b, axis=1) / (
            np.hypot(a[:, 0], a[:, 1]) * np.hypot(b[:, 0], b[:, 1]))
        angs.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return np.min(angs, axis=0)


def main():
    tri = stitch()
    ang = quality(tri)
    stats = tri.stats()
    print(f"cells {stats['n_cells']}  vertices {stats['n_vertices']}  "
          f"facets {stats['n_facets']}")
    print(f"min angle {ang.min():.2f} deg  pct<5 {100 * (ang < 5).mean():.2f}"
          f"  pct<10 {100 * (ang < 10).mean():.2f}")
    print(f"areas [{tri.cell_areas.min():.3g}, {tri.cell_areas.max():.3g}]")
    for name in ("inflow", "outflow", "wall", "obstacle"):
        print(f"  {name}: {len(tri.facets_with_marker(name))} facets")
    assert ang.min() > 4.0, "mesh quality regression"

    out = (pathlib.Path(__file__).resolve().parents[1]
           / "src" / "acteuler" / "data" / "airfoil_base.msh")
    out.parent.mkdir(parents=True, exist_ok=True)
    export_gmsh(tri, out)
    back = import_gmsh(out, {1: "inflow", 2: "outflow", 3: "wall",
                             4: "obstacle"})
    assert back.n_cells == tri.n_cells
    assert np.array_equal(np.sort(back.facet_markers),
                          np.sort(tri.facet_markers))
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
