"""Finite element spaces on triangles.

Three spaces make up the discretization:

  * StressSpace: cellwise-constant symmetric traceless tensors, two
    components (xx, xy) per cell.
  * VelocitySpace: lowest-order Brezzi-Douglas-Marini elements.  Each cell
    carries full vector-valued linears; the degrees of freedom are the two
    normal-flux moments per facet against {1, xi} in the facet's own
    parametrization (lower vertex index to higher, fixed normal).  Sharing
    those dofs across cells makes the normal trace continuous, so the space
    is H(div)-conforming and its divergence is cellwise constant.
  * PressureSpace: cellwise constants.

Shape functions are constructed per physical cell by inverting the 6x6
facet-moment matrix in the barycentric basis; for affine cells this is
equivalent to contravariant Piola mapping of reference shape functions
(`piola_map` provides the mapping itself, used by tests).

Cell quadrature is a fixed-degree barycentric rule (degree 4 default), edge
quadrature is Gauss-Legendre on the facet parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constitutive import SymTensor2
from .mesh import Triangulation

__all__ = [
    "QuadratureRule",
    "EdgeRule",
    "cell_rule",
    "edge_rule",
    "StressSpace",
    "PressureSpace",
    "VelocitySpace",
    "interpolate_velocity",
    "broken_sym_gradient",
    "jump_average",
    "dg_norm",
    "piola_map",
]

# Dunavant rules in barycentric coordinates; weights sum to one.
_DUNAVANT = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (np.array([[2 / 3, 1 / 6, 1 / 6],
                  [1 / 6, 2 / 3, 1 / 6],
                  [1 / 6, 1 / 6, 2 / 3]]), np.full(3, 1 / 3)),
    4: (None, None),  # filled below
}


def _dunavant4():
    a1, b1, w1 = 0.108103018168070, 0.445948490915965, 0.223381589678011
    a2, b2, w2 = 0.816847572980459, 0.091576213509771, 0.109951743655322
    pts = np.array([
        [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
        [a2, b2, b2], [b2, a2, b2], [b2, b2, a2],
    ])
    w = np.array([w1, w1, w1, w2, w2, w2])
    return pts, w / w.sum()


_DUNAVANT[4] = _dunavant4()


@dataclass(frozen=True)
class QuadratureRule:
    """Cell rule: barycentric points (nq, 3) and weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


@dataclass(frozen=True)
class EdgeRule:
    """Edge rule on xi in [-1, 1]: Gauss points and weights summing to 2."""

    xi: np.ndarray
    weights: np.ndarray
    degree: int


def cell_rule(degree: int = 4) -> QuadratureRule:
    """Smallest tabulated rule integrating the requested degree exactly."""
    for d in (1, 2, 4):
        if d >= degree:
            pts, w = _DUNAVANT[d]
            return QuadratureRule(points=pts, weights=w, degree=d)
    raise ValueError(f"no cell rule of degree {degree}")


def edge_rule(degree: int = 3) -> EdgeRule:
    n = max(2, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    return EdgeRule(xi=x, weights=w, degree=2 * n - 1)


class StressSpace:
    """Cellwise-constant symmetric traceless tensors; dofs (xx, xy) per cell."""

    ncomp = 2

    def __init__(self, tri: Triangulation):
        self.tri = tri
        self.n_dofs = 2 * tri.n_cells

    def cell_dofs(self):
        k = np.arange(self.tri.n_cells)
        return np.column_stack([2 * k, 2 * k + 1])

    def as_tensor(self, s) -> SymTensor2:
        s = np.asarray(s).reshape(-1, 2)
        return SymTensor2(s[:, 0], s[:, 1])

    def l2_norm(self, s):
        """Frobenius L2 norm: sqrt(sum_K area * 2*(xx^2 + xy^2))."""
        s = np.asarray(s).reshape(-1, 2)
        return np.sqrt(np.sum(self.tri.cell_areas * 2.0 * (s**2).sum(axis=1)))


class PressureSpace:
    """Cellwise constants; the mass matrix is diag(cell areas)."""

    def __init__(self, tri: Triangulation):
        self.tri = tri
        self.n_dofs = tri.n_cells

    def mean(self, p):
        a = self.tri.cell_areas
        return float(np.dot(a, p) / a.sum())

    def remove_mean(self, p):
        return p - self.mean(p)

    def l2_norm(self, p):
        return np.sqrt(np.sum(self.tri.cell_areas * np.asarray(p) ** 2))


class VelocitySpace:
    """Lowest-order BDM space with facet-moment dofs.

    Global dof layout: facet f owns dofs 2f (mean normal flux) and 2f+1
    (first moment against the facet coordinate xi in [-1, 1]).
    """

    def __init__(self, tri: Triangulation, quad: QuadratureRule | None = None,
                 edges: EdgeRule | None = None):
        self.tri = tri
        self.quad = quad or cell_rule(4)
        self.edges = edges or edge_rule(3)
        self.n_dofs = 2 * tri.n_facets
        self._build_geometry()
        self._build_shapes()
        self._build_traces()

    # -- geometry ---------------------------------------------------------

    def _build_geometry(self):
        tri = self.tri
        p = tri.vertices[tri.cells]  # (m, 3, 2)
        self.cell_vertex_coords = p
        self.centroids = p.mean(axis=1)
        # gradients of barycentric functions: grads[k, j] = grad lambda_j
        e0 = p[:, 2] - p[:, 1]
        e1 = p[:, 0] - p[:, 2]
        e2 = p[:, 1] - p[:, 0]
        twoA = 2.0 * tri.cell_areas
        rot = lambda v: np.column_stack([-v[:, 1], v[:, 0]])
        self.grads = np.stack([rot(e0), rot(e1), rot(e2)], axis=1) / twoA[:, None, None]
        # physical cell quadrature points
        lam = self.quad.points
        self.cell_qpoints = np.einsum("qj,kjd->kqd", lam, p)

    def barycentric(self, cells, points):
        """lambda_j at given points inside given cells; (n, 3)."""
        d = points - self.centroids[cells]
        return 1.0 / 3.0 + np.einsum("njd,nd->nj", self.grads[cells], d)

    # -- shape functions ---------------------------------------------------

    def _build_shapes(self):
        tri = self.tri
        m = tri.n_cells
        ng = self.edges.xi.size
        # facet gauss geometry (global parametrization, lower vertex first)
        fv = tri.facet_vertices
        p0, p1 = tri.vertices[fv[:, 0]], tri.vertices[fv[:, 1]]
        xi = self.edges.xi
        self.facet_gauss = (0.5 * (p0 + p1)[:, None, :]
                            + 0.5 * (p1 - p0)[:, None, :] * xi[:, None])
        # scaled dual-basis values at gauss nodes: rows of the dof functionals
        # dof0(v) = (1/L) int v.n ds = (1/2) sum w_g (v.n)(xi_g)
        # dof1(v) = (3/L) int v.n xi ds = (3/2) sum w_g xi_g (v.n)(xi_g)
        w = self.edges.weights
        self.dof_weights = np.stack([0.5 * w, 1.5 * w * xi])  # (2, ng)

        # local dof l = 2*e + moment for local facet e; global dof
        # 2*facet + moment
        gf = tri.cell_facets
        self.cell_dofs = np.empty((m, 6), dtype=np.int64)
        self.cell_dofs[:, 0::2] = 2 * gf
        self.cell_dofs[:, 1::2] = 2 * gf + 1

        # moment matrix M[k, l, i]: dof l applied to basis field i
        # (i = j + 3c: barycentric j, component c)
        normals = tri.facet_normals[gf]          # (m, 3, 2)
        gauss = self.facet_gauss[gf]             # (m, 3, ng, 2)
        lam_f = np.empty((m, 3, ng, 3))
        d = gauss - self.centroids[:, None, None, :]
        lam_f[:] = 1.0 / 3.0 + np.einsum("kjd,kend->kenj", self.grads, d)
        # moment rows for (facet e, moment t): sum_g dof_weights[t, g] *
        #   lam_f[k, e, g, j] * normals[k, e, c]
        M = np.einsum("tg,kegj,kec->ketjc", self.dof_weights, lam_f, normals)
        M = M.reshape(m, 6, 6)  # rows l = 2e + t, cols i = 2j + c
        self.moment_matrix = M
        C = np.linalg.inv(M)    # columns: shape function coefficients
        # coeffs[k, l, j, c]: coefficient of lambda_j e_c in shape l
        self.coeffs = C.reshape(m, 3, 2, 6).transpose(0, 3, 1, 2)

        # cellwise-constant gradient per shape: grad[k, l, c, d]
        self.shape_grads = np.einsum("kljc,kjd->klcd", self.coeffs, self.grads)
        self.div = self.shape_grads[:, :, 0, 0] + self.shape_grads[:, :, 1, 1]
        # deviatoric symmetric gradient rows (xx, xy): E[k, :, l]
        exx = 0.5 * (self.shape_grads[:, :, 0, 0] - self.shape_grads[:, :, 1, 1])
        exy = 0.5 * (self.shape_grads[:, :, 0, 1] + self.shape_grads[:, :, 1, 0])
        self.dev_sym_grad = np.stack([exx, exy], axis=1)  # (m, 2, 6)

        # shape values at cell quadrature points: (m, nq, l, c)
        lam = self.quad.points
        self.cell_shape_vals = np.einsum("kljc,qj->kqlc", self.coeffs, lam)

    def _build_traces(self):
        """Shape values of adjacent cells at facet gauss points."""
        tri = self.tri
        nf, ng = tri.n_facets, self.edges.xi.size
        self.trace = np.zeros((2, nf, ng, 6, 2))
        for side in (0, 1):
            cells = tri.facet_cells[:, side]
            sel = np.nonzero(cells >= 0)[0]
            k = cells[sel]
            pts = self.facet_gauss[sel]  # (ns, ng, 2)
            d = pts - self.centroids[k][:, None, :]
            lam = 1.0 / 3.0 + np.einsum("njd,ngd->ngj", self.grads[k], d)
            self.trace[side, sel] = np.einsum("nljc,ngj->nglc", self.coeffs[k], lam)

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, v, cells, points):
        """Velocity at physical points lying in the given cells; (n, 2)."""
        lam = self.barycentric(cells, points)
        loc = np.asarray(v)[self.cell_dofs[cells]]  # (n, 6)
        return np.einsum("nljc,nj,nl->nc", self.coeffs[cells], lam, loc)

    def cell_values(self, v):
        """Velocity at all cell quadrature points; (m, nq, 2)."""
        loc = np.asarray(v)[self.cell_dofs]
        return np.einsum("kqlc,kl->kqc", self.cell_shape_vals, loc)

    def divergence(self, v):
        """Cellwise-constant divergence; (m,)."""
        loc = np.asarray(v)[self.cell_dofs]
        return np.einsum("kl,kl->k", self.div, loc)

    def gradient(self, v):
        """Cellwise-constant gradient; (m, 2, 2), index [cell, comp, deriv]."""
        loc = np.asarray(v)[self.cell_dofs]
        return np.einsum("klcd,kl->kcd", self.shape_grads, loc)

    def facet_values(self, v, facets, side):
        """Trace from one side (0 plus, 1 minus) at gauss points; (n, ng, 2)."""
        cells = self.tri.facet_cells[facets, side]
        loc = np.asarray(v)[self.cell_dofs[cells]]
        return np.einsum("nglc,nl->ngc", self.trace[side, facets], loc)

    def normal_trace(self, v, facets):
        """v.n on facets as (mean, moment) pairs straight from the dofs."""
        v = np.asarray(v)
        return v[2 * facets], v[2 * facets + 1]


def broken_sym_gradient(space: VelocitySpace, v) -> SymTensor2:
    """Cellwise-constant deviatoric symmetric gradient of a velocity field.

    The trace part (the divergence) is removed because the stress space the
    scheme pairs against is traceless.

    Returns:
        SymTensor2 with per-cell (xx, xy) component arrays.
    """
    loc = np.asarray(v)[space.cell_dofs]
    exx = np.einsum("kl,kl->k", space.dev_sym_grad[:, 0], loc)
    exy = np.einsum("kl,kl->k", space.dev_sym_grad[:, 1], loc)
    return SymTensor2(exx, exy)


def interpolate_velocity(space: VelocitySpace, func) -> np.ndarray:
    """Canonical interpolation: match both normal-flux moments per facet.

    Args:
        space: velocity space.
        func: callable (n, 2) points -> (n, 2) values.

    Returns:
        dof vector of length space.n_dofs.  Exact for fields with linear
        components.
    """
    tri = space.tri
    vals = func(space.facet_gauss.reshape(-1, 2)).reshape(
        tri.n_facets, space.edges.xi.size, 2)
    vn = np.einsum("fgc,fc->fg", vals, tri.facet_normals)
    dofs = np.einsum("tg,fg->ft", space.dof_weights, vn)
    return dofs.reshape(-1)


def jump_average(space, coeffs, facet: int):
    """Facet jump and average for velocity or stress coefficient vectors.

    For a VelocitySpace: returns ([[v (x) n]] at each facet gauss point as
    (ng, 2, 2), {{v}} at each gauss point as (ng, 2)).  On the boundary the
    one-sided convention [[v (x) n]] = v (x) n, {{v}} = v applies.

    For a StressSpace: returns ([[S]] as SymTensor2, {{S}} as SymTensor2)
    with the plus-minus ordering of the facet.
    """
    tri = space.tri
    kp, km = tri.facet_cells[facet]
    if isinstance(space, VelocitySpace):
        n = tri.facet_normals[facet]
        vp = space.facet_values(coeffs, np.array([facet]), 0)[0]
        if km >= 0:
            vm = space.facet_values(coeffs, np.array([facet]), 1)[0]
            diff = vp - vm
            avg = 0.5 * (vp + vm)
        else:
            diff, avg = vp, vp
        return np.einsum("gc,d->gcd", diff, n), avg
    if isinstance(space, StressSpace):
        s = np.asarray(coeffs).reshape(-1, 2)
        sp = SymTensor2(s[kp, 0], s[kp, 1])
        if km >= 0:
            sm = SymTensor2(s[km, 0], s[km, 1])
            return sp - sm, 0.5 * (sp + sm)
        return sp, sp
    raise TypeError(f"unsupported space {type(space).__name__}")


def dg_norm(space: VelocitySpace, v) -> float:
    """Broken H1-type norm with h^{-1}-weighted tangential jumps.

    ||w||^2 = sum_K |grad w|^2 area + sum_F h_F^{-1} int_F |[[w (x) n]]|^2,
    boundary facets included with the one-sided jump.
    """
    tri = space.tri
    grad = space.gradient(v)
    vol = np.sum(tri.cell_areas * np.einsum("kcd,kcd->k", grad, grad))
    w = space.edges.weights
    interior = tri.interior_facets
    jump_i = (space.facet_values(v, interior, 0)
              - space.facet_values(v, interior, 1))
    boundary = tri.boundary_facets
    jump_b = space.facet_values(v, boundary, 0)
    fac = 0.0
    for facets, jump in ((interior, jump_i), (boundary, jump_b)):
        if facets.size == 0:
            continue
        # |[[w (x) n]]|^2 = |jump|^2; int over facet with ds = (h/2) dxi,
        # then the h^{-1} weight leaves (1/2) sum w_g |jump|^2
        sq = np.einsum("ngc,ngc->ng", jump, jump)
        fac += 0.5 * np.sum(sq @ w)
    return float(np.sqrt(vol + fac))


def piola_map(jacobian, ref_values):
    """Contravariant Piola transform v = J vhat / det J.

    Args:
        jacobian: (2, 2) affine map Jacobian.
        ref_values: (..., 2) reference field values.

    Returns:
        mapped values, same shape.
    """
    det = np.linalg.det(jacobian)
    return np.einsum("cd,...d->...c", jacobian, ref_values) / det
