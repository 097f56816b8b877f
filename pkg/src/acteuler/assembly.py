"""Discrete residual and Jacobian of the three-field flow system.

Unknowns are stress (cellwise constant, symmetric traceless), velocity
(lowest-order BDM) and pressure (cellwise constant), gathered in a single
vector x = [s, v, p].  All equation terms are kept on the left-hand side:

  stress rows    int D(v):T  - facet jump terms  - int alpha_g(|S|) S:T
  momentum rows  int S:D(w)  - facet jump terms  + delta * tangential penalty
                 - Re int (v x v):grad w  [+ upwind facet terms]
                 - int p div w - Ga int f.w + outflow traction
                 + gamma int div v div w
  pressure rows  - int div v q

D(.) denotes the deviatoric symmetric broken gradient.  Facet jump terms run
over interior and Dirichlet facets; on Dirichlet facets the jump uses
(v - v_D) one-sided.  Natural (outflow) facets carry no jump terms and add
int p_out (w.n), which prescribes the normal traction (S - pI)n = -p_out n.

Velocity Dirichlet data is enforced strongly in the normal component (both
facet moments are set from the data and their rows/columns are replaced by
the identity) and weakly in the tangential component through the penalty.

The stress-velocity coupling block G is assembled once; the momentum block
uses its exact transpose, so the two facet discretizations can never drift
apart.  The grad-div term is assembled cellwise and equals
gamma * B^T M_p^{-1} B because the divergence of the velocity space is
cellwise constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .constitutive import (
    ConstitutiveParams,
    frobenius_norm,
    generalized_fluidity,
    generalized_fluidity_deriv,
)
from .fem import PressureSpace, StressSpace, VelocitySpace
from .mesh import MARKER_CODES, Triangulation

__all__ = [
    "BoundaryConditionError",
    "DirichletBC",
    "NaturalBC",
    "constant_velocity",
    "no_slip",
    "ProblemSetup",
    "DiscreteState",
    "Assembler",
]


class BoundaryConditionError(ValueError):
    """Missing, inconsistent, or incompatible boundary data."""


@dataclass(frozen=True)
class DirichletBC:
    """Velocity data on a boundary marker: callable (n, 2) -> (n, 2)."""

    value: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class NaturalBC:
    """Traction outflow: prescribes (S - pI)n = -exterior_pressure * n."""

    exterior_pressure: float = 0.0


def constant_velocity(ux: float, uy: float = 0.0) -> DirichletBC:
    return DirichletBC(lambda x: np.column_stack(
        [np.full(len(x), float(ux)), np.full(len(x), float(uy))]))


def no_slip() -> DirichletBC:
    return DirichletBC(lambda x: np.zeros_like(x))


@dataclass
class ProblemSetup:
    """Everything that defines a discrete problem besides the mesh.

    Attributes:
        params: dimensionless groups (alpha, eu, eps, re, ga).
        bcs: marker name -> DirichletBC | NaturalBC; every boundary marker
            present in the mesh must be covered.
        body_force: callable (n, 2) -> (n, 2), multiplied by ga.
        delta: tangential jump penalty weight, > 0.
        gamma: grad-div (augmented Lagrangian) weight, >= 0.
        upwind: include the convective facet stabilization terms.
    """

    params: ConstitutiveParams
    bcs: dict
    body_force: Callable[[np.ndarray], np.ndarray] | None = None
    delta: float = 10.0
    gamma: float = 1.0e4
    upwind: bool = True

    def __post_init__(self):
        if not self.delta > 0.0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")


@dataclass
class DiscreteState:
    """Coefficient arrays for one iterate: s (2m,), v (2*n_facets,), p (m,)."""

    s: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def copy(self) -> "DiscreteState":
        return DiscreteState(self.s.copy(), self.v.copy(), self.p.copy())


def _sym_dev_outer(vec_x, vec_y, nx, ny):
    """(xx, xy) components of dev sym (u (x) n) for broadcast arrays."""
    return (0.5 * (vec_x * nx - vec_y * ny),
            0.5 * (vec_x * ny + vec_y * nx))


class Assembler:
    """Residual/Jacobian assembly on one mesh for one problem setup.

    Constant operators (stress-velocity coupling, penalty, grad-div,
    divergence, boundary data vectors) are built once in the constructor;
    per-state calls only evaluate the constitutive and convective terms.
    """

    def __init__(self, tri: Triangulation, setup: ProblemSetup):
        self.tri = tri
        self.setup = setup
        self.stress = StressSpace(tri)
        self.velocity = VelocitySpace(tri)
        self.pressure = PressureSpace(tri)
        self.n_stress = self.stress.n_dofs
        self.n_velocity = self.velocity.n_dofs
        self.n_pressure = self.pressure.n_dofs
        self.off_v = self.n_stress
        self.off_p = self.n_stress + self.n_velocity
        self.n_total = self.off_p + self.n_pressure
        self._classify_boundary()
        self._build_facet_groups()
        self._build_constant_operators()

    # -- boundary handling --------------------------------------------------

    def _classify_boundary(self):
        tri, bcs = self.tri, self.setup.bcs
        names = {code: name for name, code in MARKER_CODES.items()}
        dirichlet, natural, p_out = [], [], []
        for f in tri.boundary_facets:
            name = names.get(int(tri.facet_markers[f]))
            bc = bcs.get(name)
            if bc is None:
                raise BoundaryConditionError(
                    f"boundary marker {name!r} has no boundary condition")
            if isinstance(bc, DirichletBC):
                dirichlet.append(f)
            elif isinstance(bc, NaturalBC):
                natural.append(f)
                p_out.append(bc.exterior_pressure)
            else:
                raise BoundaryConditionError(
                    f"unsupported boundary condition {bc!r} on {name!r}")
        self.dirichlet_facets = np.array(sorted(dirichlet), dtype=np.int64)
        order = np.argsort(natural)
        self.natural_facets = np.array(natural, dtype=np.int64)[order]
        self.natural_pressure = np.array(p_out, dtype=float)[order]

        # Dirichlet gauss values and strong dof data (both normal moments)
        V = self.velocity
        nd = self.dirichlet_facets.size
        ng = V.edges.xi.size
        self.dirichlet_gauss = np.zeros((nd, ng, 2))
        self.dirichlet_values = np.zeros(self.n_velocity)
        if nd:
            pts = V.facet_gauss[self.dirichlet_facets]
            pos = {int(f): i for i, f in enumerate(self.dirichlet_facets)}
            for f in self.dirichlet_facets:
                name = names[int(tri.facet_markers[f])]
                vals = bcs[name].value(pts[pos[int(f)]])
                self.dirichlet_gauss[pos[int(f)]] = vals
            n = tri.facet_normals[self.dirichlet_facets]
            vn = np.einsum("fgc,fc->fg", self.dirichlet_gauss, n)
            moments = np.einsum("tg,fg->ft", V.dof_weights, vn)
            self.dirichlet_values[2 * self.dirichlet_facets] = moments[:, 0]
            self.dirichlet_values[2 * self.dirichlet_facets + 1] = moments[:, 1]
        self.strong_dofs = np.concatenate(
            [2 * self.dirichlet_facets, 2 * self.dirichlet_facets + 1])
        self.strong_dofs.sort()

        self.pressure_gauge_needed = self.natural_facets.size == 0
        if self.pressure_gauge_needed and nd:
            # int v.n over a facet is facet_length * mean moment
            h = tri.facet_lengths[self.dirichlet_facets]
            flux = h * self.dirichlet_values[2 * self.dirichlet_facets]
            scale = max(1.0, np.abs(flux).sum())
            if abs(flux.sum()) > 1e-10 * scale:
                raise BoundaryConditionError(
                    "all-Dirichlet data has net boundary flux "
                    f"{flux.sum():.3e}; the problem is incompatible with "
                    "incompressibility")

    def _facet_group(self, facets, two_sided):
        tri, V = self.tri, self.velocity
        g = SimpleNamespace()
        g.facets = facets
        g.n = facets.size
        g.ng = V.edges.xi.size
        g.nrm = tri.facet_normals[facets]
        h = tri.facet_lengths[facets]
        g.dsw = 0.5 * h[:, None] * V.edges.weights[None, :]
        kp = tri.facet_cells[facets, 0]
        tp = V.trace[0, facets]
        if two_sided:
            km = tri.facet_cells[facets, 1]
            tm = V.trace[1, facets]
            g.dofs = np.concatenate(
                [V.cell_dofs[kp], V.cell_dofs[km]], axis=1)
            g.jump = np.concatenate([tp, -tm], axis=2)  # (n, ng, 12, 2)
            g.avg = 0.5 * np.concatenate([tp, tm], axis=2)
        else:
            g.dofs = V.cell_dofs[kp]
            g.jump = tp
            g.avg = tp
        g.cells_plus = kp
        return g

    def _build_facet_groups(self):
        self._int = self._facet_group(self.tri.interior_facets, True)
        self._dir = self._facet_group(self.dirichlet_facets, False)
        self._nat = self._facet_group(self.natural_facets, False)

    # -- constant operators --------------------------------------------------

    def _coupling_rows(self, group, weight):
        """COO triplets of -weight * int dev sym(jump (x) n) : T per facet."""
        nx, ny = group.nrm[:, 0:1, None], group.nrm[:, 1:2, None]
        sd_xx, sd_xy = _sym_dev_outer(
            group.jump[..., 0], group.jump[..., 1], nx, ny)
        # facet-integrated, contraction factor 2 folded in
        fxx = -weight * 2.0 * np.einsum("fg,fgl->fl", group.dsw, sd_xx)
        fxy = -weight * 2.0 * np.einsum("fg,fgl->fl", group.dsw, sd_xy)
        return fxx, fxy

    def _build_constant_operators(self):
        tri, V = self.tri, self.velocity
        m = tri.n_cells
        area = tri.cell_areas
        w_edge = V.edges.weights
        delta = self.setup.delta

        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(np.asarray(r).ravel())
            cols.append(np.asarray(c).ravel())
            vals.append(np.asarray(v).ravel())

        # volume part of G: 2 area E[k, comp, l]
        cell_rows = np.stack([2 * np.arange(m), 2 * np.arange(m) + 1], axis=1)
        E = V.dev_sym_grad  # (m, 2, 6)
        add(np.repeat(cell_rows, 6, axis=1),
            np.tile(V.cell_dofs, (1, 2)),
            2.0 * area[:, None, None] * E)

        # facet parts of G
        for group, weight, sides in ((self._int, 0.5, 2), (self._dir, 1.0, 1)):
            if group.n == 0:
                continue
            fxx, fxy = self._coupling_rows(group, weight)
            kp = group.cells_plus
            L = group.dofs.shape[1]
            for comp, fc in ((0, fxx), (1, fxy)):
                add(np.repeat(2 * kp + comp, L), group.dofs, fc)
                if sides == 2:
                    km = tri.facet_cells[group.facets, 1]
                    add(np.repeat(2 * km + comp, L), group.dofs, fc)
        self.G = sp.coo_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_stress, self.n_velocity)).tocsr()
        self.G_T = self.G.T.tocsr()

        # tangential-jump penalty (both components; the normal part is inert
        # because the normal moments are enforced strongly)
        rows, cols, vals = [], [], []
        for group in (self._int, self._dir):
            if group.n == 0:
                continue
            pen = 0.5 * delta * np.einsum(
                "g,fglc,fgmc->flm", w_edge, group.jump, group.jump)
            add(group.dofs[:, :, None] * np.ones_like(group.dofs[:, None, :]),
                group.dofs[:, None, :] * np.ones_like(group.dofs[:, :, None]),
                pen)
        self.P_pen = sp.coo_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_velocity, self.n_velocity)).tocsr()

        # grad-div blocks, unscaled: area * div (x) div per cell
        gd = area[:, None, None] * V.div[:, :, None] * V.div[:, None, :]
        self.GD = sp.coo_matrix(
            (gd.ravel(),
             ((V.cell_dofs[:, :, None]
               * np.ones((1, 1, 6), dtype=np.int64)).ravel(),
              (V.cell_dofs[:, None, :]
               * np.ones((1, 6, 1), dtype=np.int64)).ravel())),
            shape=(self.n_velocity, self.n_velocity)).tocsr()

        # divergence against pressure: B[k, dof] = area * div
        self.B = sp.coo_matrix(
            ((area[:, None] * V.div).ravel(),
             (np.repeat(np.arange(m), 6), V.cell_dofs.ravel())),
            shape=(self.n_pressure, self.n_velocity)).tocsr()
        self.B_T = self.B.T.tocsr()

        # constant stress-row data from Dirichlet values
        self.g_data = np.zeros(self.n_stress)
        if self._dir.n:
            g = self._dir
            nx, ny = g.nrm[:, 0:1], g.nrm[:, 1:2]
            sd_xx, sd_xy = _sym_dev_outer(
                self.dirichlet_gauss[..., 0], self.dirichlet_gauss[..., 1],
                nx, ny)
            kp = g.cells_plus
            np.add.at(self.g_data, 2 * kp,
                      2.0 * np.einsum("fg,fg->f", g.dsw, sd_xx))
            np.add.at(self.g_data, 2 * kp + 1,
                      2.0 * np.einsum("fg,fg->f", g.dsw, sd_xy))

        # constant momentum-row vector: -penalty data + outflow traction
        # - body force
        self.const_v = np.zeros(self.n_velocity)
        if self._dir.n:
            g = self._dir
            pen_data = 0.5 * delta * np.einsum(
                "g,fgc,fglc->fl", w_edge, self.dirichlet_gauss, g.jump)
            np.subtract.at(self.const_v, g.dofs.ravel(), pen_data.ravel())
        if self._nat.n:
            g = self._nat
            wn = np.einsum("fglc,fc->fgl", g.jump, g.nrm)
            tract = self.natural_pressure[:, None] * np.einsum(
                "fg,fgl->fl", g.dsw, wn)
            np.add.at(self.const_v, g.dofs.ravel(), tract.ravel())
        params = self.setup.params
        if self.setup.body_force is not None and params.ga > 0.0:
            fv = self.setup.body_force(
                V.cell_qpoints.reshape(-1, 2)).reshape(m, -1, 2)
            fl = np.einsum("q,kqc,kqlc->kl", V.quad.weights, fv,
                           V.cell_shape_vals)
            np.subtract.at(self.const_v, V.cell_dofs.ravel(),
                           (params.ga * area[:, None] * fl).ravel())

    # -- state handling -------------------------------------------------------

    def zero_state(self) -> DiscreteState:
        """All-zero fields with the strong Dirichlet moments applied."""
        state = DiscreteState(np.zeros(self.n_stress),
                              np.zeros(self.n_velocity),
                              np.zeros(self.n_pressure))
        return self.apply_strong_bcs(state)

    def apply_strong_bcs(self, state: DiscreteState) -> DiscreteState:
        state.v[self.strong_dofs] = self.dirichlet_values[self.strong_dofs]
        return state

    def pack(self, state: DiscreteState) -> np.ndarray:
        return np.concatenate([state.s, state.v, state.p])

    def unpack(self, x: np.ndarray) -> DiscreteState:
        return DiscreteState(x[:self.off_v].copy(),
                             x[self.off_v:self.off_p].copy(),
                             x[self.off_p:].copy())

    # -- residual -------------------------------------------------------------

    def residual(self, state: DiscreteState) -> np.ndarray:
        params = self.setup.params
        area = self.tri.cell_areas
        s2 = state.s.reshape(-1, 2)
        sn = frobenius_norm(s2[:, 0], s2[:, 1])
        ag = generalized_fluidity(sn, params)

        r_s = self.G @ state.v + self.g_data
        r_s -= (2.0 * area * ag)[:, None].repeat(2, axis=1).ravel() * state.s

        r_v = self.G_T @ state.s + self.P_pen @ state.v + self.const_v
        r_v -= self.B_T @ state.p
        if self.setup.gamma:
            r_v += self.setup.gamma * (self.GD @ state.v)
        if params.re > 0.0:
            r_v += self._convective_residual(state.v)
        r_v[self.strong_dofs] = (state.v[self.strong_dofs]
                                 - self.dirichlet_values[self.strong_dofs])

        r_p = -(self.B @ state.v)
        return np.concatenate([r_s, r_v, r_p])

    def _convective_residual(self, v: np.ndarray) -> np.ndarray:
        re = self.setup.params.re
        V = self.velocity
        area = self.tri.cell_areas
        r = np.zeros(self.n_velocity)

        vals = V.cell_values(v)  # (m, nq, 2)
        t2 = np.einsum("q,kqi,kqj->kij", V.quad.weights, vals, vals)
        rloc = -re * area[:, None] * np.einsum(
            "kij,klij->kl", t2, V.shape_grads)
        r += np.bincount(V.cell_dofs.ravel(), weights=rloc.ravel(),
                         minlength=self.n_velocity)
        if not self.setup.upwind:
            return r

        g = self._int
        if g.n:
            vloc = v[g.dofs]
            jump = np.einsum("fglc,fl->fgc", g.jump, vloc)
            avg = np.einsum("fglc,fl->fgc", g.avg, vloc)
            phi = np.einsum("fgc,fc->fg", avg, g.nrm)  # v.n, single valued
            rf = re * np.einsum("fg,fgc,fglc->fl", g.dsw * phi, avg, g.jump)
            rf += 0.5 * re * np.einsum("fg,fgc,fglc->fl",
                                       g.dsw * np.abs(phi), jump, g.jump)
            r += np.bincount(g.dofs.ravel(), weights=rf.ravel(),
                             minlength=self.n_velocity)
        g = self._dir
        if g.n:
            vloc = v[g.dofs]
            tr = np.einsum("fglc,fl->fgc", g.jump, vloc)
            phi = np.einsum("fgc,fc->fg", tr, g.nrm)
            up = np.where((phi >= 0.0)[..., None], tr, self.dirichlet_gauss)
            rf = re * np.einsum("fg,fgc,fglc->fl", g.dsw * phi, up, g.jump)
            r += np.bincount(g.dofs.ravel(), weights=rf.ravel(),
                             minlength=self.n_velocity)
        g = self._nat
        if g.n:
            vloc = v[g.dofs]
            tr = np.einsum("fglc,fl->fgc", g.jump, vloc)
            phi = np.einsum("fgc,fc->fg", tr, g.nrm)
            rf = re * np.einsum("fg,fgc,fglc->fl", g.dsw * phi, tr, g.jump)
            r += np.bincount(g.dofs.ravel(), weights=rf.ravel(),
                             minlength=self.n_velocity)
        return r

    # -- Jacobian -------------------------------------------------------------

    def _tangent_blocks(self, s2: np.ndarray) -> np.ndarray:
        """d(alpha_g(|S|) S)/dS as (m, 2, 2) component blocks."""
        params = self.setup.params
        sn = frobenius_norm(s2[:, 0], s2[:, 1])
        ag = generalized_fluidity(sn, params)
        agp = generalized_fluidity_deriv(sn, params)
        safe = np.where(sn > 0.0, sn, 1.0)
        fac = np.where(sn > 0.0, 2.0 * agp / safe, 0.0)
        blocks = ag[:, None, None] * np.eye(2)[None, :, :]
        blocks += fac[:, None, None] * np.einsum("ki,kj->kij", s2, s2)
        return blocks

    def _block_coo(self, dofs, blocks, shape):
        """Sparse matrix from per-entity dense blocks on shared dof lists."""
        L = dofs.shape[1]
        r = np.broadcast_to(dofs[:, :, None], (dofs.shape[0], L, L))
        c = np.broadcast_to(dofs[:, None, :], (dofs.shape[0], L, L))
        return sp.coo_matrix(
            (blocks.ravel(), (r.ravel(), c.ravel())), shape=shape)

    def _convective_jacobian(self, v: np.ndarray) -> sp.csr_matrix:
        re = self.setup.params.re
        V = self.velocity
        area = self.tri.cell_areas
        shape = (self.n_velocity, self.n_velocity)

        vals = V.cell_values(v)
        sv = V.cell_shape_vals  # (m, nq, 6, 2)
        wq = V.quad.weights
        blk = np.einsum("q,kqmi,kqj,klij->klm", wq, sv, vals, V.shape_grads)
        blk += np.einsum("q,kqi,kqmj,klij->klm", wq, vals, sv, V.shape_grads)
        parts = [self._block_coo(V.cell_dofs,
                                 -re * area[:, None, None] * blk, shape)]
        if not self.setup.upwind:
            return sum(parts).tocsr()

        g = self._int
        if g.n:
            vloc = v[g.dofs]
            jump = np.einsum("fglc,fl->fgc", g.jump, vloc)
            avg = np.einsum("fglc,fl->fgc", g.avg, vloc)
            phi = np.einsum("fgc,fc->fg", avg, g.nrm)
            an = np.einsum("fglc,fc->fgl", g.avg, g.nrm)  # d phi / d v_m
            jl_avg = np.einsum("fgc,fglc->fgl", avg, g.jump)
            jl_jmp = np.einsum("fgc,fglc->fgl", jump, g.jump)
            blk = np.einsum("fg,fgl,fgm->flm", g.dsw, jl_avg, an)
            blk += np.einsum("fg,fglc,fgmc->flm", g.dsw * phi, g.jump, g.avg)
            blk += 0.5 * np.einsum("fg,fgl,fgm->flm",
                                   g.dsw * np.sign(phi), jl_jmp, an)
            blk += 0.5 * np.einsum("fg,fglc,fgmc->flm",
                                   g.dsw * np.abs(phi), g.jump, g.jump)
            parts.append(self._block_coo(g.dofs, re * blk, shape))
        g = self._dir
        if g.n:
            vloc = v[g.dofs]
            tr = np.einsum("fglc,fl->fgc", g.jump, vloc)
            phi = np.einsum("fgc,fc->fg", tr, g.nrm)
            inflow_mask = (phi >= 0.0).astype(float)
            up = np.where((phi >= 0.0)[..., None], tr, self.dirichlet_gauss)
            an = np.einsum("fglc,fc->fgl", g.jump, g.nrm)
            jl_up = np.einsum("fgc,fglc->fgl", up, g.jump)
            blk = np.einsum("fg,fgl,fgm->flm", g.dsw, jl_up, an)
            blk += np.einsum("fg,fglc,fgmc->flm",
                             g.dsw * phi * inflow_mask, g.jump, g.jump)
            parts.append(self._block_coo(g.dofs, re * blk, shape))
        g = self._nat
        if g.n:
            vloc = v[g.dofs]
            tr = np.einsum("fglc,fl->fgc", g.jump, vloc)
            phi = np.einsum("fgc,fc->fg", tr, g.nrm)
            an = np.einsum("fglc,fc->fgl", g.jump, g.nrm)
            jl_tr = np.einsum("fgc,fglc->fgl", tr, g.jump)
            blk = np.einsum("fg,fgl,fgm->flm", g.dsw, jl_tr, an)
            blk += np.einsum("fg,fglc,fgmc->flm", g.dsw * phi, g.jump, g.jump)
            parts.append(self._block_coo(g.dofs, re * blk, shape))
        return sum(parts).tocsr()

    def jacobian(self, state: DiscreteState) -> sp.csr_matrix:
        params = self.setup.params
        area = self.tri.cell_areas
        m = self.tri.n_cells
        s2 = state.s.reshape(-1, 2)

        blocks = -2.0 * area[:, None, None] * self._tangent_blocks(s2)
        dofs_s = np.column_stack([2 * np.arange(m), 2 * np.arange(m) + 1])
        M_C = self._block_coo(dofs_s, blocks,
                              (self.n_stress, self.n_stress)).tocsr()

        J_vv = self.P_pen
        if self.setup.gamma:
            J_vv = J_vv + self.setup.gamma * self.GD
        if params.re > 0.0:
            J_vv = J_vv + self._convective_jacobian(state.v)

        J = sp.bmat([[M_C, self.G, None],
                     [self.G_T, J_vv, -self.B_T],
                     [None, -self.B, None]], format="csr")

        # strong rows/columns become the identity; the state carries the data
        keep = np.ones(self.n_total)
        keep[self.off_v + self.strong_dofs] = 0.0
        D_keep = sp.diags(keep)
        D_strong = sp.diags(1.0 - keep)
        return (D_keep @ J @ D_keep + D_strong).tocsr()
