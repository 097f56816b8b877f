"""Independent oracles and convergence studies.

Two oracles back the acceptance checks:

  * ChannelOracle: unidirectional flow between walls at y = +-H driven by a
    uniform body force (G, 0).  The 1D momentum balance fixes the shear
    stress component s(y) = -G y exactly; the velocity follows by
    integrating the regularized constitutive relation,

        u(y) = int_|y|^H 2 (alpha + Eu / sqrt(2 (G t)^2 + eps^2)) G t dt,

    evaluated by adaptive quadrature (and, in tests, cross-checked against
    a fixed Gauss rule and the closed form).  The oracle uses the same eps
    as the solver so comparisons isolate discretization error.
  * ManufacturedCase: a divergence-free velocity from a stream function
    vanishing to second order on the unit-square boundary, a zero-mean
    pressure, the exact stress, and the body force that balances the
    momentum equation, all computed symbolically.  Restricted to Eu = 0,
    where the stress map has the closed form S = D/alpha; activated cases
    are covered by the channel oracle instead.

convergence_study runs either case over a mesh sequence and fits
least-squares orders for the velocity (L2 and jump-penalized DG norm),
stress (L2) and pressure (L2) errors.  Error sequences at rounding level
are reported with order NaN rather than a meaningless fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import sympy
from scipy.integrate import quad

from .assembly import Assembler, DirichletBC, ProblemSetup
from .constitutive import ConstitutiveParams
from .fem import VelocitySpace, cell_rule, interpolate_velocity
from .mesh import generate_rectangle
from .solver import NewtonConfig, continuation_solve, newton_solve

__all__ = [
    "ChannelOracle",
    "ManufacturedCase",
    "ConvergenceReport",
    "convergence_study",
    "interpolation_study",
]

# errors below this are rounding noise; fitting a slope to them is
# meaningless and the order is reported as NaN
ROUNDING_FLOOR = 1e-11


@dataclass(frozen=True)
class ChannelOracle:
    """Semi-analytic unidirectional flow between no-slip walls.

    Attributes:
        g_force: body force magnitude G (also the pressure-gradient
            equivalent); must be positive.
        params: dimensionless groups; re is ignored (the 1D solution is
            independent of the convective term).
        half_width: wall position H.
    """

    g_force: float
    params: ConstitutiveParams
    half_width: float = 1.0

    def shear_stress(self, y):
        """Exact stress component s(y) = -G y (the xy entry; xx is zero)."""
        return -self.g_force * np.asarray(y, dtype=float)

    def _du(self, t):
        """|u'(t)| integrand: 2 alpha_g(|S(t)|) G t with |S| = sqrt(2) G t."""
        s_norm = math.sqrt(2.0) * self.g_force * t
        ag = self.params.alpha + self.params.eu / math.hypot(
            s_norm, self.params.eps)
        return 2.0 * ag * self.g_force * t

    def velocity(self, y):
        """u(y) by adaptive quadrature to 1e-12 (absolute and relative)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.empty_like(y)
        for i, yi in enumerate(y):
            lo = min(abs(yi), self.half_width)
            val, _ = quad(self._du, lo, self.half_width,
                          epsabs=1e-12, epsrel=1e-12, limit=300)
            out[i] = val
        return out if out.size > 1 else float(out[0])

    def velocity_fixed_gauss(self, y, n_points=40):
        """u(y) by a composite fixed Gauss rule (independent route).

        Panels refine geometrically toward t = 0 where the integrand turns
        over on the scale eps / (sqrt(2) G).
        """
        xi, w = np.polynomial.legendre.leggauss(n_points)
        layer = self.params.eps / (math.sqrt(2.0) * self.g_force)
        breaks = [self.half_width]
        t = layer
        while t < self.half_width:
            breaks.append(t)
            t *= 4.0
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.empty_like(y)
        for i, yi in enumerate(y):
            lo = min(abs(yi), self.half_width)
            pts = sorted({lo, self.half_width}
                         | {b for b in breaks if lo < b < self.half_width})
            total = 0.0
            for a, b in zip(pts[:-1], pts[1:]):
                t = 0.5 * (a + b) + 0.5 * (b - a) * xi
                vals = np.array([self._du(tj) for tj in t])
                total += 0.5 * (b - a) * np.dot(w, vals)
            out[i] = total
        return out if out.size > 1 else float(out[0])

    def velocity_closed_form(self, y):
        """Antiderivative in closed form, for cross-checking the quadrature."""
        g, h = self.g_force, self.half_width
        alpha, eu, eps = self.params.alpha, self.params.eu, self.params.eps
        y = np.abs(np.asarray(y, dtype=float))
        return (alpha * g * (h**2 - y**2)
                + (eu / g) * (np.sqrt(2.0 * g**2 * h**2 + eps**2)
                              - np.sqrt(2.0 * g**2 * y**2 + eps**2)))

    def profile(self):
        """Velocity data callable for Dirichlet boundaries."""
        def func(x):
            u = self.velocity(x[:, 1])
            return np.column_stack([np.atleast_1d(u), np.zeros(len(x))])
        return func

    def exact_velocity(self, x):
        return self.profile()(x)

    def exact_gradient(self, x):
        """Velocity gradient [[0, u'(y)], [0, 0]] at points (n, 2)."""
        y = x[:, 1]
        du = np.array([math.copysign(self._du(abs(yi)), -yi) for yi in y])
        g = np.zeros((len(x), 2, 2))
        g[:, 0, 1] = du
        return g

    def exact_stress(self, x):
        """(xx, xy) stress components at points (n, 2)."""
        s = self.shear_stress(x[:, 1])
        return np.column_stack([np.zeros_like(s), s])

    def exact_pressure(self, x):
        return np.zeros(len(x))


class ManufacturedCase:
    """Symbolically manufactured Newtonian solution on the unit square.

    The stream function sin(pi x)^2 sin(pi y)^2 / pi vanishes to second
    order on the boundary, so the velocity is divergence-free with exact
    no-slip data; the pressure sin(2 pi x) sin(2 pi y) has zero mean.  The
    body force balances -div S + Re (v.grad) v + grad p = Ga f with
    S = D(v)/alpha.

    Raises:
        ValueError: if params.eu != 0 (no closed stress form) or
            params.ga <= 0 (the force term would be switched off).
    """

    def __init__(self, params: ConstitutiveParams):
        if params.eu != 0.0:
            raise ValueError(
                "manufactured forcing needs the Newtonian closed form; "
                "use the channel oracle for activated cases")
        if params.ga <= 0.0:
            raise ValueError("manufactured forcing needs ga > 0")
        self.params = params
        x, y = sympy.symbols("x y", real=True)
        psi = sympy.sin(sympy.pi * x) ** 2 * sympy.sin(sympy.pi * y) ** 2 \
            / sympy.pi
        u = sympy.diff(psi, y)
        v = -sympy.diff(psi, x)
        p = sympy.sin(2 * sympy.pi * x) * sympy.sin(2 * sympy.pi * y)
        dxx = sympy.diff(u, x)
        dxy = (sympy.diff(u, y) + sympy.diff(v, x)) / 2
        sxx = dxx / params.alpha
        sxy = dxy / params.alpha
        # stress divergence rows use yy = -xx
        div_s = (sympy.diff(sxx, x) + sympy.diff(sxy, y),
                 sympy.diff(sxy, x) - sympy.diff(sxx, y))
        conv = (u * sympy.diff(u, x) + v * sympy.diff(u, y),
                u * sympy.diff(v, x) + v * sympy.diff(v, y))
        fx = (-div_s[0] + params.re * conv[0] + sympy.diff(p, x)) / params.ga
        fy = (-div_s[1] + params.re * conv[1] + sympy.diff(p, y)) / params.ga
        mods = ["numpy"]
        self._vel = sympy.lambdify((x, y), (u, v), modules=mods)
        self._grad = sympy.lambdify(
            (x, y), (sympy.diff(u, x), sympy.diff(u, y),
                     sympy.diff(v, x), sympy.diff(v, y)), modules=mods)
        self._stress = sympy.lambdify((x, y), (sxx, sxy), modules=mods)
        self._pressure = sympy.lambdify((x, y), p, modules=mods)
        self._force = sympy.lambdify((x, y), (fx, fy), modules=mods)

    def exact_velocity(self, pts):
        u, v = self._vel(pts[:, 0], pts[:, 1])
        return np.column_stack([np.broadcast_to(u, len(pts)),
                                np.broadcast_to(v, len(pts))])

    def exact_gradient(self, pts):
        ux, uy, vx, vy = self._grad(pts[:, 0], pts[:, 1])
        g = np.empty((len(pts), 2, 2))
        g[:, 0, 0], g[:, 0, 1] = ux, uy
        g[:, 1, 0], g[:, 1, 1] = vx, vy
        return g

    def exact_stress(self, pts):
        sxx, sxy = self._stress(pts[:, 0], pts[:, 1])
        return np.column_stack([np.broadcast_to(sxx, len(pts)),
                                np.broadcast_to(sxy, len(pts))])

    def exact_pressure(self, pts):
        return np.asarray(self._pressure(pts[:, 0], pts[:, 1]), dtype=float)

    def body_force(self, pts):
        fx, fy = self._force(pts[:, 0], pts[:, 1])
        return np.column_stack([np.broadcast_to(fx, len(pts)),
                                np.broadcast_to(fy, len(pts))])

    def dirichlet(self) -> DirichletBC:
        return DirichletBC(self.exact_velocity)


# -- error norms --------------------------------------------------------------

def velocity_l2_error(space, v, exact):
    tri = space.tri
    vals = space.cell_values(v)
    ex = exact(space.cell_qpoints.reshape(-1, 2)).reshape(vals.shape)
    err2 = np.einsum("q,kqc->k", space.quad.weights, (vals - ex) ** 2)
    return float(np.sqrt(np.sum(tri.cell_areas * err2)))


def velocity_dg_error(space, v, exact, exact_grad):
    """Broken H1 error plus h^{-1}-weighted jumps of (v_h - v_exact).

    The exact field is continuous, so interior jumps are those of v_h; on
    boundary facets the one-sided jump uses the exact trace as data.
    """
    tri = space.tri
    gh = space.gradient(v)  # cellwise constant
    gex = exact_grad(space.cell_qpoints.reshape(-1, 2)).reshape(
        tri.n_cells, -1, 2, 2)
    diff = gh[:, None, :, :] - gex
    vol = np.sum(tri.cell_areas * np.einsum(
        "q,kqcd->k", space.quad.weights, diff**2))
    w = space.edges.weights
    fac = 0.0
    interior = tri.interior_facets
    if interior.size:
        jump = (space.facet_values(v, interior, 0)
                - space.facet_values(v, interior, 1))
        fac += 0.5 * np.sum(np.einsum("ngc,ngc->ng", jump, jump) @ w)
    boundary = tri.boundary_facets
    if boundary.size:
        pts = space.facet_gauss[boundary].reshape(-1, 2)
        jump = space.facet_values(v, boundary, 0) - exact(pts).reshape(
            boundary.size, -1, 2)
        fac += 0.5 * np.sum(np.einsum("ngc,ngc->ng", jump, jump) @ w)
    return float(np.sqrt(vol + fac))


def stress_l2_error(space, s, exact):
    tri = space.tri
    rule = cell_rule(4)
    pts = np.einsum("qj,kjd->kqd", rule.points, tri.vertices[tri.cells])
    ex = exact(pts.reshape(-1, 2)).reshape(tri.n_cells, -1, 2)
    sh = np.asarray(s).reshape(-1, 2)
    diff = sh[:, None, :] - ex
    # Frobenius convention: |T|^2 = 2 (xx^2 + xy^2)
    err2 = 2.0 * np.einsum("q,kqc->k", rule.weights, diff**2)
    return float(np.sqrt(np.sum(tri.cell_areas * err2)))


def pressure_l2_error(space, p, exact):
    tri = space.tri
    rule = cell_rule(4)
    pts = np.einsum("qj,kjd->kqd", rule.points, tri.vertices[tri.cells])
    ex = exact(pts.reshape(-1, 2)).reshape(tri.n_cells, -1)
    diff = np.asarray(p)[:, None] - ex
    err2 = np.einsum("q,kq->k", rule.weights, diff**2)
    return float(np.sqrt(np.sum(tri.cell_areas * err2)))


# -- studies -------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    """Mesh sizes, error sequences per field, and fitted orders.

    orders[field] is the least-squares slope of log error against log h;
    NaN when the errors sit at rounding level.  monotone[field] records
    whether the sequence decreases strictly.
    """

    hs: np.ndarray
    errors: dict = field(default_factory=dict)
    orders: dict = field(default_factory=dict)
    monotone: dict = field(default_factory=dict)

    def fit(self):
        logh = np.log(self.hs)
        for name, errs in self.errors.items():
            errs = np.asarray(errs)
            if np.max(errs) < ROUNDING_FLOOR:
                self.orders[name] = float("nan")
                self.monotone[name] = True
                continue
            self.orders[name] = float(np.polyfit(
                logh, np.log(np.maximum(errs, 1e-300)), 1)[0])
            self.monotone[name] = bool(np.all(np.diff(errs) < 0.0))
        return self

    def summary_lines(self):
        lines = []
        for name in self.errors:
            errs = " ".join(f"{e:.6e}" for e in self.errors[name])
            lines.append(f"{name}: errors [{errs}] order "
                         f"{self.orders[name]:.3f}")
        return lines


def _solve_manufactured(case: ManufacturedCase, n, gamma, delta):
    tri = generate_rectangle(n, n)
    bc = case.dirichlet()
    setup = ProblemSetup(
        params=case.params,
        bcs={"inflow": bc, "outflow": bc, "wall": bc},
        body_force=case.body_force, gamma=gamma, delta=delta)
    asm = Assembler(tri, setup)
    result = newton_solve(asm)
    return asm, result.state


def _solve_channel(oracle: ChannelOracle, n, gamma, delta):
    tri = generate_rectangle(n, n, x_range=(0.0, 2.0),
                             y_range=(-oracle.half_width, oracle.half_width))
    profile = oracle.profile()
    force = lambda x: np.column_stack([np.ones(len(x)), np.zeros(len(x))])

    def make(stage):
        params = ConstitutiveParams(
            oracle.params.alpha, oracle.params.eu, stage["eps"],
            ga=oracle.g_force)
        setup = ProblemSetup(
            params=params,
            bcs={"inflow": DirichletBC(profile),
                 "outflow": DirichletBC(profile),
                 "wall": DirichletBC(profile)},
            body_force=force, gamma=gamma, delta=delta)
        return Assembler(tri, setup)

    eps = oracle.params.eps
    if oracle.params.eu > 0.0:
        schedule = [{"eps": e} for e in (1e-1, 1e-2) if e > eps]
        schedule.append({"eps": eps})
    else:
        schedule = [{"eps": eps}]
    result, _ = continuation_solve(make, schedule)
    final = make(schedule[-1])
    return final, result.state


def convergence_study(case, levels, gamma=1e4, delta=10.0) -> ConvergenceReport:
    """Solve on a mesh sequence and fit error orders per field.

    Args:
        case: ManufacturedCase or ChannelOracle.
        levels: cells-per-side sequence, at least 3 entries.
        gamma, delta: stabilization weights forwarded to every level.

    Returns:
        ConvergenceReport with velocity_l2, velocity_dg, stress_l2,
        pressure_l2 error sequences and fitted orders.
    """
    if len(levels) < 3:
        raise ValueError("a convergence study needs at least 3 levels")
    if isinstance(case, ChannelOracle):
        solve = lambda n: _solve_channel(case, n, gamma, delta)
    elif hasattr(case, "dirichlet") and hasattr(case, "body_force"):
        solve = lambda n: _solve_manufactured(case, n, gamma, delta)
    else:
        raise TypeError(f"unsupported case {type(case).__name__}")
    errors = {"velocity_l2": [], "velocity_dg": [],
              "stress_l2": [], "pressure_l2": []}
    hs = []
    for n in levels:
        asm, state = solve(n)
        errors["velocity_l2"].append(velocity_l2_error(
            asm.velocity, state.v, case.exact_velocity))
        errors["velocity_dg"].append(velocity_dg_error(
            asm.velocity, state.v, case.exact_velocity, case.exact_gradient))
        errors["stress_l2"].append(stress_l2_error(
            asm.stress, state.s, case.exact_stress))
        errors["pressure_l2"].append(pressure_l2_error(
            asm.pressure, state.p, case.exact_pressure))
        hs.append(1.0 / n)
    return ConvergenceReport(hs=np.array(hs), errors=errors).fit()


def interpolation_study(case, levels) -> ConvergenceReport:
    """Approximation-only study: canonical interpolant, no solve."""
    errors = {"velocity_l2": []}
    hs = []
    for n in levels:
        tri = generate_rectangle(n, n)
        V = VelocitySpace(tri)
        v = interpolate_velocity(V, case.exact_velocity)
        errors["velocity_l2"].append(velocity_l2_error(
            V, v, case.exact_velocity))
        hs.append(1.0 / n)
    return ConvergenceReport(hs=np.array(hs), errors=errors).fit()
