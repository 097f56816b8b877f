"""Newton and Krylov machinery for the discrete flow system.

The Jacobian has the saddle-point shape

    [ A   B^T ] [ z ]   with z = (stress, velocity) and the pressure rows
    [ B   0   ] [ p ]   holding only the divergence constraint.

Two linear strategies are provided:

  * a direct sparse LU on the full matrix (with one pressure dof pinned
    whenever the boundary conditions leave the pressure only determined up
    to a constant), and
  * restarted GMRES, right-preconditioned by a block factorization built
    around the grad-div (augmented Lagrangian) term: the top block is solved
    by LU and the pressure Schur complement is approximated by
    -(1/gamma) M_p^{-1}, which is exact in the limit of large gamma.

GMRES is implemented here rather than taken from scipy because scipy's
version preconditions from the left, which would entangle the convergence
test with the preconditioner; the acceptance checks count iterations of the
right-preconditioned operator.

Newton uses a backtracking line search on the residual norm and optional
parameter continuation (regularization and Reynolds number schedules) with
warm starts between stages.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Assembler, DiscreteState

__all__ = [
    "NewtonConfig",
    "KrylovConfig",
    "NewtonResult",
    "NewtonError",
    "NewtonMaxIterations",
    "LineSearchFailure",
    "LinearSolverBreakdown",
    "ALPreconditioner",
    "gmres_right",
    "newton_solve",
    "polish_state",
    "continuation_solve",
]


class NewtonError(RuntimeError):
    """Nonlinear solve failure; carries the last iterate for inspection."""

    def __init__(self, message, state=None, history=None):
        super().__init__(message)
        self.state = state
        self.history = history or []


class NewtonMaxIterations(NewtonError):
    pass


class LineSearchFailure(NewtonError):
    pass


class LinearSolverBreakdown(NewtonError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    """Nonlinear iteration controls.

    The backtracking line search accepts a step of size lam once
    ||R(x + lam dx)|| <= (1 - lam/2) ||R(x)||, halving lam down to min_step.

    The absolute tolerance default reflects the residual evaluation floor:
    with grad-div weight gamma ~ 1e4 the matrix-vector roundoff sits near
    1e-9 for unit-scale fields, so demanding less is demanding noise.
    """

    atol: float = 1e-8
    rtol: float = 1e-8
    max_iterations: int = 30
    min_step: float = 1e-8
    verbose: bool = False


@dataclass(frozen=True)
class KrylovConfig:
    """Restarted GMRES controls; tolerance is relative to the rhs norm."""

    rtol: float = 1e-10
    atol: float = 0.0
    restart: int = 100
    max_iterations: int = 1000


@dataclass
class NewtonResult:
    state: DiscreteState
    iterations: int
    residual_norms: list
    linear_iterations: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def converged(self):
        return True


def gmres_right(apply_A, b, apply_M, config: KrylovConfig, x0=None):
    """Restarted GMRES on A M^{-1} y = b, returning x = M^{-1} y.

    Args:
        apply_A: callable vector -> vector for the system operator.
        b: right-hand side.
        apply_M: callable vector -> vector applying the preconditioner
            inverse (right preconditioning: residuals are true residuals).
        config: tolerances, restart length, iteration cap.
        x0: optional initial guess for x.

    Returns:
        (x, iterations) with ||b - A x|| <= max(rtol*||b||, atol).

    Raises:
        LinearSolverBreakdown: if the cap is reached or a non-finite value
            appears.
    """
    n = b.size
    bnorm = np.linalg.norm(b)
    tol = max(config.rtol * bnorm, config.atol)
    if bnorm == 0.0:
        return np.zeros(n), 0
    x = np.zeros(n) if x0 is None else x0.copy()
    total = 0
    while True:
        # every restart (and the final return) re-measures the true
        # residual, so a drifting Arnoldi estimate cannot end the solve early
        r = b - apply_A(x)
        beta = np.linalg.norm(r)
        if beta <= tol:
            return x, total
        if total >= config.max_iterations:
            raise LinearSolverBreakdown(
                f"GMRES cap {config.max_iterations} reached; "
                f"true residual {beta:.3e}, target {tol:.3e}")
        mr = config.restart
        V = np.zeros((mr + 1, n))
        H = np.zeros((mr + 1, mr))
        cs = np.zeros(mr)
        sn = np.zeros(mr)
        g = np.zeros(mr + 1)
        V[0] = r / beta
        g[0] = beta
        k_used = 0
        for k in range(mr):
            w = apply_A(apply_M(V[k]))
            for j in range(k + 1):  # modified Gram-Schmidt
                H[j, k] = w @ V[j]
                w -= H[j, k] * V[j]
            H[k + 1, k] = np.linalg.norm(w)
            if not np.isfinite(H[k + 1, k]):
                raise LinearSolverBreakdown("non-finite Krylov vector")
            if H[k + 1, k] > 0.0:
                V[k + 1] = w / H[k + 1, k]
            # apply stored Givens rotations, then form a new one
            for j in range(k):
                t = cs[j] * H[j, k] + sn[j] * H[j + 1, k]
                H[j + 1, k] = -sn[j] * H[j, k] + cs[j] * H[j + 1, k]
                H[j, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            cs[k] = H[k, k] / denom if denom else 1.0
            sn[k] = H[k + 1, k] / denom if denom else 0.0
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_used = k + 1
            if abs(g[k + 1]) <= tol:
                break
            if total >= config.max_iterations:
                break
        y = np.linalg.solve(np.triu(H[:k_used, :k_used]), g[:k_used])
        x = x + apply_M(V[:k_used].T @ y)


class ALPreconditioner:
    """Block-triangular preconditioner for the grad-div augmented Jacobian.

    With z = (stress, velocity) the inverse applied is

        [ A  B^T ]^{-1}  ~  [ I  -A~^{-1} B^T ] [ A~^{-1}    0    ] [   I    0 ]
        [ B   0  ]          [ 0        I      ] [   0     S~^{-1} ] [ -B A~^{-1}  I ]

    with the Schur complement replaced by S~^{-1} = -gamma M_p^{-1}, which
    is what the grad-div term makes exact as gamma grows.  The top block
    A~^{-1} is a sparse LU of A by default; tests may supply any callable,
    e.g. an exact Schur solve to verify the one-iteration property.
    """

    def __init__(self, assembler: Assembler, jacobian: sp.csr_matrix,
                 top_solver=None, schur_solver=None):
        gamma = assembler.setup.gamma
        if gamma <= 0.0 and schur_solver is None:
            raise ValueError(
                "the Schur approximation -(1/gamma) M_p^{-1} needs gamma > 0")
        self.off_p = assembler.off_p
        self.A = jacobian[:self.off_p, :self.off_p].tocsc()
        self.B = jacobian[self.off_p:, :self.off_p].tocsr()
        self.BT = self.B.T.tocsr()
        if top_solver is None:
            lu = spla.splu(self.A)
            top_solver = lu.solve
        self.top_solver = top_solver
        if schur_solver is None:
            # the grad-div term makes S -> -(1/gamma) M_p, so the inverse
            # approximation is -gamma M_p^{-1}
            diag = -gamma / assembler.tri.cell_areas
            schur_solver = lambda rp: diag * rp
        self.schur_solver = schur_solver

    def apply(self, r: np.ndarray) -> np.ndarray:
        rz, rp = r[:self.off_p], r[self.off_p:]
        wz = self.top_solver(rz)
        yp = rp - self.B @ wz
        wp = self.schur_solver(yp)
        out = np.empty_like(r)
        out[:self.off_p] = wz - self.top_solver(self.BT @ wp)
        out[self.off_p:] = wp
        return out


def _pin_pressure(J: sp.csr_matrix, r: np.ndarray, off_p: int):
    """Replace the first pressure row/column by the identity (gauge fix)."""
    n = J.shape[0]
    keep = np.ones(n)
    keep[off_p] = 0.0
    D = sp.diags(keep)
    J = (D @ J @ D + sp.diags(1.0 - keep)).tocsr()
    r = r.copy()
    r[off_p] = 0.0
    return J, r


def _linear_solve(assembler, J, rhs, linear, krylov, counts):
    """One Newton correction solve; returns dx with true residual <= tol."""
    if linear == "direct":
        if assembler.pressure_gauge_needed:
            J, rhs = _pin_pressure(J, rhs, assembler.off_p)
        try:
            lu = spla.splu(J.tocsc())
        except RuntimeError as exc:
            raise LinearSolverBreakdown(f"sparse LU failed: {exc}") from exc
        dx = lu.solve(rhs)
        # one step of iterative refinement: the grad-div term inflates the
        # condition number by gamma, and the divergence rows must come out
        # near machine precision for the solution to be pointwise solenoidal
        dx += lu.solve(rhs - J @ dx)
        if not np.all(np.isfinite(dx)):
            raise LinearSolverBreakdown("non-finite direct solution")
        counts.append(0)
        return dx
    prec = ALPreconditioner(assembler, J)
    dx, its = gmres_right(lambda u: J @ u, rhs, prec.apply, krylov)
    counts.append(its)
    if assembler.pressure_gauge_needed:
        # remove the constant-pressure component the Krylov solve leaves free
        dx[assembler.off_p:] -= assembler.pressure.mean(dx[assembler.off_p:])
    return dx


def newton_solve(assembler: Assembler, state: DiscreteState | None = None,
                 config: NewtonConfig | None = None,
                 krylov: KrylovConfig | None = None,
                 linear: str = "direct",
                 log=None) -> NewtonResult:
    """Solve the nonlinear system by damped Newton.

    Args:
        assembler: problem assembly on a fixed mesh.
        state: initial iterate; zero fields with Dirichlet data if omitted.
            Strong boundary moments are (re)applied before iterating.
        config: Newton tolerances; defaults are suitable for the studies.
        krylov: GMRES controls, used when linear="gmres".
        linear: "direct" (sparse LU) or "gmres" (AL-preconditioned).
        log: optional callable receiving one dict per iteration.

    Returns:
        NewtonResult, with per-iteration residual norms and Krylov counts.

    Raises:
        NewtonMaxIterations, LineSearchFailure, LinearSolverBreakdown.
    """
    config = config or NewtonConfig()
    krylov = krylov or KrylovConfig()
    if linear not in ("direct", "gmres"):
        raise ValueError(f"unknown linear solver {linear!r}")
    state = assembler.zero_state() if state is None else state.copy()
    assembler.apply_strong_bcs(state)

    t0 = time.perf_counter()
    r = assembler.residual(state)
    rnorm = np.linalg.norm(r)
    history = [rnorm]
    counts = []
    tol = max(config.atol, config.rtol * rnorm)
    it = 0
    while rnorm > tol:
        if it >= config.max_iterations:
            raise NewtonMaxIterations(
                f"no convergence in {config.max_iterations} iterations "
                f"(residual {rnorm:.3e}, target {tol:.3e})",
                state=state, history=history)
        J = assembler.jacobian(state)
        dx = _linear_solve(assembler, J, -r, linear, krylov, counts)
        ds = assembler.unpack(dx)
        lam = 1.0
        while True:
            trial = DiscreteState(state.s + lam * ds.s, state.v + lam * ds.v,
                                  state.p + lam * ds.p)
            r_trial = assembler.residual(trial)
            rnorm_trial = np.linalg.norm(r_trial)
            if rnorm_trial <= (1.0 - 0.5 * lam) * rnorm:
                break
            lam *= 0.5
            if lam < config.min_step:
                raise LineSearchFailure(
                    f"line search stalled at iteration {it} "
                    f"(residual {rnorm:.3e})", state=state, history=history)
        state, r, rnorm = trial, r_trial, rnorm_trial
        history.append(rnorm)
        it += 1
        if log is not None:
            log({"iteration": it, "residual": rnorm, "step": lam,
                 "linear_iterations": counts[-1]})
        if config.verbose:
            print(f"  newton {it:3d}  |R| = {rnorm:.6e}  lam = {lam:g}")
    if assembler.pressure_gauge_needed:
        state.p = state.p - assembler.pressure.mean(state.p)
    return NewtonResult(state=state, iterations=it, residual_norms=history,
                        linear_iterations=counts,
                        wall_time=time.perf_counter() - t0)


def polish_state(assembler, state, max_steps=10, linear="direct",
                 krylov=None):
    """Push an already-converged iterate to its residual floor.

    Takes further full Newton steps until the line search cannot reduce
    the residual norm any more (or max_steps is hit) and returns the best
    iterate.  Stagnation is the expected terminal behaviour here, not a
    failure: at the floor the discrete equations hold as tightly as float
    arithmetic allows.

    Intended for evaluating per-cell identities far below the nonlinear
    tolerance, e.g. the constitutive scatter of a finished study.  Pair
    it with a gamma = 0 assembler: the grad-div term is zero at any
    solenoidal iterate, but its gamma-amplified roundoff otherwise sets
    a floor orders of magnitude above the true one.
    """
    config = NewtonConfig(atol=0.0, rtol=0.0, max_iterations=max_steps)
    try:
        return newton_solve(assembler, state=state, config=config,
                            linear=linear, krylov=krylov).state
    except (NewtonMaxIterations, LineSearchFailure) as exc:
        # every accepted step decreased the norm, so this is the best one;
        # re-center the pressure, which only the normal exit path does
        best = exc.state
        if assembler.pressure_gauge_needed:
            best.p = best.p - assembler.pressure.mean(best.p)
        return best


def continuation_solve(make_assembler, schedule, config=None, krylov=None,
                       linear="direct", log=None, state=None):
    """Warm-started Newton over a parameter schedule.

    Args:
        make_assembler: callable stage-dict -> Assembler; each stage dict is
            passed verbatim (e.g. {"re": 100.0, "eps": 1e-2}).
        schedule: sequence of stage dicts, solved in order.
        config, krylov, linear, log: forwarded to newton_solve.
        state: optional initial iterate for the first stage.

    Returns:
        (final NewtonResult, list of per-stage NewtonResult).

    Raises:
        NewtonError subclasses, annotated with the failing stage.
    """
    results = []
    result = None
    for i, stage in enumerate(schedule):
        assembler = make_assembler(stage)
        try:
            result = newton_solve(assembler, state=state, config=config,
                                  krylov=krylov, linear=linear, log=log)
        except NewtonError as exc:
            raise type(exc)(
                f"continuation stage {i} {stage!r} failed: {exc}",
                state=exc.state, history=exc.history) from exc
        state = result.state
        results.append(result)
    if result is None:
        raise ValueError("empty continuation schedule")
    return result, results
