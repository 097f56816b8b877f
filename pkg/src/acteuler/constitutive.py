"""Constitutive relations for activated Euler fluids.

The material flows like an ideal (inviscid) fluid while the shear rate stays
below an activation threshold and like a Navier-Stokes fluid above it.  In
stress form the relation reads

    S = (1/alpha) * [|D| - Eu]_+ * D / |D|,

which is dual, under exchanging S and D, to the Bingham model.  Because the
stress-to-strain-rate direction is single valued it is preferable to work with
the inverse (fluidity) form

    D = alpha_g(|S|) * S,      alpha_g(s) = alpha + Eu / sqrt(s**2 + eps**2),

where eps > 0 regularizes the ideal-fluid branch.  All quantities here are
dimensionless; `nondimensionalize` produces the group values from dimensional
material data.

Tensors are 2x2, symmetric and traceless, so every field is stored by its two
independent components (xx, xy) with yy = -xx implied.  The Frobenius norm of
such a tensor is sqrt(2*xx**2 + 2*xy**2).  Components may be scalars or numpy
arrays of a common shape; every operation broadcasts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SymTensor2",
    "ConstitutiveParams",
    "FourthOrderTangent",
    "frobenius_norm",
    "generalized_fluidity",
    "generalized_fluidity_deriv",
    "d_from_s_regularized",
    "s_from_d_unregularized",
    "s_from_d_regularized",
    "constitutive_tangent",
    "bingham_s_from_d_regularized",
    "bingham_d_from_s_unregularized",
    "nondimensionalize",
    "characteristic_scales",
    "ScalarSolveError",
]


class ScalarSolveError(RuntimeError):
    """Raised when the scalar stress-magnitude solve fails to converge."""


@dataclass
class SymTensor2:
    """Symmetric traceless 2x2 tensor, stored as (xx, xy); yy = -xx.

    Components are floats or numpy arrays of matching shape.
    """

    xx: float | np.ndarray
    xy: float | np.ndarray

    def norm(self):
        """Frobenius norm sqrt(2*xx^2 + 2*xy^2)."""
        return np.sqrt(2.0 * self.xx**2 + 2.0 * self.xy**2)

    def dot(self, other: "SymTensor2"):
        """Full contraction A:B = 2*(axx*bxx + axy*bxy)."""
        return 2.0 * (self.xx * other.xx + self.xy * other.xy)

    def as_matrix(self) -> np.ndarray:
        """Dense 2x2 matrix [[xx, xy], [xy, -xx]] (scalar components only)."""
        return np.array([[self.xx, self.xy], [self.xy, -self.xx]], dtype=float)

    def __add__(self, other):
        return SymTensor2(self.xx + other.xx, self.xy + other.xy)

    def __sub__(self, other):
        return SymTensor2(self.xx - other.xx, self.xy - other.xy)

    def __mul__(self, c):
        return SymTensor2(c * self.xx, c * self.xy)

    __rmul__ = __mul__


def frobenius_norm(xx, xy):
    """Frobenius norm of a symmetric traceless tensor given componentwise."""
    return np.sqrt(2.0 * xx**2 + 2.0 * xy**2)


@dataclass(frozen=True)
class ConstitutiveParams:
    """Dimensionless material and flow groups.

    Attributes:
        alpha: dimensionless fluidity of the activated branch, > 0.
        eu: activation number (threshold group), >= 0.  eu = 0 is Newtonian.
        eps: regularization parameter, > 0.
        re: Reynolds number multiplying the convective term, >= 0.
        ga: body-force group multiplying f, >= 0.
    """

    alpha: float
    eu: float
    eps: float
    re: float = 0.0
    ga: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.eu < 0.0:
            raise ValueError(f"eu must be nonnegative, got {self.eu}")
        if not self.eps > 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.re < 0.0:
            raise ValueError(f"re must be nonnegative, got {self.re}")
        if self.ga < 0.0:
            raise ValueError(f"ga must be nonnegative, got {self.ga}")


@dataclass
class FourthOrderTangent:
    """Derivative of S -> alpha_g(|S|) S as a 2x2 matrix on (xx, xy) components.

    The action on a perturbation dS is mat @ (dS.xx, dS.xy).  As a bilinear
    form in the Frobenius pairing the matrix is symmetric positive definite
    for alpha > 0 (eigenvalue alpha_g across the stress direction and
    alpha + eu*eps^2*(s^2+eps^2)^(-3/2) along it).
    """

    mat: np.ndarray = field(default_factory=lambda: np.eye(2))

    def apply(self, ds: SymTensor2) -> SymTensor2:
        return SymTensor2(
            self.mat[0, 0] * ds.xx + self.mat[0, 1] * ds.xy,
            self.mat[1, 0] * ds.xx + self.mat[1, 1] * ds.xy,
        )

    def as_matrix(self) -> np.ndarray:
        return self.mat


def generalized_fluidity(s_norm, params: ConstitutiveParams):
    """Fluidity alpha_g(s) = alpha + eu / sqrt(s^2 + eps^2).

    Args:
        s_norm: stress magnitude |S| (scalar or array, >= 0).
        params: dimensionless groups.

    Returns:
        alpha_g evaluated at s_norm, same shape as the input.
    """
    return params.alpha + params.eu / np.sqrt(s_norm**2 + params.eps**2)


def generalized_fluidity_deriv(s_norm, params: ConstitutiveParams):
    """d alpha_g / ds = -eu * s * (s^2 + eps^2)^(-3/2)."""
    return -params.eu * s_norm * (s_norm**2 + params.eps**2) ** (-1.5)


def d_from_s_regularized(s: SymTensor2, params: ConstitutiveParams) -> SymTensor2:
    """Strain rate D = alpha_g(|S|) S for the regularized model."""
    ag = generalized_fluidity(s.norm(), params)
    return SymTensor2(ag * s.xx, ag * s.xy)


def s_from_d_unregularized(d: SymTensor2, params: ConstitutiveParams) -> SymTensor2:
    """Sharp stress map S = (1/alpha) [|D| - Eu]_+ D/|D|.

    Returns the zero tensor when |D| <= Eu (no division is attempted there).
    """
    dn = d.norm()
    excess = np.maximum(dn - params.eu, 0.0)
    # safe divide: factor is zero exactly where the excess is zero
    denom = np.where(dn > 0.0, dn, 1.0)
    fac = excess / (params.alpha * denom)
    return SymTensor2(fac * d.xx, fac * d.xy)


def _norm_from_rate_scalar(dn: float, params: ConstitutiveParams) -> float:
    """Root of g(s) = s*alpha_g(s) = dn by safeguarded Newton with bisection.

    g is strictly increasing (g' = alpha + eu*eps^2/(s^2+eps^2)^(3/2) > 0), so
    the root is unique.  Bracket: alpha*s <= g(s) <= alpha*s + eu.
    """
    if dn == 0.0:
        return 0.0
    alpha, eu, eps = params.alpha, params.eu, params.eps
    lo = max((dn - eu) / alpha, 0.0)
    hi = dn / alpha
    s = min(max(dn / (alpha + eu / math.hypot(lo, eps)), lo), hi)
    for _ in range(200):
        r = alpha * s + eu * s / math.hypot(s, eps) - dn
        if r > 0.0:
            hi = s
        else:
            lo = s
        gp = alpha + eu * eps**2 / math.hypot(s, eps) ** 3
        step = r / gp
        s_new = s - step
        if not (lo < s_new < hi):
            s_new = 0.5 * (lo + hi)
        if abs(s_new - s) <= 1e-14 * max(s_new, 1e-300):
            s = s_new
            break
        s = s_new
    resid = alpha * s + eu * s / math.hypot(s, eps) - dn
    # negated form so NaN residuals (non-finite input) also raise
    if not (abs(resid) <= 1e-12 * max(1.0, dn)):
        raise ScalarSolveError(
            f"stress magnitude solve stalled: |D|={dn}, s={s}, residual={resid}"
        )
    return s


def s_from_d_regularized(d: SymTensor2, params: ConstitutiveParams) -> SymTensor2:
    """Invert D = alpha_g(|S|) S for S.

    The inversion reduces to the scalar equation s*alpha_g(s) = |D| for the
    stress magnitude (S is parallel to D); the scalar root is found to
    relative tolerance 1e-14 with a residual check of 1e-12*max(1, |D|).

    Raises:
        ScalarSolveError: if the residual check fails after 200 iterations.
    """
    dn = np.asarray(d.norm(), dtype=float)
    if dn.ndim == 0:
        s_norm = _norm_from_rate_scalar(float(dn), params)
        fac = s_norm / float(dn) if dn > 0.0 else 0.0
    else:
        s_norm = np.array([_norm_from_rate_scalar(v, params) for v in dn.ravel()])
        s_norm = s_norm.reshape(dn.shape)
        fac = np.where(dn > 0.0, s_norm / np.where(dn > 0.0, dn, 1.0), 0.0)
    return SymTensor2(fac * d.xx, fac * d.xy)


def constitutive_tangent(s: SymTensor2, params: ConstitutiveParams) -> FourthOrderTangent:
    """Derivative of the map S -> alpha_g(|S|) S at S.

    d[alpha_g(|S|) S] = alpha_g(|S|) dS + alpha_g'(|S|) (S (x) S)/|S| : dS,
    where the dyadic term contracts as S * (S:dS)/|S|.  At S = 0 the tangent
    is alpha_g(0) * Id (the dyadic part vanishes linearly).

    Returns:
        FourthOrderTangent acting on (xx, xy) components.
    """
    sn = float(s.norm())
    ag = float(generalized_fluidity(sn, params))
    mat = ag * np.eye(2)
    if sn > 0.0:
        agp = float(generalized_fluidity_deriv(sn, params))
        # S:dS = 2*(sxx*dxx + sxy*dxy), so the component matrix gains
        # (2*agp/sn) * outer((sxx, sxy), (sxx, sxy))
        comp = np.array([s.xx, s.xy], dtype=float)
        mat = mat + (2.0 * agp / sn) * np.outer(comp, comp)
    return FourthOrderTangent(mat)


def bingham_s_from_d_regularized(d: SymTensor2, nu: float, sigma: float, eps: float) -> SymTensor2:
    """Bingham stress S = 2*nu*D + sigma*D/sqrt(|D|^2 + eps^2) (Bercovier-Engelman)."""
    dn = d.norm()
    fac = 2.0 * nu + sigma / np.sqrt(dn**2 + eps**2)
    return SymTensor2(fac * d.xx, fac * d.xy)


def bingham_d_from_s_unregularized(s: SymTensor2, nu: float, sigma: float) -> SymTensor2:
    """Bingham flow rule D = (1/(2*nu)) [|S| - sigma]_+ S/|S|; rigid below yield."""
    sn = s.norm()
    excess = np.maximum(sn - sigma, 0.0)
    denom = np.where(sn > 0.0, sn, 1.0)
    fac = excess / (2.0 * nu * denom)
    return SymTensor2(fac * s.xx, fac * s.xy)


def characteristic_scales(alpha_star: float, tau_star: float, eps_star: float,
                          u_c: float, l_c: float) -> tuple[float, float]:
    """Characteristic stress and fluidity from the dimensional material data.

    sigma_c solves gamma_c = alpha_g(sigma_c)*sigma_c with gamma_c = u_c/l_c
    and the dimensional fluidity alpha_g(s) = alpha* + tau*/sqrt(s^2 + eps*^2);
    then alpha_c = alpha_g(sigma_c) = gamma_c/sigma_c.

    Returns:
        (sigma_c, alpha_c).
    """
    if alpha_star <= 0.0:
        raise ValueError("alpha_star must be positive")
    gamma_c = u_c / l_c
    dim = ConstitutiveParams(alpha=alpha_star, eu=tau_star,
                             eps=max(eps_star, 1e-300))
    sigma_c = _norm_from_rate_scalar(gamma_c, dim)
    return sigma_c, gamma_c / sigma_c


def nondimensionalize(rho_star: float, alpha_star: float, tau_star: float,
                      eps_star: float, f_star_mag: float,
                      u_c: float, l_c: float) -> ConstitutiveParams:
    """Form the dimensionless groups from dimensional material/flow data.

    Args:
        rho_star: fluid density.
        alpha_star: fluidity of the activated branch.
        tau_star: activation shear rate.
        eps_star: dimensional regularization stress.
        f_star_mag: body force magnitude.
        u_c, l_c: characteristic speed and length.

    Returns:
        ConstitutiveParams with
        re  = rho* alpha_c l_c u_c,
        alpha = alpha*/alpha_c,
        eu  = tau* l_c / u_c,
        eps = eps* alpha_c l_c / u_c,
        ga  = alpha_c rho* |f*| l_c^2 / u_c.
    """
    sigma_c, alpha_c = characteristic_scales(alpha_star, tau_star, eps_star, u_c, l_c)
    return ConstitutiveParams(
        alpha=alpha_star / alpha_c,
        eu=tau_star * l_c / u_c,
        eps=max(eps_star * alpha_c * l_c / u_c, 1e-300),
        re=rho_star * alpha_c * l_c * u_c,
        ga=alpha_c * rho_star * abs(f_star_mag) * l_c**2 / u_c,
    )
