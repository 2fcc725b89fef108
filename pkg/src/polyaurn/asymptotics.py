"""Fluctuation theory at a zero of the drift.

Balanced schemes: the noise covariance Gamma, the limiting covariance Sigma
from a continuous Lyapunov equation, and the regime picked by comparing the
slowest tangent decay rate Lambda against S/2.  Two-colour non-balanced
schemes: the growth rate omega and the scalar parameters lambda, sigma^2.

Lambda in :class:`CltReport` is the raw eigenvalue of ``-jacobian_h`` (so
it is compared with S/2).  The two-colour helpers report the normalised
slope ``-g'(theta)/S`` instead, which is compared with 1/2.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg

from .drift import (
    STABILITY_TOL,
    ZERO_RESIDUAL_TOL,
    Stability,
    as_simplex_point,
    classify_stability,
    drift_h,
    find_zeros,
    gtilde_coefficients,
    jacobian_h,
)
from .io import write_csv
from .urn_core import ReplacementRule, check_balance

REGIME_TOL = 1e-9
# eigenvector bases worse than this are treated as defective
DEFECTIVE_COND = 1e8


class Regime(enum.Enum):
    GAUSSIAN_SQRT_N = "GaussianSqrtN"
    GAUSSIAN_SQRT_N_OVER_LOG_N = "GaussianSqrtNOverLogN"
    ALMOST_SURE_POWER = "AlmostSurePower"
    DEGENERATE = "Degenerate"

    @property
    def is_gaussian(self) -> bool:
        return self in (Regime.GAUSSIAN_SQRT_N, Regime.GAUSSIAN_SQRT_N_OVER_LOG_N)


def _require_balanced(rule: ReplacementRule) -> int:
    S = check_balance(rule)
    if S is None:
        raise ValueError("rule is not balanced; use non_balanced_params for two colours")
    if S <= 0:
        raise ValueError(f"balance S={S} must be positive for a growing urn")
    return S


def _require_zero(rule: ReplacementRule, theta) -> np.ndarray:
    theta = as_simplex_point(theta, rule.d)
    res = float(np.linalg.norm(drift_h(rule, theta)))
    if res > ZERO_RESIDUAL_TOL:
        raise ValueError(f"theta={theta} is not a zero of h (residual {res:.2e})")
    return theta


def _weights(rule: ReplacementRule, x: np.ndarray) -> np.ndarray:
    powers = np.prod(np.power(x, rule.composition_array), axis=1)
    return rule.multinomials * powers


def gamma_matrix(rule: ReplacementRule, theta) -> np.ndarray:
    """One-step noise covariance ``(1/S^2) sum_v w_v (R(v)-S theta)(R(v)-S theta)^t``."""
    S = _require_balanced(rule)
    theta = _require_zero(rule, theta)
    w = _weights(rule, theta)
    dev = rule.additions.astype(np.float64) - S * theta
    gamma = np.einsum("k,ki,kj->ij", w, dev, dev) / S**2
    return 0.5 * (gamma + gamma.T)


def _lift(reduced: np.ndarray) -> np.ndarray:
    k = reduced.shape[0]
    L = np.vstack([np.eye(k), -np.ones((1, k))])
    return L @ reduced @ L.T


def drift_matrix(rule: ReplacementRule, theta) -> np.ndarray:
    """``A = J/S + Id/2`` in the reduced chart."""
    S = _require_balanced(rule)
    J = jacobian_h(rule, as_simplex_point(theta, rule.d))
    return J / S + 0.5 * np.eye(rule.d - 1)


def lyapunov_residual(A: np.ndarray, X: np.ndarray, G: np.ndarray) -> float:
    """``max |A X + X A^t + G|`` for the orientation solved here."""
    return float(np.abs(A @ X + X @ A.T + G).max())


def _solve_eigen(A: np.ndarray, G: np.ndarray) -> np.ndarray | None:
    vals, V = np.linalg.eig(A)
    if np.linalg.cond(V) > DEFECTIVE_COND:
        return None
    Vinv = np.linalg.inv(V)
    Gt = Vinv @ G @ Vinv.T
    denom = vals[:, None] + vals[None, :]
    X = V @ (-Gt / denom) @ V.T
    return X.real


def lyapunov_quadrature(A: np.ndarray, G: np.ndarray, tail_tol: float = 1e-14) -> np.ndarray:
    """Composite Simpson for ``int_0^inf exp(Au) G exp(A^t u) du``.

    The step is a hundredth of the fastest time scale of ``A`` and the
    integration stops once the integrand norm drops below ``tail_tol``.
    """
    eig = np.linalg.eigvals(A)
    if np.max(eig.real) >= 0:
        raise ValueError("integral diverges: A has an eigenvalue with non-negative real part")
    h = 1.0 / (100.0 * max(np.abs(eig).max(), 1e-12))
    E_h = scipy.linalg.expm(A * h)
    E = np.eye(A.shape[0])
    total = np.zeros_like(G)
    f_prev = G.copy()
    n_pairs = 0
    max_pairs = 5_000_000
    while True:
        E_mid = E @ E_h
        E = E_mid @ E_h
        f_mid = E_mid @ G @ E_mid.T
        f_next = E @ G @ E.T
        total += (h / 3.0) * (f_prev + 4.0 * f_mid + f_next)
        f_prev = f_next
        n_pairs += 1
        if np.abs(f_next).max() < tail_tol:
            break
        if n_pairs >= max_pairs:
            raise RuntimeError("Lyapunov quadrature did not reach its tail tolerance")
    return 0.5 * (total + total.T)


def sigma_matrix(rule: ReplacementRule, theta, *, return_reduced: bool = False):
    """Limiting covariance of ``sqrt(n)(Z_n - theta)`` in full coordinates.

    Solves ``A X + X A^t = -Gamma_red`` in the reduced chart and lifts it
    back so rows and columns sum to zero.  Only defined when every tangent
    eigenvalue of ``-J`` exceeds S/2 in real part.
    """
    S = _require_balanced(rule)
    theta = _require_zero(rule, theta)
    lam = smallest_decay(rule, theta)
    if lam.real <= S / 2 + REGIME_TOL:
        raise ValueError(
            f"Re(Lambda)={lam.real:.6g} <= S/2={S / 2:g}: the covariance integral diverges"
        )
    A = drift_matrix(rule, theta)
    k = rule.d - 1
    G = gamma_matrix(rule, theta)[:k, :k]
    X = _solve_eigen(A, G)
    if X is None or lyapunov_residual(A, X, G) > 1e-10:
        X = lyapunov_quadrature(A, G)
    X = 0.5 * (X + X.T)
    full = _lift(X)
    if return_reduced:
        return full, X
    return full


def smallest_decay(rule: ReplacementRule, theta) -> complex:
    """Eigenvalue of ``-jacobian_h(theta)`` with the smallest real part."""
    eig = -np.linalg.eigvals(jacobian_h(rule, as_simplex_point(theta, rule.d)))
    # ties on the real part are broken toward the non-negative imaginary part
    order = np.lexsort((-eig.imag, eig.real))
    return complex(eig[order[0]]) + 0.0


def regime_for(lam_real: float, S: float, tol: float = REGIME_TOL) -> Regime:
    if lam_real <= tol:
        return Regime.DEGENERATE
    if abs(lam_real - S / 2) <= tol:
        return Regime.GAUSSIAN_SQRT_N_OVER_LOG_N
    if lam_real > S / 2:
        return Regime.GAUSSIAN_SQRT_N
    return Regime.ALMOST_SURE_POWER


def _matrix_to_list(a):
    return None if a is None else np.asarray(a).tolist()


@dataclass(frozen=True, eq=False)
class CltReport:
    theta: np.ndarray
    S: int
    Lambda: complex
    regime: Regime
    Gamma: np.ndarray
    Sigma: np.ndarray | None = None
    power_exponent: float | None = None
    tangent_eigenvalues: np.ndarray = field(default_factory=lambda: np.empty(0))
    lyapunov_residual: float | None = None

    @property
    def normalized_lambda(self) -> complex:
        """``Lambda / S``; the two-colour slope ``-g'(theta)/S``."""
        return self.Lambda / self.S

    def scaling(self, n: float) -> float:
        """Normalisation ``c_n`` turning ``Z_n - theta`` into an O(1) fluctuation."""
        if self.regime is Regime.GAUSSIAN_SQRT_N:
            return math.sqrt(n)
        if self.regime is Regime.GAUSSIAN_SQRT_N_OVER_LOG_N:
            return math.sqrt(n / math.log(n))
        if self.regime is Regime.ALMOST_SURE_POWER:
            return n**self.power_exponent
        raise ValueError("degenerate zero: no rate available")

    def to_dict(self) -> dict[str, Any]:
        return {
            "theta": self.theta.tolist(),
            "S": self.S,
            "Lambda_re": self.Lambda.real,
            "Lambda_im": self.Lambda.imag,
            "regime": self.regime.value,
            "Gamma": _matrix_to_list(self.Gamma),
            "Sigma": _matrix_to_list(self.Sigma),
            "power_exponent": self.power_exponent,
            "lyapunov_residual": self.lyapunov_residual,
        }

    def to_csv(self, path) -> None:
        """One row per matrix entry, row-major: ``quantity, i, j, value``."""
        rows = []
        for name, mat in (("Gamma", self.Gamma), ("Sigma", self.Sigma)):
            if mat is None:
                continue
            d = mat.shape[0]
            rows.extend((name, i + 1, j + 1, float(mat[i, j])) for i in range(d) for j in range(d))
        write_csv(path, ["quantity", "i", "j", "value"], rows)


def classify_regime(rule: ReplacementRule, theta) -> CltReport:
    """Full balanced report at a stable or degenerate zero."""
    S = _require_balanced(rule)
    theta = _require_zero(rule, theta)
    eig = np.linalg.eigvals(jacobian_h(rule, theta))
    if classify_stability(eig) is Stability.UNSTABLE:
        raise ValueError(f"theta={theta} is an unstable zero; no limit theorem applies")
    lam = smallest_decay(rule, theta)
    regime = regime_for(lam.real, S)
    gamma = gamma_matrix(rule, theta)
    sigma = None
    residual = None
    exponent = None
    if regime is Regime.GAUSSIAN_SQRT_N:
        sigma, reduced = sigma_matrix(rule, theta, return_reduced=True)
        k = rule.d - 1
        residual = lyapunov_residual(drift_matrix(rule, theta), reduced, gamma[:k, :k])
    elif regime is Regime.ALMOST_SURE_POWER:
        exponent = lam.real / S
    return CltReport(theta, S, lam, regime, gamma, sigma, exponent, eig, residual)


# -- two colours ----------------------------------------------------------------


@dataclass(frozen=True)
class TwoColourReport:
    theta: float
    S: int
    Lambda: float  # -g'(theta)/S
    Gamma: float
    regime: Regime
    limit_variance: float | None  # Gamma / (2 Lambda - 1), sqrt(n) regime only
    power_exponent: float | None

    def to_dict(self) -> dict[str, Any]:
        out = dict(self.__dict__)
        out["regime"] = self.regime.value
        return out


def _poly_value(coefs, x: float) -> float:
    return float(np.polynomial.polynomial.polyval(x, np.asarray(coefs, dtype=np.float64)))


def _poly_slope(coefs, x: float) -> float:
    c = np.asarray(coefs, dtype=np.float64)
    return float(np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(c)))


def two_colour_clt(rule: ReplacementRule) -> list[TwoColourReport]:
    """Scalar reports at every non-unstable zero of ``g``."""
    if rule.d != 2:
        raise ValueError("two_colour_clt needs d=2")
    S = _require_balanced(rule)
    a, _ = rule.two_colour_coefficients()
    coefs = gtilde_coefficients(rule)
    m = rule.m
    reports = []
    for z in find_zeros(rule):
        if z.stability is Stability.UNSTABLE:
            continue
        t = float(z.location[0])
        lam = -_poly_slope(coefs, t) / S + 0.0
        gamma = float(sum(
            math.comb(m, k) * t**k * (1 - t) ** (m - k) * (a[m - k] - S * t) ** 2 for k in range(m + 1)
        ) / S**2)
        regime = regime_for(lam, 1.0)
        variance = gamma / (2 * lam - 1) if regime is Regime.GAUSSIAN_SQRT_N else None
        exponent = lam if regime is Regime.ALMOST_SURE_POWER else None
        reports.append(TwoColourReport(t, S, lam, gamma, regime, variance, exponent))
    return reports


@dataclass(frozen=True)
class NonBalancedReport:
    theta: float
    omega: float
    lam: float
    sigma2: float
    H: float
    gtilde_slope: float
    clt_variance: float | None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def non_balanced_params(rule: ReplacementRule, theta: float) -> NonBalancedReport:
    """Growth rate and scalar fluctuation parameters for two colours.

    ``omega`` is the binomial average of the row sums at ``theta``,
    ``lam = |gtilde'(theta)| / omega`` and ``sigma2 = H(theta) / omega^2``.
    """
    if rule.d != 2:
        raise ValueError("non_balanced_params needs d=2")
    a, b = rule.two_colour_coefficients()
    c = a + b
    if c.min() < 1:
        raise ValueError(
            f"min row sum is {int(c.min())} < 1: the linear growth of T_n "
            "(liminf T_n/n > 0) cannot be guaranteed, so the limit theorem is not verified"
        )
    theta = float(theta)
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta={theta} outside [0, 1]")
    coefs = gtilde_coefficients(rule)
    value = _poly_value(coefs, theta)
    if abs(value) > ZERO_RESIDUAL_TOL:
        raise ValueError(f"theta={theta} is not a zero of gtilde (value {value:.2e})")
    slope = _poly_slope(coefs, theta)
    if slope > STABILITY_TOL:
        raise ValueError(f"gtilde'({theta}) = {slope:.6g} > 0: theta is repelling")
    m = rule.m
    w = np.array([math.comb(m, k) * theta**k * (1 - theta) ** (m - k) for k in range(m + 1)])
    rev = slice(None, None, -1)  # k white balls drawn uses index m-k
    omega = float(w @ c[rev])
    H = float(w @ ((1 - theta) * a[rev] - theta * b[rev]) ** 2)
    lam = abs(slope) / omega
    sigma2 = H / omega**2
    clt_variance = sigma2 / (2 * lam - 1) if lam > 0.5 and sigma2 > 1e-14 else None
    return NonBalancedReport(theta, omega, lam, sigma2, H, slope, clt_variance)
