"""Mean-field drift of an urn scheme on the simplex.

``h(x) = sum_v multinom(v) x^v (R(v) - r(v) x)`` is the expected one-step
increment of the normalised composition.  Its zeros are the candidate
limits; the Jacobian in the chart that drops the last coordinate decides
their stability.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .urn_core import ReplacementRule, check_balance, check_diagonal, enumerate_compositions

SIMPLEX_TOL = 1e-10
STABILITY_TOL = 1e-9
ZERO_RESIDUAL_TOL = 1e-10
DEDUP_TOL = 1e-8


class DiagonalRuleError(ValueError):
    """The drift vanishes identically, so every simplex point is a zero."""


class ZeroSearchWarning(UserWarning):
    pass


class Stability(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    DEGENERATE = "degenerate"


def as_simplex_point(x, d: int | None = None, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate and return ``x`` as a float array on the simplex.

    A bare scalar is read as the first coordinate of a two-colour point.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.array([float(arr), 1.0 - float(arr)])
    if arr.ndim != 1:
        raise ValueError(f"expected a single point, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise ValueError(f"point has {arr.shape[0]} coordinates, expected {d}")
    if arr.min() < -tol or abs(arr.sum() - 1.0) > tol:
        raise ValueError(f"{arr} is not on the simplex")
    return arr


def simplex_grid(d: int, resolution: int) -> np.ndarray:
    """All points with coordinates ``k / resolution``, canonical order."""
    comps = np.array(enumerate_compositions(d, resolution), dtype=np.float64)
    return comps / resolution


def _monomials(rule: ReplacementRule, x: np.ndarray) -> np.ndarray:
    # x: (..., d) -> (..., K) of multinom(v) * prod x_i^v_i
    powers = np.power(x[..., None, :], rule.composition_array)
    return rule.multinomials * np.prod(powers, axis=-1)


def drift_h(rule: ReplacementRule, x) -> np.ndarray:
    """Drift at one point ``(d,)`` or a batch ``(N, d)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != rule.d:
        raise ValueError(f"point dimension {x.shape[-1]} does not match d={rule.d}")
    w = _monomials(rule, x)
    add = rule.additions.astype(np.float64)
    r = rule.row_sums.astype(np.float64)
    # sum_k w_k R_k - (sum_k w_k r_k) x
    return w @ add - (w @ r)[..., None] * x


def _full_jacobian(rule: ReplacementRule, x: np.ndarray) -> np.ndarray:
    """d x d derivative of the polynomial extension of h, (..., d, d)."""
    V = rule.composition_array
    add = rule.additions.astype(np.float64)
    r = rule.row_sums.astype(np.float64)
    w = _monomials(rule, x)
    d = rule.d
    # dw_k/dx_j = multinom * v_kj x_j^(v_kj - 1) prod_{i != j} x_i^v_ki
    dw = np.zeros(x.shape[:-1] + (V.shape[0], d))
    for j in range(d):
        vj = V[:, j]
        reduced = V.copy()
        reduced[:, j] = np.maximum(vj - 1, 0)
        mono = rule.multinomials * np.prod(np.power(x[..., None, :], reduced), axis=-1)
        dw[..., j] = mono * vj
    # d/dx_j [w_k (R_k - r_k x)] = dw_kj (R_k - r_k x) - w_k r_k e_j
    resid = add - r[:, None] * x[..., None, :]  # (..., K, d)
    jac = np.einsum("...kj,...ki->...ij", dw, resid)
    jac -= (w @ r)[..., None, None] * np.eye(d)
    return jac


def jacobian_h(rule: ReplacementRule, x) -> np.ndarray:
    """(d-1) x (d-1) Jacobian of h in the chart ``x_d = 1 - sum_{i<d} x_i``."""
    x = np.asarray(x, dtype=np.float64)
    full = _full_jacobian(rule, x)
    k = rule.d - 1
    return full[..., :k, :k] - full[..., :k, k:]


def tangent_eigenvalues(rule: ReplacementRule, x) -> np.ndarray:
    return np.linalg.eigvals(jacobian_h(rule, x))


def classify_stability(eigenvalues: Sequence[complex], tol: float = STABILITY_TOL) -> Stability:
    re = np.real(np.asarray(eigenvalues))
    if np.all(re < -tol):
        return Stability.STABLE
    if np.any(np.abs(re) <= tol):
        return Stability.DEGENERATE
    return Stability.UNSTABLE


# -- two-colour polynomials -------------------------------------------------


def _require_two_colour(rule: ReplacementRule):
    if rule.d != 2:
        raise ValueError(f"two-colour drift needs d=2, rule has d={rule.d}")


def drift_g(rule: ReplacementRule, x):
    """``g(x) = sum_k C(m,k) x^k (1-x)^(m-k) (a_{m-k} - S x)`` for a balanced rule."""
    _require_two_colour(rule)
    S = check_balance(rule)
    if S is None:
        raise ValueError("g is only defined for balanced rules; use drift_gtilde")
    a, _ = rule.two_colour_coefficients()
    x = np.asarray(x, dtype=np.float64)
    m = rule.m
    total = np.zeros_like(x)
    for k in range(m + 1):
        total = total + math.comb(m, k) * x**k * (1 - x) ** (m - k) * (a[m - k] - S * x)
    return total


def drift_gtilde(rule: ReplacementRule, x):
    """``sum_k C(m,k) x^k (1-x)^(m-k) ((1-x) a_{m-k} - x b_{m-k})``; no balance needed."""
    _require_two_colour(rule)
    a, b = rule.two_colour_coefficients()
    x = np.asarray(x, dtype=np.float64)
    m = rule.m
    total = np.zeros_like(x)
    for k in range(m + 1):
        total = total + math.comb(m, k) * x**k * (1 - x) ** (m - k) * ((1 - x) * a[m - k] - x * b[m - k])
    return total


def gtilde_coefficients(rule: ReplacementRule) -> list[int]:
    """Exact monomial coefficients (lowest degree first) of the two-colour drift.

    Equals ``g`` when the rule is balanced.
    """
    _require_two_colour(rule)
    a, b = rule.two_colour_coefficients()
    m = rule.m
    out = [0] * (m + 2)
    for k in range(m + 1):
        # C(m,k) x^k (1-x)^(m-k) * (a + (-a - b) x)
        base = [0] * (m - k + 1)
        for j in range(m - k + 1):
            base[j] = math.comb(m - k, j) * (-1) ** j
        lin = (int(a[m - k]), -int(a[m - k]) - int(b[m - k]))
        for j, cj in enumerate(base):
            out[k + j] += math.comb(m, k) * cj * lin[0]
            out[k + j + 1] += math.comb(m, k) * cj * lin[1]
    while len(out) > 1 and out[-1] == 0:
        out.pop()
    return out


def _poly_eval(coefs: Sequence[float], x: float) -> float:
    acc = 0.0
    for c in reversed(coefs):
        acc = acc * x + c
    return acc


def _poly_deriv(coefs):
    return [i * c for i, c in enumerate(coefs)][1:] or [0]


def _poly_divmod(num: list[Fraction], den: list[Fraction]):
    num = list(num)
    q = [Fraction(0)] * max(len(num) - len(den) + 1, 1)
    while len(num) >= len(den) and any(num):
        shift = len(num) - len(den)
        f = num[-1] / den[-1]
        q[shift] = f
        for i, c in enumerate(den):
            num[i + shift] -= f * c
        while num and num[-1] == 0:
            num.pop()
    return q, num


def _poly_gcd(p: list[Fraction], q: list[Fraction]) -> list[Fraction]:
    while q and any(q):
        _, r = _poly_divmod(p, q)
        p, q = q, r
    return [c / p[-1] for c in p]


def square_free_part(coefs: Sequence[int]) -> list[Fraction]:
    """``p / gcd(p, p')`` over the rationals, so every root becomes simple."""
    p = [Fraction(c) for c in coefs]
    if len(p) <= 2:
        return p
    dp = [Fraction(c) for c in _poly_deriv(p)]
    g = _poly_gcd(p, dp)
    if len(g) == 1:
        return p
    q, r = _poly_divmod(p, g)
    assert not any(r)
    return q


def _two_colour_roots(coefs: Sequence[int]) -> list[float]:
    sf = square_free_part(coefs)
    if len(sf) < 2:
        return []
    sf_float = [float(c) for c in sf]
    dsf = _poly_deriv(sf_float)
    candidates = np.polynomial.polynomial.polyroots(sf_float)
    roots = []
    for z in candidates:
        if abs(z.imag) > 1e-6 or not (-1e-6 <= z.real <= 1 + 1e-6):
            continue
        x = float(z.real)
        for _ in range(50):
            dx = _poly_eval(sf_float, x) / _poly_eval(dsf, x) if _poly_eval(dsf, x) != 0 else 0.0
            x -= dx
            if abs(dx) <= 1e-17:
                break
        x = min(max(x, 0.0), 1.0)
        if abs(_poly_eval([float(c) for c in coefs], x)) <= 1e-12 * max(1.0, max(abs(c) for c in coefs)):
            roots.append(x)
    roots.sort()
    out: list[float] = []
    for x in roots:
        if not out or abs(x - out[-1]) > DEDUP_TOL:
            out.append(x)
    return out


# -- zeros ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ZeroReport:
    location: np.ndarray
    tangent_eigenvalues: np.ndarray
    stability: Stability
    residual: float

    @property
    def is_stable(self) -> bool:
        return self.stability is Stability.STABLE

    def __repr__(self):
        loc = np.array2string(self.location, precision=10)
        eig = np.array2string(self.tangent_eigenvalues, precision=6)
        return f"ZeroReport({loc}, eig={eig}, {self.stability.value}, residual={self.residual:.1e})"


def _report(rule: ReplacementRule, x: np.ndarray) -> ZeroReport:
    eig = tangent_eigenvalues(rule, x)
    if np.all(np.abs(eig.imag) < 1e-12):
        eig = eig.real
    eig = np.sort_complex(eig.astype(complex)) if np.iscomplexobj(eig) else np.sort(eig)
    residual = float(np.linalg.norm(drift_h(rule, x)))
    return ZeroReport(x, eig, classify_stability(eig), residual)


def _newton_multistart(rule: ReplacementRule, starts: np.ndarray, max_iter: int = 200) -> np.ndarray:
    k = rule.d - 1
    y = starts[:, :k].copy()
    active = np.arange(len(y))
    for _ in range(max_iter):
        ya = y[active]
        x = np.concatenate([ya, 1.0 - ya.sum(axis=1, keepdims=True)], axis=1)
        F = drift_h(rule, x)[:, :k]
        J = jacobian_h(rule, x)
        step = np.einsum("nij,nj->ni", np.linalg.pinv(J, rcond=1e-13), F)
        # starts that wander far off the simplex are abandoned
        ya = np.clip(ya - step, -0.5, 1.5)
        y[active] = ya
        moving = np.abs(step).max(axis=1) > 1e-15
        escaped = np.abs(ya - 0.5).max(axis=1) >= 1.0 - 1e-12
        active = active[moving & ~escaped]
        if active.size == 0:
            break
    return np.concatenate([y, 1.0 - y.sum(axis=1, keepdims=True)], axis=1)


def find_zeros(rule: ReplacementRule, grid_resolution: int = 20) -> list[ZeroReport]:
    """All zeros of the drift on the simplex with their stability.

    Two colours: real roots in [0, 1] of the exact drift polynomial (made
    square-free first).  More colours: Newton from every point of the
    ``grid_resolution`` simplex grid, deduplicated.  Raises
    :class:`DiagonalRuleError` when the drift vanishes identically; warns
    with :class:`ZeroSearchWarning` when no zero is found.
    """
    if check_diagonal(rule) is not None:
        raise DiagonalRuleError("R(v) = sigma v for every v: the drift is identically zero")
    if rule.d == 2:
        coefs = gtilde_coefficients(rule)
        if not any(coefs):
            raise DiagonalRuleError("the two-colour drift polynomial is identically zero")
        points = [np.array([x, 1.0 - x]) for x in _two_colour_roots(coefs)]
    else:
        starts = simplex_grid(rule.d, grid_resolution)
        exact = np.linalg.norm(drift_h(rule, starts), axis=1) == 0.0
        ends = _newton_multistart(rule, starts)
        ends[exact] = starts[exact]
        points = []
        for x in ends:
            if not np.all(np.isfinite(x)) or x.min() < -1e-9:
                continue
            x = np.clip(x, 0.0, None)
            x = x / x.sum()
            points.append(x)
    zeros: list[ZeroReport] = []
    for x in points:
        rep = _report(rule, x)
        if rep.residual > ZERO_RESIDUAL_TOL:
            continue
        dup = next((i for i, z in enumerate(zeros) if np.linalg.norm(z.location - x) <= DEDUP_TOL), None)
        if dup is None:
            zeros.append(rep)
        elif rep.residual < zeros[dup].residual:
            zeros[dup] = rep
    if not zeros:
        warnings.warn("no zero of the drift found on the simplex", ZeroSearchWarning, stacklevel=2)
    zeros.sort(key=lambda z: tuple(-z.location))
    return zeros


# -- Lyapunov certificate -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class LyapunovVerdict:
    certified: bool
    theta: np.ndarray
    offending: np.ndarray  # grid points with <h(x), x - theta> >= -1e-12, theta excluded
    max_value: float  # max of the inner product away from known zeros

    @property
    def verdict(self) -> str:
        return "ConvergenceCertified" if self.certified else "Inconclusive"


def lyapunov_test(
    rule: ReplacementRule,
    theta,
    grid_resolution: int = 200,
    exclusion_radius: float = 1e-6,
    tol: float = 1e-12,
) -> LyapunovVerdict:
    """Grid check that ``<h(x), x - theta>`` is negative off the zeros of h.

    A numerical certificate, not a proof: it inspects the simplex grid of
    the given resolution only.
    """
    theta = as_simplex_point(theta, rule.d)
    if np.linalg.norm(drift_h(rule, theta)) > ZERO_RESIDUAL_TOL:
        raise ValueError(f"{theta} is not a zero of the drift")
    grid = simplex_grid(rule.d, grid_resolution)
    values = np.einsum("ni,ni->n", drift_h(rule, grid), grid - theta)
    known = [theta] + [z.location for z in find_zeros(rule)]
    near_zero = np.zeros(len(grid), dtype=bool)
    for z in known:
        near_zero |= np.linalg.norm(grid - z, axis=1) <= exclusion_radius
    at_theta = np.linalg.norm(grid - theta, axis=1) <= exclusion_radius
    offending = grid[(values >= -tol) & ~at_theta]
    away = values[~near_zero]
    max_value = float(away.max()) if away.size else -np.inf
    return LyapunovVerdict(bool(max_value < -tol), theta, offending, max_value)


# -- flow -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    points: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.points[-1]

    def to_csv(self, path) -> None:
        from .io import write_csv

        d = self.points.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(d)]
        write_csv(path, header, ([t, *row] for t, row in zip(self.times, self.points)))


def flow_integrate(
    rule: ReplacementRule,
    x0,
    horizon: float,
    step_size: float = 1e-2,
) -> Trajectory:
    """Fixed-step RK4 solution of ``x' = h(x)`` in the reduced chart.

    Every step is re-projected onto the simplex; leaving it by more than
    1e-6 raises ``ValueError`` (step size too large).
    """
    if step_size <= 0 or horizon <= 0:
        raise ValueError("step_size and horizon must be positive")
    x = as_simplex_point(x0, rule.d)
    k = rule.d - 1

    def field(y):
        full = np.append(y, 1.0 - y.sum())
        return drift_h(rule, full)[:k]

    n = int(math.ceil(horizon / step_size - 1e-9))
    times = np.empty(n + 1)
    points = np.empty((n + 1, rule.d))
    times[0], points[0] = 0.0, x
    y = x[:k].copy()
    for i in range(1, n + 1):
        dt = min(step_size, horizon - times[i - 1])
        k1 = field(y)
        k2 = field(y + 0.5 * dt * k1)
        k3 = field(y + 0.5 * dt * k2)
        k4 = field(y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        full = np.append(y, 1.0 - y.sum())
        if full.min() < -1e-6:
            raise ValueError(f"trajectory left the simplex at t={times[i - 1] + dt:.4g}; reduce step_size")
        full = np.clip(full, 0.0, None)
        full /= full.sum()
        y = full[:k]
        times[i] = times[i - 1] + dt
        points[i] = full
    return Trajectory(times, points)
