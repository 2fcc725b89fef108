"""Reproducible ensembles of urn trajectories and the diagnostics that
compare them with the analytic predictions.

Replication ``r`` draws its uniforms from
``PCG64(SeedSequence(entropy=seed, spawn_key=(r,)))``, one variate per
step, so every trajectory depends only on ``(seed, r)`` and never on how
replications are spread over threads.  Only checkpoint snapshots are kept.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from . import _kernel
from .asymptotics import CltReport, NonBalancedReport, Regime, TwoColourReport
from .drift import as_simplex_point, drift_h
from .io import write_csv
from .urn_core import (
    ReplacementRule,
    SamplingMode,
    UrnState,
    check_balance,
    draw_probabilities,
    enumerate_compositions,
    _inverse_cdf,
)

CHUNK = 1 << 16
THREADS_ENV = "POLYAURN_THREADS"


def default_checkpoints(n_steps: int) -> tuple[int, ...]:
    """``{floor(n_steps / 2^k) >= 1}``, ascending; always contains ``n_steps``."""
    pts = set()
    n = n_steps
    while n >= 1:
        pts.add(n)
        n //= 2
    return tuple(sorted(pts))


def geometric_checkpoints(start: int, ratio: float, stop: int) -> tuple[int, ...]:
    pts = []
    x = float(start)
    while x <= stop * (1 + 1e-12):
        pts.append(int(round(x)))
        x *= ratio
    return tuple(sorted(set(pts)))


def replication_generator(seed: int, rep: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(rep,))
    return np.random.Generator(np.random.PCG64(ss))


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV}={raw!r} is not an integer") from None
        if value >= 1:
            return value
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {value}")
    return os.cpu_count() or 1


@dataclass(frozen=True)
class EnsembleConfig:
    rule: ReplacementRule
    initial: UrnState
    mode: SamplingMode = SamplingMode.WITH_REPLACEMENT
    n_steps: int = 100_000
    n_reps: int = 1000
    seed: int = 0
    checkpoints: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", SamplingMode.parse(self.mode))
        if self.initial.d != self.rule.d:
            raise ValueError(f"initial state has {self.initial.d} colours, rule has {self.rule.d}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.n_reps < 1:
            raise ValueError(f"n_reps must be >= 1, got {self.n_reps}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.mode is SamplingMode.WITHOUT_REPLACEMENT and self.initial.total < self.rule.m:
            raise ValueError("initial urn holds fewer balls than one draw without replacement")
        ck = default_checkpoints(self.n_steps) if self.checkpoints is None else tuple(int(c) for c in self.checkpoints)
        if list(ck) != sorted(set(ck)):
            raise ValueError("checkpoints must be strictly increasing")
        if not ck or ck[0] < 1 or ck[-1] > self.n_steps:
            raise ValueError(f"checkpoints must lie in [1, {self.n_steps}]")
        if ck[-1] != self.n_steps:
            ck = ck + (self.n_steps,)
        object.__setattr__(self, "checkpoints", ck)


@dataclass(frozen=True)
class RepFailure:
    rep: int
    step: int
    counts: tuple[int, ...]
    draw: tuple[int, ...]
    kind: str

    def __str__(self):
        return f"rep {self.rep}: {self.kind} at step {self.step} (draw {self.draw} from {self.counts})"


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    config: EnsembleConfig
    counts: np.ndarray  # (n_reps, n_ckpt, d) int64 snapshots
    failures: tuple[RepFailure, ...] = ()

    @property
    def checkpoints(self) -> np.ndarray:
        return np.asarray(self.config.checkpoints)

    @property
    def ok(self) -> np.ndarray:
        """Mask of replications that ran to completion."""
        mask = np.ones(self.counts.shape[0], dtype=bool)
        for f in self.failures:
            mask[f.rep] = False
        return mask

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=2)

    @property
    def compositions(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.counts / self.totals[..., None]

    @property
    def terminal(self) -> np.ndarray:
        """Terminal compositions of the completed replications."""
        return self.compositions[self.ok, -1]

    @property
    def terminal_totals(self) -> np.ndarray:
        return self.totals[self.ok, -1]

    def checkpoint_index(self, n: int) -> int:
        idx = np.searchsorted(self.checkpoints, n)
        if idx >= len(self.checkpoints) or self.checkpoints[idx] != n:
            raise KeyError(f"step {n} is not a checkpoint")
        return int(idx)

    def summary(self) -> list[dict]:
        comp = self.compositions[self.ok]
        growth = self.totals[self.ok] / self.checkpoints[None, :]
        out = []
        for j, n in enumerate(self.checkpoints):
            z = comp[:, j]
            cov = np.cov(z, rowvar=False, ddof=1) if len(z) > 1 else np.zeros((z.shape[1],) * 2)
            out.append(
                {
                    "n": int(n),
                    "mean": z.mean(axis=0),
                    "cov": np.atleast_2d(cov),
                    "mean_T_over_n": float(growth[:, j].mean()),
                    "var_T_over_n": float(growth[:, j].var(ddof=1)) if len(z) > 1 else 0.0,
                }
            )
        return out

    def to_terminal_csv(self, path) -> None:
        d = self.config.rule.d
        header = ["rep"] + [f"Z_{i + 1}" for i in range(d)] + ["T_n"]
        comp = self.compositions[:, -1]
        tot = self.totals[:, -1]
        ok = self.ok
        rows = (
            [r, *(float(x) for x in comp[r]), int(tot[r])]
            for r in range(self.counts.shape[0])
            if ok[r]
        )
        write_csv(path, header, rows)

    def to_summary_csv(self, path) -> None:
        d = self.config.rule.d
        header = (
            ["n"]
            + [f"mean_{i + 1}" for i in range(d)]
            + [f"cov_{i + 1}_{j + 1}" for i in range(d) for j in range(d)]
            + ["mean_T_over_n"]
        )
        rows = (
            [s["n"], *(float(x) for x in s["mean"]), *(float(x) for x in s["cov"].ravel()), s["mean_T_over_n"]]
            for s in self.summary()
        )
        write_csv(path, header, rows)


def _rule_arrays(rule: ReplacementRule):
    return (
        np.ascontiguousarray(rule.composition_array, dtype=np.int64),
        np.ascontiguousarray(rule.multinomials, dtype=np.float64),
        np.ascontiguousarray(rule.additions, dtype=np.int64),
    )


_KINDS = {_kernel.NEGATIVE: "negative count", _kernel.EMPTY: "empty urn", _kernel.OVERFLOW: "64-bit overflow"}


def _run_rep(config: EnsembleConfig, arrays, rep: int, out: np.ndarray):
    comps, coefs, adds = arrays
    rule = config.rule
    gen = replication_generator(config.seed, rep)
    counts = np.array(config.initial.counts, dtype=np.int64)
    ckpts = np.asarray(config.checkpoints, dtype=np.int64)
    probs = np.empty(comps.shape[0])
    without = config.mode is SamplingMode.WITHOUT_REPLACEMENT
    done = 0
    pos = 0
    while done < config.n_steps:
        size = min(CHUNK, config.n_steps - done)
        u = gen.random(size)
        status, steps, pos, chosen = _kernel.advance(
            counts, comps, coefs, adds, without, u, done, ckpts, pos, out, probs
        )
        if status != _kernel.OK:
            out[pos:] = -1
            return RepFailure(rep, done + steps + 1, tuple(int(c) for c in counts),
                              rule.compositions[chosen], _KINDS[status])
        done += steps
    return None


def run_ensemble(config: EnsembleConfig, threads: int | None = None) -> EnsembleResult:
    """Simulate ``config.n_reps`` independent trajectories.

    A replication that hits an impossible configuration stops there; its
    later snapshots are filled with -1 and it is listed in
    ``result.failures``.
    """
    threads = default_threads() if threads is None else int(threads)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    arrays = _rule_arrays(config.rule)
    snapshots = np.zeros((config.n_reps, len(config.checkpoints), config.rule.d), dtype=np.int64)

    def work(rep):
        return _run_rep(config, arrays, rep, snapshots[rep])

    if threads == 1 or config.n_reps == 1:
        failures = [work(r) for r in range(config.n_reps)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            failures = list(pool.map(work, range(config.n_reps)))
    return EnsembleResult(config, snapshots, tuple(f for f in failures if f is not None))


def reference_trajectory(config: EnsembleConfig, rep: int = 0) -> np.ndarray:
    """Pure-Python replay of replication ``rep`` through the ``urn_core`` step law.

    Returns the counts at every checkpoint; slow, meant for cross-checks.
    """
    from .urn_core import step

    gen = replication_generator(config.seed, rep)
    state = config.initial
    out = []
    ck = set(config.checkpoints)
    done = 0
    while done < config.n_steps:
        u = gen.random(min(CHUNK, config.n_steps - done))
        for x in u:
            state = step(state, config.rule, config.mode, _FixedUniform(x))
            done += 1
            if done in ck:
                out.append(state.counts)
    return np.array(out, dtype=np.int64)


class _FixedUniform:
    """Stand-in generator returning a preset uniform."""

    def __init__(self, u: float):
        self._u = u

    def random(self):
        return self._u


# -- diagnostics ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LimitEstimate:
    candidates: np.ndarray
    frequencies: np.ndarray
    unassigned: float
    assignment: np.ndarray  # candidate index per completed rep, -1 if none
    radius: float

    @property
    def assigned(self) -> float:
        return float(self.frequencies.sum())


def estimate_limits(result: EnsembleResult, candidates: Sequence, radius: float = 0.05) -> LimitEstimate:
    d = result.config.rule.d
    cand = np.array([as_simplex_point(c, d) for c in candidates])
    if len(cand) == 0:
        raise ValueError("no candidate limits given")
    for i in range(len(cand)):
        for j in range(i + 1, len(cand)):
            if np.linalg.norm(cand[i] - cand[j]) <= 2 * radius:
                raise ValueError(f"candidates {cand[i]} and {cand[j]} are closer than 2 x radius={radius}")
    term = result.terminal
    dist = np.linalg.norm(term[:, None, :] - cand[None, :, :], axis=2)
    nearest = dist.argmin(axis=1)
    assignment = np.where(dist[np.arange(len(term)), nearest] <= radius, nearest, -1)
    n = max(len(term), 1)
    freqs = np.array([(assignment == i).sum() / n for i in range(len(cand))])
    return LimitEstimate(cand, freqs, float((assignment == -1).sum() / n), assignment, radius)


@dataclass(frozen=True, eq=False)
class CltComparison:
    empirical: np.ndarray
    predicted: np.ndarray | None
    max_abs_deviation: float | None
    scaling: str
    n: int
    n_assigned: int
    mean: np.ndarray
    quantile_cov: np.ndarray  # tail-insensitive estimate, see quantile_covariance

    def within(self, rel: float, floor: float = 0.0, robust: bool = False) -> bool:
        if self.predicted is None:
            raise ValueError("no prediction to compare against")
        emp = self.quantile_cov if robust else self.empirical
        tol = np.maximum(rel * np.abs(self.predicted), floor)
        return bool(np.all(np.abs(emp - self.predicted) <= tol))

    def max_rel_deviation(self, floor: float = 0.0) -> float:
        scale = np.maximum(np.abs(self.predicted), floor)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.abs(self.empirical - self.predicted) / scale
        return float(np.nanmax(r))


MIN_CLT_SAMPLE = 100
_IQR_NORMAL = 2 * ndtri(0.75)


def quantile_covariance(s) -> np.ndarray:
    """Covariance of a Gaussian sample recovered from interquartile ranges.

    Variances of the coordinates and of their pairwise sums are read off
    as ``(IQR / 1.349)^2``; a few far-out replications (late arrivals at
    the limit) move this far less than they move ``np.cov``.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        s = s[:, None]

    def qvar(x):
        lo, hi = np.percentile(x, [25, 75])
        return ((hi - lo) / _IQR_NORMAL) ** 2

    k = s.shape[1]
    c = np.empty((k, k))
    for i in range(k):
        c[i, i] = qvar(s[:, i])
    for i in range(k):
        for j in range(i + 1, k):
            c[i, j] = c[j, i] = 0.5 * (qvar(s[:, i] + s[:, j]) - c[i, i] - c[j, j])
    return c


def _prediction(report, d: int):
    """Predicted covariance in full coordinates and the scaling label."""
    if isinstance(report, CltReport):
        if report.regime is Regime.GAUSSIAN_SQRT_N:
            return report.Sigma, "sqrt(n)"
        if report.regime is Regime.GAUSSIAN_SQRT_N_OVER_LOG_N:
            # two colours only: the scalar limit variance is Gamma itself
            pred = report.Gamma if d == 2 else None
            return pred, "sqrt(n/log n)"
        raise ValueError(f"clt_check needs a Gaussian regime, got {report.regime.value}")
    if isinstance(report, TwoColourReport):
        if report.regime is Regime.GAUSSIAN_SQRT_N:
            v = report.limit_variance
        elif report.regime is Regime.GAUSSIAN_SQRT_N_OVER_LOG_N:
            v = report.Gamma
        else:
            raise ValueError(f"clt_check needs a Gaussian regime, got {report.regime.value}")
        label = "sqrt(n)" if report.regime is Regime.GAUSSIAN_SQRT_N else "sqrt(n/log n)"
        return v * np.array([[1.0, -1.0], [-1.0, 1.0]]), label
    if isinstance(report, NonBalancedReport):
        if report.clt_variance is None:
            raise ValueError("no Gaussian limit: lambda <= 1/2 or sigma^2 = 0")
        return report.clt_variance * np.array([[1.0, -1.0], [-1.0, 1.0]]), "sqrt(n)"
    raise TypeError(f"unsupported report type {type(report).__name__}")


def clt_check(result: EnsembleResult, theta, report, radius: float = 0.05) -> CltComparison:
    """Empirical covariance of ``c_n (Z_n - theta)`` over reps that ended near ``theta``."""
    d = result.config.rule.d
    theta = as_simplex_point(theta, d)
    predicted, label = _prediction(report, d)
    n = int(result.checkpoints[-1])
    term = result.terminal
    near = np.linalg.norm(term - theta, axis=1) <= radius
    if near.sum() < MIN_CLT_SAMPLE:
        raise ValueError(f"only {int(near.sum())} replications near theta; need {MIN_CLT_SAMPLE}")
    c_n = math.sqrt(n) if label == "sqrt(n)" else math.sqrt(n / math.log(n))
    s = c_n * (term[near] - theta)
    emp = np.atleast_2d(np.cov(s, rowvar=False, ddof=1))
    dev = None if predicted is None else float(np.abs(emp - predicted).max())
    return CltComparison(emp, predicted, dev, label, n, int(near.sum()), s.mean(axis=0), quantile_covariance(s))


def _require_geometric(ck: np.ndarray, rtol: float = 0.01):
    if len(ck) < 3:
        raise ValueError("need at least three checkpoints")
    ratios = ck[1:] / ck[:-1]
    if np.any(np.abs(ratios / ratios.mean() - 1) > rtol):
        raise ValueError(f"checkpoints {ck.tolist()} are not geometric")


@dataclass(frozen=True, eq=False)
class RateDiagnostic:
    exponent: float
    checkpoints: np.ndarray
    ranges: np.ndarray  # per rep, spread of the last three scaled deviations
    median_range: float
    median_magnitude: float
    threshold: float

    @property
    def ratio(self) -> float:
        return self.median_range / self.median_magnitude if self.median_magnitude > 0 else math.inf

    @property
    def stabilized(self) -> bool:
        return self.ratio < self.threshold


def as_rate_check(
    result: EnsembleResult,
    theta,
    exponent: float,
    min_step: int = 100,
    threshold: float = 0.2,
) -> RateDiagnostic:
    """Does ``n^exponent (Z_n - theta)`` settle down along geometric checkpoints?

    Uses every checkpoint >= ``min_step``; these must form a geometric
    sequence.
    """
    d = result.config.rule.d
    theta = as_simplex_point(theta, d)
    ck = result.checkpoints
    sel = np.nonzero(ck >= min_step)[0]
    _require_geometric(ck[sel].astype(float))
    comp = result.compositions[result.ok][:, sel]
    v = (ck[sel].astype(float) ** exponent)[None, :, None] * (comp - theta)
    last = v[:, -3:]
    spread = np.zeros(len(last))
    for i in range(3):
        for j in range(i + 1, 3):
            spread = np.maximum(spread, np.linalg.norm(last[:, i] - last[:, j], axis=1))
    mag = np.linalg.norm(v[:, -1], axis=1)
    return RateDiagnostic(exponent, ck[sel], spread, float(np.median(spread)), float(np.median(mag)), threshold)


@dataclass(frozen=True)
class GrowthCheck:
    omega: float
    empirical: float
    deviation: float
    std_error: float


def total_growth_check(result: EnsembleResult, omega: float) -> GrowthCheck:
    g = result.terminal_totals / result.checkpoints[-1]
    se = float(g.std(ddof=1) / math.sqrt(len(g))) if len(g) > 1 else 0.0
    return GrowthCheck(float(omega), float(g.mean()), float(abs(g.mean() - omega)), se)


@dataclass(frozen=True, eq=False)
class NonConvergenceDiagnostic:
    checkpoints: np.ndarray
    ranges: np.ndarray
    median_range: float
    threshold: float

    @property
    def triggered(self) -> bool:
        return self.median_range >= self.threshold


def non_convergence_diagnostic(result: EnsembleResult, threshold: float = 0.1) -> NonConvergenceDiagnostic:
    """Per-rep spread of Z over the checkpoints of the last decade of steps."""
    ck = result.checkpoints
    sel = np.nonzero(ck >= ck[-1] / 10)[0]
    comp = result.compositions[result.ok][:, sel]
    ranges = (comp.max(axis=1) - comp.min(axis=1)).max(axis=1)
    return NonConvergenceDiagnostic(ck[sel], ranges, float(np.median(ranges)), threshold)


@dataclass(frozen=True, eq=False)
class DiagonalConvergence:
    pairs: np.ndarray  # (n, 2n) checkpoint pairs
    median_differences: np.ndarray

    @property
    def final(self) -> float:
        return float(self.median_differences[-1])

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.median_differences) <= 0))


def diagonal_convergence(result: EnsembleResult, min_step: int = 100) -> DiagonalConvergence:
    """Median ``||Z_2n - Z_n||`` over reps for every checkpoint pair (n, 2n)."""
    ck = result.checkpoints.tolist()
    pos = {n: i for i, n in enumerate(ck)}
    pairs = [(n, 2 * n) for n in ck if n >= min_step and 2 * n in pos]
    if not pairs:
        raise ValueError("no checkpoint pairs (n, 2n)")
    comp = result.compositions[result.ok]
    med = [float(np.median(np.linalg.norm(comp[:, pos[b]] - comp[:, pos[a]], axis=1))) for a, b in pairs]
    return DiagonalConvergence(np.array(pairs), np.array(med))


def decay_exponent(result: EnsembleResult, theta, min_step: int = 100) -> float:
    """Least-squares slope of ``log median ||Z_n - theta||`` against ``log n``.

    Exploratory only: no limit theorem backs a rate at degenerate zeros.
    """
    theta = as_simplex_point(theta, result.config.rule.d)
    ck = result.checkpoints
    sel = ck >= min_step
    comp = result.compositions[result.ok][:, sel]
    med = np.median(np.linalg.norm(comp - theta, axis=2), axis=0)
    keep = med > 0
    slope = np.polyfit(np.log(ck[sel][keep]), np.log(med[keep]), 1)[0]
    return float(-slope)


@dataclass(frozen=True, eq=False)
class RecursionResiduals:
    mean: np.ndarray  # empirical mean of the realised residuals
    std_error: np.ndarray
    max_scaled_bias: float  # max_n T_n T_{n+1} ||E[residual | F_n]||
    n_steps: int

    @property
    def z_scores(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.std_error > 0, self.mean / self.std_error, 0.0)


def recursion_residuals(
    rule: ReplacementRule,
    initial: UrnState,
    mode: SamplingMode | str,
    n_steps: int,
    seed: int = 0,
) -> RecursionResiduals:
    """Residuals ``Z_{n+1} - Z_n - h(Z_n)/T_{n+1}`` along one balanced trajectory.

    Also evaluates their exact conditional mean at every visited state:
    zero when drawing with replacement, of order ``1/(T_n T_{n+1})``
    without replacement.
    """
    mode = SamplingMode.parse(mode)
    S = check_balance(rule)
    if S is None:
        raise ValueError("the recursion is written for balanced rules")
    gen = replication_generator(seed, 0)
    comps = enumerate_compositions(rule.d, rule.m)
    add = rule.additions.astype(np.float64)
    state = initial
    residuals = np.empty((n_steps, rule.d))
    worst = 0.0
    for n in range(n_steps):
        z = state.composition()
        T = state.total
        h = drift_h(rule, z)
        probs = draw_probabilities(state, rule.m, mode)
        k = _inverse_cdf(probs, gen.random())
        new_counts = tuple(c + int(a) for c, a in zip(state.counts, rule.entries[comps[k]]))
        nxt = UrnState(new_counts, state.step + 1)
        residuals[n] = nxt.composition() - z - h / (T + S)
        bias = (probs @ (add - S * z) - h) / (T + S)
        worst = max(worst, float(np.linalg.norm(bias)) * T * (T + S))
        state = nxt
    se = residuals.std(axis=0, ddof=1) / math.sqrt(n_steps)
    return RecursionResiduals(residuals.mean(axis=0), se, worst, n_steps)
