"""Analyse a configured urn, simulate it, and compare the two."""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import asymptotics as asy
from .config import ExperimentConfig, dump_config
from .drift import DiagonalRuleError, Stability, ZeroReport, find_zeros, lyapunov_test
from .io import write_csv
from .montecarlo import (
    EnsembleResult,
    as_rate_check,
    clt_check,
    decay_exponent,
    diagonal_convergence,
    estimate_limits,
    non_convergence_diagnostic,
    run_ensemble,
    total_growth_check,
)
from .urn_core import TenabilityReport, check_balance, check_diagonal, check_tenability

DIAGONAL_NOTE = "h ≡ 0; a.s. convergence to a random limit (diagonal case)"


@dataclass
class ZeroAnalysis:
    zero: ZeroReport
    lyapunov: str | None = None  # ConvergenceCertified / Inconclusive
    clt: asy.CltReport | None = None
    non_balanced: asy.NonBalancedReport | None = None
    note: str = ""


@dataclass
class Analysis:
    config: ExperimentConfig
    tenability: TenabilityReport
    balance: int | None
    diagonal: int | None
    zeros: list[ZeroAnalysis] = field(default_factory=list)

    @property
    def stable(self) -> list[ZeroAnalysis]:
        return [z for z in self.zeros if z.zero.stability is Stability.STABLE]

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser["scheme"] = {
            "name": self.config.name,
            "d": str(self.config.rule.d),
            "m": str(self.config.rule.m),
            "mode": self.config.mode.value,
            "tenable": str(self.tenability.tenable).lower(),
            "balanced_S": "none" if self.balance is None else str(self.balance),
            "diagonal_sigma": "none" if self.diagonal is None else str(self.diagonal),
        }
        for c in self.tenability.colours:
            if c.violation:
                parser["scheme"][f"violation_colour_{c.colour + 1}"] = c.violation
        if self.diagonal is not None:
            parser["scheme"]["note"] = DIAGONAL_NOTE
        for i, za in enumerate(self.zeros, 1):
            z = za.zero
            sec = {
                "location": _fmt_vec(z.location),
                "tangent_eigenvalues": _fmt_vec(z.tangent_eigenvalues),
                "stability": z.stability.value,
                "residual": repr(z.residual),
            }
            if za.lyapunov:
                sec["lyapunov_test"] = za.lyapunov
            if za.clt is not None:
                c = za.clt
                sec.update(
                    S=str(c.S),
                    Lambda=_fmt_complex(c.Lambda),
                    regime=c.regime.value,
                    Gamma=_fmt_mat(c.Gamma),
                )
                if c.Sigma is not None:
                    sec["Sigma"] = _fmt_mat(c.Sigma)
                    sec["lyapunov_residual"] = repr(c.lyapunov_residual)
                if c.power_exponent is not None:
                    sec["power_exponent"] = repr(c.power_exponent)
            if za.non_balanced is not None:
                nb = za.non_balanced
                sec.update(omega=repr(nb.omega), lam=repr(nb.lam), sigma2=repr(nb.sigma2), H=repr(nb.H))
                sec["clt_variance"] = "none" if nb.clt_variance is None else repr(nb.clt_variance)
            if za.note:
                sec["note"] = za.note
            parser[f"zero.{i}"] = sec
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _fmt_complex(z: complex) -> str:
    z = complex(z)
    return repr(z.real) if z.imag == 0 else f"{z.real!r}{z.imag:+}j"


def _fmt_vec(v) -> str:
    v = np.asarray(v)
    if np.iscomplexobj(v):
        return ", ".join(_fmt_complex(x) for x in v)
    return ", ".join(repr(float(x)) for x in v)


def _fmt_mat(a) -> str:
    return "; ".join(_fmt_vec(row) for row in np.atleast_2d(a))


def analyze(cfg: ExperimentConfig) -> Analysis:
    rule = cfg.rule
    report = Analysis(
        cfg,
        check_tenability(rule, cfg.initial, cfg.mode),
        check_balance(rule),
        check_diagonal(rule),
    )
    if report.diagonal is not None:
        return report
    try:
        zeros = find_zeros(rule, cfg.analysis.grid_resolution)
    except DiagonalRuleError:
        return report
    for z in zeros:
        za = ZeroAnalysis(z)
        if z.stability is not Stability.UNSTABLE:
            za.lyapunov = lyapunov_test(rule, z.location, cfg.analysis.lyapunov_resolution).verdict
            if report.balance is not None and report.balance > 0:
                za.clt = asy.classify_regime(rule, z.location)
                if za.clt.regime is asy.Regime.DEGENERATE:
                    za.note = "degenerate zero: no rate claim"
            elif rule.d == 2 and report.balance is None:
                try:
                    za.non_balanced = asy.non_balanced_params(rule, float(z.location[0]))
                except ValueError as exc:
                    za.note = str(exc)
        report.zeros.append(za)
    return report


# -- verification -----------------------------------------------------------------


@dataclass(frozen=True)
class VerifyRow:
    check: str
    predicted: str
    empirical: str
    tolerance: str
    verdict: str  # pass, fail, info, skip
    note: str = ""


def _g(x) -> str:
    if isinstance(x, (list, tuple, np.ndarray)):
        return "(" + ", ".join(f"{float(v):.6g}" for v in np.ravel(x)) + ")"
    return f"{float(x):.6g}"


def _limit_rows(an: Analysis, res: EnsembleResult, opts) -> list[VerifyRow]:
    rows = []
    certified = [z for z in an.zeros if z.lyapunov == "ConvergenceCertified"]
    stable = an.stable
    candidates = [z.zero.location for z in an.zeros]
    est = None
    try:
        est = estimate_limits(res, candidates, opts.limit_radius)
    except ValueError:
        pass
    if stable and est is not None:
        idx = [i for i, z in enumerate(an.zeros) if z.zero.stability is Stability.STABLE]
        assigned = float(est.frequencies[idx].sum())
        rows.append(VerifyRow(
            "limit assignment",
            "stable zeros " + " ".join(_g(an.zeros[i].zero.location) for i in idx),
            _g(assigned),
            f">= {opts.min_assigned} within {opts.limit_radius}",
            "pass" if assigned >= opts.min_assigned else "fail",
        ))
        if len(idx) > 1:
            freqs = est.frequencies[idx]
            rows.append(VerifyRow(
                "limit selection",
                "every stable zero selected",
                _g(freqs),
                "> 0 each",
                "pass" if np.all(freqs > 0) else "info",
                "initial composition decides the split",
            ))
    if est is not None:
        for i, z in enumerate(an.zeros):
            if z.zero.stability is Stability.UNSTABLE:
                rows.append(VerifyRow(
                    f"avoid unstable {_g(z.zero.location)}",
                    "0",
                    _g(est.frequencies[i]),
                    "== 0" if opts.unstable_tol == 0 else f"<= {opts.unstable_tol}",
                    "pass" if est.frequencies[i] <= opts.unstable_tol else "fail",
                ))
            elif z.zero.stability is Stability.DEGENERATE and z in certified:
                rows.append(VerifyRow(
                    f"degenerate limit {_g(z.zero.location)}",
                    "convergence, no rate claim",
                    _g(est.frequencies[i]),
                    "none",
                    "info",
                    f"exploratory decay exponent {decay_exponent(res, z.zero.location):.3g}",
                ))
    if not stable and not certified:
        nc = non_convergence_diagnostic(res, opts.nonconvergence_threshold)
        rows.append(VerifyRow(
            "non-convergence",
            "no stable zero: Z_n keeps moving",
            f"median last-decade range {nc.median_range:.4g}",
            f">= {opts.nonconvergence_threshold}",
            "pass" if nc.triggered else "fail",
        ))
    return rows


def _scalar_clt_row(res, theta, report, label, predicted_value, opts) -> VerifyRow:
    try:
        cmp = clt_check(res, theta, report, opts.limit_radius)
    except ValueError as exc:
        return VerifyRow(label, _g(predicted_value), "-", "-", "skip", str(exc))
    emp = cmp.quantile_cov[0, 0]
    ok = abs(emp - predicted_value) <= opts.clt_rel_tol * abs(predicted_value)
    return VerifyRow(label, _g(predicted_value), _g(emp), f"{opts.clt_rel_tol:.0%} relative",
                     "pass" if ok else "fail",
                     f"scaling {cmp.scaling}, {cmp.n_assigned} reps, sample variance {_g(cmp.empirical[0, 0])}")


def _clt_rows(an: Analysis, res: EnsembleResult, opts) -> list[VerifyRow]:
    rows = []
    d = an.config.rule.d
    for za in an.stable:
        theta = za.zero.location
        tag = _g(theta)
        if za.clt is not None:
            c = za.clt
            if c.regime is asy.Regime.GAUSSIAN_SQRT_N:
                if d == 2:
                    rows.append(_scalar_clt_row(res, theta, c, f"CLT variance at {tag}", float(c.Sigma[0, 0]), opts))
                    continue
                try:
                    cmp = clt_check(res, theta, c, opts.limit_radius)
                except ValueError as exc:
                    rows.append(VerifyRow(f"CLT covariance at {tag}", "Sigma", "-", "-", "skip", str(exc)))
                    continue
                ok = cmp.within(opts.clt_rel_tol, opts.clt_abs_floor, robust=True)
                rows.append(VerifyRow(
                    f"CLT covariance at {tag}",
                    _g(cmp.predicted),
                    _g(cmp.quantile_cov),
                    f"{opts.clt_rel_tol:.0%} relative, floor {opts.clt_abs_floor}",
                    "pass" if ok else "fail",
                    f"{cmp.n_assigned} reps, sample covariance {_g(cmp.empirical)}",
                ))
            elif c.regime is asy.Regime.GAUSSIAN_SQRT_N_OVER_LOG_N:
                if d == 2:
                    row = _scalar_clt_row(res, theta, c, f"log-CLT variance at {tag}", float(c.Gamma[0, 0]), opts)
                    rows.append(VerifyRow(row.check, row.predicted, row.empirical, row.tolerance,
                                          "info" if row.verdict != "skip" else "skip",
                                          "log-scale convergence is too slow for a pass/fail at this n"))
                else:
                    rows.append(VerifyRow(f"log-CLT at {tag}", "-", "-", "-", "skip",
                                          "covariance in the critical regime is not computed"))
            elif c.regime is asy.Regime.ALMOST_SURE_POWER:
                try:
                    diag = as_rate_check(res, theta, c.power_exponent, threshold=opts.rate_threshold)
                except ValueError as exc:
                    rows.append(VerifyRow(f"a.s. rate at {tag}", _g(c.power_exponent), "-", "-", "skip", str(exc)))
                    continue
                rows.append(VerifyRow(
                    f"a.s. rate n^{c.power_exponent:.4g} at {tag}",
                    "scaled deviation stabilises",
                    f"range/magnitude {diag.ratio:.4g}",
                    f"< {opts.rate_threshold}",
                    "pass" if diag.stabilized else "fail",
                ))
        elif za.non_balanced is not None:
            nb = za.non_balanced
            if nb.clt_variance is not None:
                rows.append(_scalar_clt_row(res, theta, nb, f"CLT variance at {tag}", nb.clt_variance, opts))
            else:
                reason = "sigma^2 = 0" if nb.sigma2 <= 1e-14 else f"lambda = {nb.lam:.4g} <= 1/2"
                rows.append(VerifyRow(f"CLT at {tag}", "-", "-", "-", "skip", f"{reason}: no Gaussian limit"))
    return rows


def _growth_rows(an: Analysis, res: EnsembleResult, opts) -> list[VerifyRow]:
    rows = []
    for za in an.stable:
        nb = za.non_balanced
        if nb is None:
            continue
        g = total_growth_check(res, nb.omega)
        rows.append(VerifyRow(
            "growth T_n/n",
            _g(nb.omega),
            _g(g.empirical),
            f"+- {opts.growth_tol}",
            "pass" if g.deviation <= opts.growth_tol else "fail",
        ))
    return rows


def verify_rows(an: Analysis, res: EnsembleResult) -> list[VerifyRow]:
    opts = an.config.analysis
    if an.diagonal is not None:
        try:
            dc = diagonal_convergence(res)
        except ValueError as exc:
            return [VerifyRow("diagonal convergence", "-", "-", "-", "skip", str(exc))]
        ok = dc.final <= opts.diagonal_tol
        return [VerifyRow(
            "diagonal convergence",
            "||Z_2n - Z_n|| -> 0",
            f"median {dc.final:.4g} at n={int(dc.pairs[-1][0])}",
            f"<= {opts.diagonal_tol}",
            "pass" if ok else "fail",
            "medians decrease" if dc.decreasing else "medians not monotone",
        )]
    return _limit_rows(an, res, opts) + _clt_rows(an, res, opts) + _growth_rows(an, res, opts)


def format_table(rows: list[VerifyRow]) -> str:
    header = ("check", "predicted", "empirical", "tolerance", "verdict", "note")
    data = [header] + [(r.check, r.predicted, r.empirical, r.tolerance, r.verdict, r.note) for r in rows]
    widths = [min(max(len(row[i]) for row in data), 60) for i in range(len(header))]
    lines = []
    for row in data:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def write_verify_csv(path, rows: list[VerifyRow]) -> None:
    write_csv(path, ["check", "predicted", "empirical", "tolerance", "verdict", "note"],
              ((r.check, r.predicted, r.empirical, r.tolerance, r.verdict, r.note) for r in rows))


def write_simulation(cfg: ExperimentConfig, res: EnsembleResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    res.to_terminal_csv(out / "terminal.csv")
    res.to_summary_csv(out / "summary.csv")
    meta = dump_config(cfg)
    meta += "\n[run]\n"
    meta += f"checkpoints = {','.join(map(str, res.config.checkpoints))}\n"
    meta += f"failed_reps = {len(res.failures)}\n"
    for f in res.failures[:20]:
        meta += f"failure_{f.rep} = {f}\n"
    (out / "metadata.ini").write_text(meta)


def simulate(cfg: ExperimentConfig, threads: int | None = None) -> EnsembleResult:
    return run_ensemble(cfg.ensemble(), threads=threads)
