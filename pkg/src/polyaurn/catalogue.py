"""Built-in experiment configurations for the worked example urns."""

from __future__ import annotations

from .config import AnalysisOptions, ExperimentConfig, SimulationOptions
from .urn_core import ReplacementRule, SamplingMode, UrnState

RATE_CHECKPOINTS = "geometric:1000:2:128000"


def _three(entries: dict) -> ReplacementRule:
    return ReplacementRule(3, 2, entries)


def _two_colour_linear(m: int, a: int, b: int, swap: bool) -> ReplacementRule:
    # row i is drawn with m - i balls of colour 1, i.e. k = m - i
    rows = []
    for i in range(m + 1):
        k = m - i
        rows.append((a * k, b * (m - k)) if swap else (a * (m - k), b * k))
    return ReplacementRule.two_colour(rows)


_RULES = {
    "4.1.1": (ReplacementRule.two_colour([(1, 2), (2, 1), (1, 2)]), (1, 1), "two colours, m=2, S=3; converges to 1/2 with a sqrt(n) CLT"),
    "4.1.2": (ReplacementRule.two_colour([(4, 0), (1, 3), (1, 3)]), (5, 5), "two colours, S=4; limit 1/3 in the sqrt(n/log n) regime"),
    "4.1.3": (ReplacementRule.two_colour([(7, 1), (3, 5), (1, 7)]), (1, 1), "two colours, S=8; limit 1-sqrt(2)/2 with an almost-sure power rate"),
    "4.1.4": (ReplacementRule.two_colour([(6, 0), (3, 3), (1, 5)]), (1, 1), "two colours; double zero at 1, degenerate"),
    "4.1.5": (
        ReplacementRule.two_colour([(82, 9), (91, 0), (0, 91), (9, 82)]),
        (4, 6),
        "two colours, m=3, S=91; two stable limits 1/10 and 9/10",
    ),
    "4.2.1": (
        _three({(2, 0, 0): (1, 0, 0), (0, 1, 1): (1, 0, 0), (0, 2, 0): (0, 1, 0),
                (1, 0, 1): (0, 1, 0), (0, 0, 2): (0, 0, 1), (1, 1, 0): (0, 0, 1)}),
        (1, 1, 1),
        "three colours, S=1; uniform limit with Sigma = Gamma",
    ),
    "4.2.2": (
        _three({(2, 0, 0): (2, 0, 0), (0, 1, 1): (0, 1, 1), (0, 2, 0): (1, 0, 1),
                (1, 0, 1): (0, 2, 0), (0, 0, 2): (1, 1, 0), (1, 1, 0): (0, 0, 2)}),
        (10, 3, 3),
        "three colours, S=2; limit (1/5,2/5,2/5), sqrt(n) CLT",
    ),
    "4.2.3": (
        _three({(2, 0, 0): (3, 0, 0), (0, 1, 1): (3, 0, 0), (0, 2, 0): (0, 3, 0),
                (1, 0, 1): (1, 1, 1), (0, 0, 2): (0, 0, 3), (1, 1, 0): (1, 1, 1)}),
        (3, 10, 3),
        "three colours, S=3; limit (3/5,1/5,1/5) with an n^(1/3) almost-sure rate",
    ),
    "4.2.4": (
        _three({(2, 0, 0): (0, 0, 2), (0, 2, 0): (0, 0, 2), (0, 0, 2): (0, 0, 2),
                (0, 1, 1): (0, 1, 1), (1, 0, 1): (1, 0, 1), (1, 1, 0): (1, 1, 0)}),
        (1, 1, 1),
        "three colours; degenerate limit (0,0,1)",
    ),
    "4.2.5": (
        _three({(2, 0, 0): (1, 0, 0), (0, 2, 0): (0, 1, 0), (0, 0, 2): (0, 0, 1),
                (0, 1, 1): (0, 1, 0), (1, 0, 1): (0, 0, 1), (1, 1, 0): (1, 0, 0)}),
        (5, 3, 2),
        "rock-paper-scissors; no stable zero, composition keeps cycling",
    ),
    "5.1": (ReplacementRule.two_colour([(2, 1), (1, 1), (1, 2)]), (1, 1), "non-balanced, omega=5/2; CLT variance 1/10"),
    "5.2": (_two_colour_linear(2, 1, 4, swap=False), (1, 1), "non-balanced family with a=1, b=4, m=2; omega=4"),
    "5.3": (_two_colour_linear(2, 1, 3, swap=True), (1, 1), "non-balanced family with a=1, b=3, m=2; sigma^2=0"),
}

# per-entry simulation settings that differ from the defaults; every entry
# with a CLT row runs 10^4 reps to keep covariance noise near 1.4%
_SIMULATION = {
    "4.1.1": dict(n_reps=10_000),
    "4.2.1": dict(n_reps=10_000),
    "5.1": dict(n_reps=10_000),
    "4.1.5": dict(n_reps=10_000),
    "4.2.2": dict(n_reps=10_000),
    "4.1.3": dict(n_steps=128_000, checkpoints=RATE_CHECKPOINTS),
    "4.2.3": dict(n_steps=128_000, checkpoints=RATE_CHECKPOINTS),
}
_ANALYSIS = {
    "5.2": dict(growth_tol=0.05),
    # repulsion at 1/2 is g'(1/2)/S = 32/91 < 1/2, so a few reps are still leaving at n = 10^5
    "4.1.5": dict(unstable_tol=0.001),
}

SEED = 20240611


def names() -> list[str]:
    return list(_RULES)


def describe() -> list[tuple[str, str]]:
    return [(k, v[2]) for k, v in _RULES.items()]


def get(name: str) -> ExperimentConfig:
    if name not in _RULES:
        raise KeyError(f"unknown example {name!r}; valid names: {', '.join(_RULES)}")
    rule, counts, desc = _RULES[name]
    return ExperimentConfig(
        rule=rule,
        initial=UrnState(counts),
        mode=SamplingMode.WITH_REPLACEMENT,
        name=name,
        description=desc,
        analysis=AnalysisOptions(**_ANALYSIS.get(name, {})),
        simulation=SimulationOptions(seed=SEED, **_SIMULATION.get(name, {})),
        output_dir=f"out/{name}",
    )
