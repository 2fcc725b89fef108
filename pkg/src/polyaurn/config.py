"""INI experiment files.

Layout::

    [experiment]
    name = 4.2.2
    description = ...

    [rule]
    d = 3
    m = 2
    mode = with

    [rule.entries]
    2,0,0 = 2,0,0
    ...

    [initial]
    counts = 10,3,3

    [analysis]
    grid_resolution = 20

    [simulation]
    n_steps = 100000
    n_reps = 1000
    seed = 1
    checkpoints = default

    [output]
    directory = out

``checkpoints`` is ``default``, a comma list, or ``geometric:start:ratio:stop``.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .montecarlo import EnsembleConfig, default_checkpoints, geometric_checkpoints
from .urn_core import ReplacementRule, SamplingMode, UrnState, enumerate_compositions


class ConfigError(ValueError):
    """Malformed experiment file; the message names the offending field."""


@dataclass(frozen=True)
class AnalysisOptions:
    grid_resolution: int = 20
    lyapunov_resolution: int = 200
    limit_radius: float = 0.05
    min_assigned: float = 0.95
    clt_rel_tol: float = 0.15
    clt_abs_floor: float = 0.005
    growth_tol: float = 0.02
    rate_threshold: float = 0.2
    nonconvergence_threshold: float = 0.1
    diagonal_tol: float = 0.01
    unstable_tol: float = 0.0  # allowed terminal fraction near an unstable zero


@dataclass(frozen=True)
class SimulationOptions:
    n_steps: int = 100_000
    n_reps: int = 1000
    seed: int = 1
    checkpoints: str = "default"

    def checkpoint_steps(self) -> tuple[int, ...]:
        raw = self.checkpoints.strip()
        if raw == "default":
            return default_checkpoints(self.n_steps)
        if raw.startswith("geometric:"):
            try:
                _, start, ratio, stop = raw.split(":")
                return geometric_checkpoints(int(start), float(ratio), int(stop))
            except ValueError:
                raise ConfigError(f"simulation.checkpoints: bad geometric grid {raw!r}") from None
        try:
            return tuple(int(x) for x in raw.split(","))
        except ValueError:
            raise ConfigError(f"simulation.checkpoints: cannot parse {raw!r}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    rule: ReplacementRule
    initial: UrnState
    mode: SamplingMode = SamplingMode.WITH_REPLACEMENT
    name: str = "experiment"
    description: str = ""
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)
    simulation: SimulationOptions = field(default_factory=SimulationOptions)
    output_dir: str = "out"

    def ensemble(self) -> EnsembleConfig:
        sim = self.simulation
        return EnsembleConfig(
            self.rule, self.initial, self.mode, sim.n_steps, sim.n_reps, sim.seed, sim.checkpoint_steps()
        )

    def with_overrides(self, *, seed=None, n_reps=None, n_steps=None, output_dir=None) -> "ExperimentConfig":
        sim = self.simulation
        changes = {k: v for k, v in (("seed", seed), ("n_reps", n_reps), ("n_steps", n_steps)) if v is not None}
        if "n_steps" in changes and sim.checkpoints != "default":
            # explicit grids are cut at the new horizon
            ck = [c for c in sim.checkpoint_steps() if c <= changes["n_steps"]]
            changes["checkpoints"] = ",".join(map(str, ck)) if ck else "default"
        cfg = replace(self, simulation=replace(sim, **changes))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        _validate_simulation(cfg.simulation)
        return cfg


def _tuple(text: str, where: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"{where}: expected comma-separated integers, got {text!r}") from None


def _get(parser, section, key, conv, where=None, default=None):
    where = where or f"{section}.{key}"
    if not parser.has_option(section, key):
        if default is not None:
            return default
        raise ConfigError(f"{where}: missing")
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def _validate_simulation(sim: SimulationOptions):
    if sim.n_steps < 1:
        raise ConfigError(f"simulation.n_steps: must be >= 1, got {sim.n_steps}")
    if sim.n_reps < 1:
        raise ConfigError(f"simulation.n_reps: must be >= 1, got {sim.n_reps}")
    if not 0 <= sim.seed < 2**64:
        raise ConfigError(f"simulation.seed: must be a 64-bit unsigned integer, got {sim.seed}")
    ck = sim.checkpoint_steps()
    if not ck or list(ck) != sorted(set(ck)) or ck[0] < 1 or ck[-1] > sim.n_steps:
        raise ConfigError(f"simulation.checkpoints: must be increasing steps in [1, {sim.n_steps}]")


def _new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(delimiters=("=",), interpolation=None)
    parser.optionxform = str
    return parser


def parse_config(text: str) -> ExperimentConfig:
    parser = _new_parser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax: {exc}") from None
    for section in ("rule", "rule.entries", "initial"):
        if not parser.has_section(section):
            raise ConfigError(f"[{section}]: missing section")
    d = _get(parser, "rule", "d", int)
    m = _get(parser, "rule", "m", int)
    if d < 2:
        raise ConfigError(f"rule.d: need at least 2 colours, got {d}")
    if m < 1:
        raise ConfigError(f"rule.m: need m >= 1, got {m}")
    try:
        mode = SamplingMode.parse(parser.get("rule", "mode", fallback="with"))
    except ValueError as exc:
        raise ConfigError(f"rule.mode: {exc}") from None

    entries = {}
    for key, value in parser.items("rule.entries"):
        v = _tuple(key, f"rule.entries key {key!r}")
        if len(v) != d or min(v) < 0 or sum(v) != m:
            raise ConfigError(f"rule.entries: {key!r} is not a composition of {m} into {d} parts")
        if v in entries:
            raise ConfigError(f"rule.entries: duplicate composition {key!r}")
        add = _tuple(value, f"rule.entries[{key}]")
        if len(add) != d:
            raise ConfigError(f"rule.entries[{key}]: addition vector needs {d} components, got {len(add)}")
        entries[v] = add
    missing = [v for v in enumerate_compositions(d, m) if v not in entries]
    if missing:
        listed = "; ".join(",".join(map(str, v)) for v in missing)
        raise ConfigError(f"rule.entries: missing composition(s) {listed}")
    rule = ReplacementRule(d, m, entries)

    counts = _get(parser, "initial", "counts", lambda s: _tuple(s, "initial.counts"))
    if len(counts) != d:
        raise ConfigError(f"initial.counts: need {d} counts, got {len(counts)}")
    try:
        initial = UrnState(counts)
    except (ValueError, OverflowError) as exc:
        raise ConfigError(f"initial.counts: {exc}") from None

    def options(cls, section):
        kwargs = {}
        if parser.has_section(section):
            known = {f.name: f for f in fields(cls)}
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(f"{section}.{key}: unknown option")
                default = known[key].default
                conv = type(default)
                try:
                    kwargs[key] = conv(raw) if conv is not str else raw
                except ValueError:
                    raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None
        return cls(**kwargs)

    analysis = options(AnalysisOptions, "analysis")
    simulation = options(SimulationOptions, "simulation")
    _validate_simulation(simulation)
    if analysis.grid_resolution < 1 or analysis.lyapunov_resolution < 1:
        raise ConfigError("analysis.grid_resolution: must be >= 1")
    if mode is SamplingMode.WITHOUT_REPLACEMENT and initial.total < m:
        raise ConfigError(f"initial.counts: {initial.total} balls cannot supply a draw of {m} without replacement")
    return ExperimentConfig(
        rule=rule,
        initial=initial,
        mode=mode,
        name=parser.get("experiment", "name", fallback="experiment"),
        description=parser.get("experiment", "description", fallback=""),
        analysis=analysis,
        simulation=simulation,
        output_dir=parser.get("output", "directory", fallback="out"),
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"--config: cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def _csv(values) -> str:
    return ",".join(str(int(x)) for x in values)


def dump_config(cfg: ExperimentConfig) -> str:
    parser = _new_parser()
    parser["experiment"] = {"name": cfg.name, "description": cfg.description}
    parser["rule"] = {"d": str(cfg.rule.d), "m": str(cfg.rule.m), "mode": cfg.mode.value}
    parser["rule.entries"] = {_csv(v): _csv(cfg.rule(v)) for v in cfg.rule.compositions}
    parser["initial"] = {"counts": _csv(cfg.initial.counts)}
    parser["analysis"] = {f.name: repr(getattr(cfg.analysis, f.name)) for f in fields(AnalysisOptions)}
    parser["simulation"] = {
        f.name: str(getattr(cfg.simulation, f.name)) for f in fields(SimulationOptions)
    }
    parser["output"] = {"directory": cfg.output_dir}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg))
    return path
