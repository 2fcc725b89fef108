"""Urn schemes, states, draw laws and the one-step dynamics.

A scheme with ``d`` colours and draw size ``m`` is a map from the set of
draw compositions (``d``-tuples of non-negative integers summing to ``m``)
to integer addition vectors.  Compositions are always handled in
descending lexicographic order; every array indexed by composition in this
package uses that order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import Mapping, Sequence

import numpy as np

INT64_MAX = np.iinfo(np.int64).max

Composition = tuple[int, ...]


class SamplingMode(enum.Enum):
    WITH_REPLACEMENT = "with"
    WITHOUT_REPLACEMENT = "without"

    @classmethod
    def parse(cls, value: "SamplingMode | str") -> "SamplingMode":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace("_", "-")
        aliases = {
            "with": cls.WITH_REPLACEMENT,
            "with-replacement": cls.WITH_REPLACEMENT,
            "without": cls.WITHOUT_REPLACEMENT,
            "without-replacement": cls.WITHOUT_REPLACEMENT,
        }
        try:
            return aliases[text]
        except KeyError:
            raise ValueError(f"unknown sampling mode {value!r}") from None


class TenabilityError(RuntimeError):
    """Raised when a step would remove balls that are not in the urn.

    Distinct from ``ValueError`` (bad input): the inputs were valid but the
    trajectory reached an impossible configuration.
    """

    def __init__(self, message: str, counts: Sequence[int] = (), draw: Sequence[int] = ()):
        super().__init__(message)
        self.counts = tuple(counts)
        self.draw = tuple(draw)


def enumerate_compositions(d: int, m: int) -> list[Composition]:
    """All ``d``-tuples of non-negative integers summing to ``m``.

    Descending lexicographic order, so ``(m, 0, ..., 0)`` comes first and
    ``(0, ..., 0, m)`` last.
    """
    if d < 1 or m < 1:
        raise ValueError(f"need d >= 1 and m >= 1, got d={d}, m={m}")
    return _compositions(d, m)


def _compositions(d: int, m: int) -> list[Composition]:
    if d == 1:
        return [(m,)]
    out: list[Composition] = []
    for first in range(m, -1, -1):
        for rest in _compositions(d - 1, m - first):
            out.append((first,) + rest)
    return out


def multinomial(v: Sequence[int]) -> int:
    out = math.factorial(sum(v))
    for k in v:
        out //= math.factorial(k)
    return out


@dataclass(frozen=True, eq=False)
class ReplacementRule:
    """Addition vector ``R(v)`` for every draw composition ``v``.

    ``entries`` must be total over the compositions of ``m`` into ``d``
    parts.  Use :meth:`from_rows` for the tabular form.
    """

    d: int
    m: int
    entries: Mapping[Composition, tuple[int, ...]] = field(repr=False)

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"need at least two colours, got d={self.d}")
        if self.m < 1:
            raise ValueError(f"need m >= 1, got m={self.m}")
        clean: dict[Composition, tuple[int, ...]] = {}
        for v, add in self.entries.items():
            v = tuple(int(x) for x in v)
            add = tuple(int(x) for x in add)
            if len(v) != self.d or sum(v) != self.m or min(v) < 0:
                raise ValueError(f"{v} is not a composition of m={self.m} into d={self.d} parts")
            if len(add) != self.d:
                raise ValueError(f"addition vector for {v} has length {len(add)}, expected {self.d}")
            clean[v] = add
        missing = [v for v in enumerate_compositions(self.d, self.m) if v not in clean]
        if missing:
            raise ValueError(f"replacement rule has no entry for composition(s) {missing}")
        object.__setattr__(self, "entries", clean)

    @classmethod
    def from_rows(cls, d: int, m: int, rows: Sequence[Sequence[int]]) -> "ReplacementRule":
        """Build from addition vectors listed in canonical composition order.

        For ``d = 2`` row ``i`` is the draw with ``m - i`` balls of the first
        colour, i.e. the usual ``(a_i, b_i)`` matrix layout.
        """
        comps = enumerate_compositions(d, m)
        if len(rows) != len(comps):
            raise ValueError(f"expected {len(comps)} rows for d={d}, m={m}, got {len(rows)}")
        return cls(d, m, dict(zip(comps, (tuple(r) for r in rows))))

    @classmethod
    def two_colour(cls, rows: Sequence[Sequence[int]]) -> "ReplacementRule":
        return cls.from_rows(2, len(rows) - 1, rows)

    @classmethod
    def diagonal(cls, d: int, m: int, sigma: int) -> "ReplacementRule":
        return cls(d, m, {v: tuple(sigma * x for x in v) for v in enumerate_compositions(d, m)})

    def __eq__(self, other):
        if not isinstance(other, ReplacementRule):
            return NotImplemented
        return self.d == other.d and self.m == other.m and self.entries == other.entries

    def __hash__(self):
        return hash((self.d, self.m, tuple(sorted(self.entries.items()))))

    def __call__(self, v: Sequence[int]) -> tuple[int, ...]:
        return self.entries[tuple(v)]

    @cached_property
    def compositions(self) -> list[Composition]:
        return enumerate_compositions(self.d, self.m)

    @cached_property
    def composition_array(self) -> np.ndarray:
        return np.array(self.compositions, dtype=np.int64)

    @cached_property
    def additions(self) -> np.ndarray:
        """(K, d) int64 array of ``R(v)`` in canonical order."""
        return np.array([self.entries[v] for v in self.compositions], dtype=np.int64)

    @cached_property
    def multinomials(self) -> np.ndarray:
        return np.array([multinomial(v) for v in self.compositions], dtype=np.float64)

    @cached_property
    def row_sums(self) -> np.ndarray:
        return self.additions.sum(axis=1)

    @property
    def balance(self) -> int | None:
        return check_balance(self)

    @property
    def sigma(self) -> int | None:
        return check_diagonal(self)

    def rows(self) -> list[tuple[int, ...]]:
        return [self.entries[v] for v in self.compositions]

    def two_colour_coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``a, b`` with ``a[i], b[i]`` added when ``m - i`` balls of colour 1 are drawn."""
        if self.d != 2:
            raise ValueError(f"two-colour view needs d=2, rule has d={self.d}")
        add = self.additions
        return add[:, 0].copy(), add[:, 1].copy()


@dataclass(frozen=True)
class UrnState:
    counts: tuple[int, ...]
    step: int = 0

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise ValueError(f"negative ball count in {counts}")
        if sum(counts) <= 0:
            raise ValueError("the urn must be non-empty")
        if any(c > INT64_MAX for c in counts):
            raise OverflowError(f"ball count exceeds 64-bit range in {counts}")
        if self.step < 0:
            raise ValueError(f"negative step index {self.step}")

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def d(self) -> int:
        return len(self.counts)

    def composition(self) -> np.ndarray:
        """Normalised composition ``U_n / T_n``."""
        return np.asarray(self.counts, dtype=np.float64) / self.total


def _with_replacement_probability(counts: Sequence[int], total: int, v: Sequence[int], coef: float) -> float:
    p = coef
    for c, k in zip(counts, v):
        z = c / total
        for _ in range(k):
            p *= z
    return p


def _without_replacement_probability(counts: Sequence[int], total: int, v: Sequence[int], coef: float) -> float:
    # numerator factor (U_i - j) paired with denominator factor (T - pos)
    p = coef
    pos = 0
    for c, k in zip(counts, v):
        for j in range(k):
            p *= (c - j) / (total - pos)
            pos += 1
    return p


def draw_probability(state: UrnState, v: Sequence[int], mode: SamplingMode | str) -> float:
    """Probability that the next draw has composition ``v``."""
    mode = SamplingMode.parse(mode)
    v = tuple(int(x) for x in v)
    if len(v) != state.d or min(v) < 0:
        raise ValueError(f"draw {v} does not match a {state.d}-colour urn")
    m = sum(v)
    if mode is SamplingMode.WITHOUT_REPLACEMENT:
        if state.total < m:
            raise ValueError(f"cannot draw {m} balls without replacement from {state.total}")
        return _without_replacement_probability(state.counts, state.total, v, float(multinomial(v)))
    return _with_replacement_probability(state.counts, state.total, v, float(multinomial(v)))


def draw_probabilities(state: UrnState, m: int, mode: SamplingMode | str) -> np.ndarray:
    """Probabilities of every composition of ``m``, in canonical order."""
    return np.array([draw_probability(state, v, mode) for v in enumerate_compositions(state.d, m)])


def sample_draw(state: UrnState, m: int, mode: SamplingMode | str, rng: np.random.Generator) -> Composition:
    """Sample a draw composition by inverse CDF with one uniform variate."""
    comps = enumerate_compositions(state.d, m)
    probs = draw_probabilities(state, m, mode)
    return comps[_inverse_cdf(probs, rng.random())]


def _inverse_cdf(probs: Sequence[float], u: float) -> int:
    cum = 0.0
    last = -1
    for k, p in enumerate(probs):
        if p > 0.0:
            last = k
        cum += p
        if u < cum:
            return k
    return last


def step(
    state: UrnState,
    rule: ReplacementRule,
    mode: SamplingMode | str,
    rng: np.random.Generator,
) -> UrnState:
    """Draw ``m`` balls and add ``R(draw)``.

    Raises :class:`TenabilityError` if the addition would make a count
    negative or empty the urn.
    """
    if state.d != rule.d:
        raise ValueError(f"state has {state.d} colours, rule has {rule.d}")
    v = sample_draw(state, rule.m, mode, rng)
    add = rule.entries[v]
    new = tuple(c + a for c, a in zip(state.counts, add))
    if any(c < 0 for c in new):
        raise TenabilityError(
            f"draw {v} from {state.counts} at step {state.step + 1} leaves negative counts {new}",
            counts=state.counts,
            draw=v,
        )
    if sum(new) <= 0:
        raise TenabilityError(f"draw {v} at step {state.step + 1} empties the urn", state.counts, v)
    if any(c > INT64_MAX for c in new):
        raise OverflowError(f"ball count exceeds 64-bit range at step {state.step + 1}")
    return UrnState(new, state.step + 1)


def check_balance(rule: ReplacementRule) -> int | None:
    """The common row sum ``S`` if every addition vector has the same total."""
    sums = set(int(s) for s in rule.row_sums)
    return sums.pop() if len(sums) == 1 else None


def check_diagonal(rule: ReplacementRule) -> int | None:
    """``sigma`` if ``R(v) = sigma * v`` for every composition, else None."""
    first = rule.entries[rule.compositions[0]]
    # compositions[0] is (m, 0, ..., 0)
    if first[0] % rule.m:
        return None
    sigma = first[0] // rule.m
    for v, add in rule.entries.items():
        if any(a != sigma * x for a, x in zip(add, v)):
            return None
    return sigma


@dataclass(frozen=True)
class ColourDiagnostic:
    colour: int
    nu: int
    modulus: int
    violation: str | None = None


@dataclass(frozen=True)
class TenabilityReport:
    tenable: bool
    colours: tuple[ColourDiagnostic, ...]

    def violations(self) -> list[str]:
        return [f"colour {c.colour + 1}: {c.violation}" for c in self.colours if c.violation]


def check_tenability(
    rule: ReplacementRule,
    initial: UrnState,
    mode: SamplingMode | str,
) -> TenabilityReport:
    """Decide whether the scheme can ever be asked to remove absent balls.

    For colour ``i`` every reachable count is congruent to ``U_0,i`` modulo
    ``g_i``, the gcd of all ``R_i(v)``.  A drawable ``v`` guarantees
    ``U_i >= 1`` (with replacement, ``v_i >= 1``) or ``U_i >= v_i``
    (without replacement).  The scheme is reported tenable iff the smallest
    count compatible with both facts survives every addition.  The verdict
    is a sufficient condition; it is also necessary unless some colour can
    die out, which makes the offending draw unreachable.

    ``nu`` in the diagnostics is the gcd of ``R_i(v)`` over ``v != m e_i``.
    """
    mode = SamplingMode.parse(mode)
    if initial.d != rule.d:
        raise ValueError(f"state has {initial.d} colours, rule has {rule.d}")
    diags = []
    for i in range(rule.d):
        pure = tuple(rule.m if j == i else 0 for j in range(rule.d))
        column = [rule.entries[v][i] for v in rule.compositions]
        nu = reduce(math.gcd, (abs(rule.entries[v][i]) for v in rule.compositions if v != pure), 0)
        g = reduce(math.gcd, (abs(x) for x in column), 0)
        u0 = initial.counts[i]
        violation = None
        for v in rule.compositions:
            r = rule.entries[v][i]
            if r >= 0:
                continue
            if mode is SamplingMode.WITH_REPLACEMENT:
                need = 1 if v[i] >= 1 else 0
            else:
                need = v[i]
            lowest = need + (u0 - need) % g
            if lowest + r < 0:
                violation = (
                    f"draw {v} adds {r} while a count of {lowest} is reachable "
                    f"(counts stay = {u0 % g} mod {g})"
                )
                break
        diags.append(ColourDiagnostic(i, nu, g, violation))
    return TenabilityReport(all(c.violation is None for c in diags), tuple(diags))
