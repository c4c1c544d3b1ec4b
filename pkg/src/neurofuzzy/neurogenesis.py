"""Batch-delayed neurogenesis of the membership layer.

Inputs that no existing term covers to degree ``epsilon`` are streamed into a
per-attribute Welford accumulator.  Once an attribute has failed in ``delay``
batches a new Gaussian set is created from the accumulated mean and standard
deviation, every rule may then select it, and the accumulator starts over.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .membership import CompletenessReport, GaussianSet, MembershipLayer, check_completeness
from .rules import RuleBank, expand_terms


@dataclass
class WelfordAccumulator:
    """Streaming mean and population variance.

    Values are accumulated relative to the first one seen (``shift``).  Near
    a large offset that subtraction is exact, so the updates work on small
    numbers and the mean is not limited by the offset's rounding.
    """

    count: int = 0
    shifted_mean: float = 0.0
    m2: float = 0.0
    shift: float = 0.0

    def update(self, value: float) -> WelfordAccumulator:
        return welford_update(self, value)

    @property
    def mean(self) -> float:
        return self.shift + self.shifted_mean if self.count else 0.0

    @property
    def variance(self) -> float:
        """Population variance ``m2 / n`` (0 for an empty accumulator)."""
        return self.m2 / self.count if self.count else 0.0

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def reset(self) -> None:
        self.count, self.shifted_mean, self.m2, self.shift = 0, 0.0, 0.0, 0.0


def welford_update(acc: WelfordAccumulator, value: float) -> WelfordAccumulator:
    value = float(value)
    if not math.isfinite(value):
        raise InputError(f"cannot accumulate non-finite value {value}")
    if acc.count == 0:
        acc.shift = value
    x = value - acc.shift
    acc.count += 1
    delta = x - acc.shifted_mean
    acc.shifted_mean += delta / acc.count
    acc.m2 += delta * (x - acc.shifted_mean)
    return acc


@dataclass
class SproutEvent:
    step: int
    attribute: int
    center: float
    width: float
    n: int
    batches_waited: int

    def to_json(self) -> str:
        return json.dumps(vars(self))


@dataclass
class NeurogenesisState:
    n_attributes: int
    delay: int = 3
    epsilon: float = 0.4
    accumulators: list[WelfordAccumulator] = field(default_factory=list)
    batches_observed: np.ndarray | None = None
    events: list[SproutEvent] = field(default_factory=list)
    log_path: str | None = None  # events are appended here as they happen

    def __post_init__(self):
        if self.delay < 1:
            raise ConfigError("delay must be >= 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        if not self.accumulators:
            self.accumulators = [WelfordAccumulator() for _ in range(self.n_attributes)]
        if self.batches_observed is None:
            self.batches_observed = np.zeros(self.n_attributes, dtype=int)

    @property
    def pending(self) -> list[int]:
        return [i for i, acc in enumerate(self.accumulators) if acc.count > 0]


def observe_batch(state: NeurogenesisState, report: CompletenessReport, batch) -> NeurogenesisState:
    """Stream every failing value into its attribute's accumulator."""
    if not report.failing:
        return state
    batch = np.asarray(batch, dtype=float)
    touched = set()
    for b, i in report.failing:
        welford_update(state.accumulators[i], batch[b, i])
        touched.add(i)
    for i in touched:
        state.batches_observed[i] += 1
    return state


def maybe_sprout(state: NeurogenesisState, layer: MembershipLayer, bank: RuleBank | None = None,
                 step: int = 0) -> list[tuple[int, GaussianSet]]:
    """Create the pending Gaussian sets whose delay has elapsed."""
    added = []
    for i in range(state.n_attributes):
        if state.batches_observed[i] < state.delay:
            continue
        acc = state.accumulators[i]
        # a single value (or a constant stream) has zero spread: fall back to the floor
        width = max(acc.std, float(layer.min_width[i]))
        term = GaussianSet(acc.mean, width)
        j = layer.add_term(i, term)
        if bank is not None:
            expand_terms(bank, i, j, layer)
        event = SproutEvent(step, i, term.center, width, acc.count, int(state.batches_observed[i]))
        state.events.append(event)
        if state.log_path:
            write_events([event], state.log_path)
        added.append((i, term))
        acc.reset()
        state.batches_observed[i] = 0
    return added


def grow(state: NeurogenesisState, layer: MembershipLayer, bank: RuleBank | None, batch,
         step: int = 0):
    """One neurogenesis round on a batch; returns ``(report, added)``."""
    report = check_completeness(layer, batch, state.epsilon)
    observe_batch(state, report, batch)
    return report, maybe_sprout(state, layer, bank, step)


def write_events(events, path, mode: str = "a") -> None:
    """Append events as JSON lines (``mode="w"`` starts a fresh log)."""
    with open(path, mode) as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")
