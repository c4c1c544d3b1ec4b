"""Firing-level studies and structure-evolution reports as plot-ready tables."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import firing
from .errors import ConfigError, UsageError
from .inference import MEAN, SUM, preliminary_firing
from .membership import MembershipLayer, squared_deviation
from .rules import RuleBank, sample_structure


@dataclass(frozen=True)
class Variant:
    mode: str  # "Sum" or "Mean"
    alpha: float
    layer_norm: bool

    @property
    def name(self) -> str:
        parts = [self.mode] + (["LN"] if self.layer_norm else [])
        parts.append("softmax" if self.alpha == 1.0 else "entmax15")
        return "+".join(parts)

    @classmethod
    def parse(cls, text: str) -> Variant:
        """Parse names such as ``Sum+softmax``, ``mean+ln+entmax15``."""
        tokens = [t.strip().lower() for t in text.split("+") if t.strip()]
        mode = {"sum": SUM, "mean": MEAN}.get(tokens[0] if tokens else "")
        norms = [t for t in tokens[1:] if t != "ln"]
        if mode is None or len(norms) != 1 or norms[0] not in ("softmax", "entmax", "entmax15"):
            raise ConfigError(f"cannot parse variant {text!r}; expected e.g. 'Sum+LN+softmax'")
        alpha = 1.0 if norms[0] == "softmax" else 1.5
        return cls(mode, alpha, "ln" in tokens[1:])


DEFAULT_VARIANTS = tuple(Variant(m, a, ln) for m in (SUM, MEAN) for a in (1.0, 1.5) for ln in (False, True))


@dataclass
class FiringStudyConfig:
    input_dim: int = 1600
    rule_count: int = 256
    variants: tuple = DEFAULT_VARIANTS
    sample_count: int = 100
    seed: int = 0
    n_terms: int = 3

    def __post_init__(self):
        self.variants = tuple(Variant.parse(v) if isinstance(v, str) else v for v in self.variants)
        if not self.variants:
            raise ConfigError("a firing study needs at least one variant")
        if min(self.input_dim, self.rule_count, self.sample_count, self.n_terms) < 1:
            raise ConfigError("dimensions and sample count must be positive")


@dataclass
class VariantResult:
    variant: Variant
    preliminary: np.ndarray  # (obs, rules)
    normalized: np.ndarray
    entropy: np.ndarray
    support: np.ndarray
    finite: bool

    def summary(self) -> dict:
        return {
            "variant": self.variant.name,
            "mean_entropy": float(self.entropy.mean()),
            "median_entropy": float(np.median(self.entropy)),
            "median_support": float(np.median(self.support)),
            "min_support": int(self.support.min()),
            "max_support": int(self.support.max()),
            "finite": self.finite,
        }


@dataclass
class FiringStudy:
    config: FiringStudyConfig
    results: dict[str, VariantResult] = field(default_factory=dict)

    def entropy(self, name: str) -> float:
        return float(self.results[Variant.parse(name).name].entropy.mean())

    def ordering_holds(self) -> bool | None:
        """Mean+softmax > Sum+LN+softmax > Sum+softmax, if all three were run."""
        names = ("Mean+softmax", "Sum+LN+softmax", "Sum+softmax")
        if not all(n in self.results for n in names):
            return None
        a, b, c = (self.entropy(n) for n in names)
        return a > b > c

    def summary(self) -> dict:
        return {"config": {"input_dim": self.config.input_dim, "rule_count": self.config.rule_count,
                           "sample_count": self.config.sample_count, "seed": self.config.seed,
                           "n_terms": self.config.n_terms},
                "variants": [r.summary() for r in self.results.values()],
                "entropy_ordering_holds": self.ordering_holds()}

    def rows(self):
        """``(variant, obs, rule, preliminary, normalized, log, rank)`` for every rule and observation."""
        for name, res in self.results.items():
            order = np.argsort(-res.normalized, axis=1, kind="stable")
            rank = np.empty_like(order)
            np.put_along_axis(rank, order, np.arange(1, order.shape[1] + 1)[None].repeat(len(order), 0), axis=1)
            with np.errstate(divide="ignore"):
                logs = np.log10(res.normalized)
            for b in range(res.normalized.shape[0]):
                for u in range(res.normalized.shape[1]):
                    yield (name, b, u, repr(float(res.preliminary[b, u])), repr(float(res.normalized[b, u])),
                           repr(float(logs[b, u])), int(rank[b, u]))

    def write(self, out_dir) -> tuple[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        table = os.path.join(out_dir, "firing_levels.csv")
        with open(table, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["variant", "obs", "rule", "preliminary", "normalized", "log10_normalized", "rank"])
            writer.writerows(self.rows())
        summary = os.path.join(out_dir, "firing_summary.json")
        with open(summary, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")
        return table, summary


def firing_study(config: FiringStudyConfig | None = None) -> FiringStudy:
    """Firing levels of one random rule base under every requested variant.

    All variants share the same membership layer, premises and observations,
    so differences come from the firing computation alone.
    """
    config = config or FiringStudyConfig()
    rng = np.random.default_rng(config.seed)
    layer = MembershipLayer.random(rng, config.input_dim, config.n_terms)
    bank = RuleBank(config.rule_count, layer.mask, rng=rng)
    hard, _ = sample_structure(bank, evaluate=True)
    X = rng.uniform(0.0, 1.0, size=(config.sample_count, config.input_dim))
    dev = squared_deviation(layer, X)
    study = FiringStudy(config)
    gain, bias = np.ones(config.rule_count), np.zeros(config.rule_count)
    for variant in config.variants:
        w = preliminary_firing(dev, hard.one_hot, variant.mode)
        act = firing.layer_normalize(w, gain, bias)[0] if variant.layer_norm else w
        out = firing.normalize_firing(act, variant.alpha)
        finite = bool(np.isfinite(dev).all() and np.isfinite(w).all() and np.isfinite(act).all()
                      and np.isfinite(out).all())
        study.results[variant.name] = VariantResult(variant, w, out, firing.normalized_entropy(out),
                                                    firing.support_count(out), finite)
    return study


# structure evolution ----------------------------------------------------------------

@dataclass
class StructureReport:
    epochs: list[int]
    steps: list[int]
    thrashing: list[int]
    total_terms: list[int]
    failures: list[int]

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "steps", "thrashing", "total_terms", "new_terms", "epsilon_failures"])
            previous = None
            for row in zip(self.epochs, self.steps, self.thrashing, self.total_terms, self.failures):
                epoch, steps, thrash, terms, fails = row
                new = 0 if previous is None else terms - previous
                writer.writerow([epoch, steps, thrash, terms, new, fails])
                previous = terms


def _total_terms(counts) -> int:
    return int(np.sum([np.sum(c) for c in counts])) if counts else 0


def structure_report(log_path) -> StructureReport:
    """Per-epoch premise edits and term counts from a training metrics stream."""
    if not os.path.exists(log_path):
        raise UsageError(f"metrics log {log_path} does not exist")
    per_epoch: dict[int, list] = {}
    with open(log_path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            slot = per_epoch.setdefault(int(rec.get("epoch", 0)), [0, 0, 0, 0])
            slot[0] += 1
            slot[1] += int(rec.get("structure_edits", 0))
            slot[2] = _total_terms(rec.get("term_counts", []))
            slot[3] += int(rec.get("epsilon_failures", 0))
    if not per_epoch:
        raise UsageError(f"metrics log {log_path} is empty")
    epochs = sorted(per_epoch)
    return StructureReport(epochs, [per_epoch[e][0] for e in epochs], [per_epoch[e][1] for e in epochs],
                           [per_epoch[e][2] for e in epochs], [per_epoch[e][3] for e in epochs])
