"""TSK inference in its softmax form.

A block computes, for a batch ``X``::

    D[b, i, j] = (x_bi - c_ij)^2 / (2 sigma_ij^2)       (negated log-membership)
    w[b, u]    = -sum_ij sel[u, i, j] D[b, i, j]        (/ |C| in Mean mode)
    w          <- layer_norm(w)                          (optional)
    wbar       = softmax(w) or entmax15(w)
    y[b]       = sum_u wbar[b, u] (W_u x_b + b_u)        (optionally CF-weighted)

Firing levels never leave log space before normalization, so the product of
thousands of memberships cannot underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import firing
from .errors import ConfigError, StructuralError, UsageError
from .membership import MembershipLayer, squared_deviation
from .rules import STE, HardSelection, RuleBank, frozen_selection, sample_structure

SUM = "Sum"
MEAN = "Mean"
CF_RENORMALIZED = "renormalized"
CF_RAW = "raw"


@dataclass
class InferenceConfig:
    firing_mode: str = SUM
    alpha: float = 1.0
    layer_norm: bool = False
    ln_eps: float = 1e-5
    certainty_factors: bool = False
    cf_mode: str = CF_RENORMALIZED

    def __post_init__(self):
        if self.firing_mode not in (SUM, MEAN):
            raise ConfigError(f"firing_mode must be Sum or Mean, got {self.firing_mode!r}")
        if self.alpha not in firing.ALPHAS:
            raise ConfigError(f"alpha must be 1.0 or 1.5, got {self.alpha}")
        if self.cf_mode not in (CF_RENORMALIZED, CF_RAW):
            raise ConfigError(f"unknown cf_mode {self.cf_mode!r}")
        if self.ln_eps <= 0:
            raise ConfigError("ln_eps must be positive")


@dataclass
class TskHead:
    """Affine rule consequents ``g_u(x) = W_u x + b_u`` and optional certainty factors."""

    W: np.ndarray  # (|U|, |D|, |C|)
    b: np.ndarray  # (|U|, |D|)
    cf: np.ndarray | None = None  # (|U|,)

    @classmethod
    def init(cls, rng: np.random.Generator, n_rules: int, in_dim: int, out_dim: int,
             certainty_factors: bool = False) -> TskHead:
        bound = 1.0 / np.sqrt(in_dim)
        W = rng.uniform(-bound, bound, size=(n_rules, out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=(n_rules, out_dim))
        cf = np.ones(n_rules) if certainty_factors else None
        return cls(W, b, cf)

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]

    def consequents(self, X: np.ndarray) -> np.ndarray:
        """Per-rule recommendations, shape (|X|, |U|, |D|)."""
        return np.einsum("udc,bc->bud", self.W, X) + self.b[None]


@dataclass
class FiringRecord:
    preliminary: np.ndarray
    normalized: np.ndarray

    @property
    def support_count(self) -> np.ndarray:
        return firing.support_count(self.normalized)


def _selection_tensor(selection) -> np.ndarray:
    return selection.one_hot if isinstance(selection, HardSelection) else np.asarray(selection)


def preliminary_firing(deviation: np.ndarray, selection, mode: str = SUM, mask=None) -> np.ndarray:
    """Log-space rule activations ``w`` of shape (|X|, |U|).

    ``deviation`` is the output of :func:`squared_deviation`; ``selection`` a
    :class:`HardSelection` or any (|U|, |C|, max_terms) weight tensor.
    """
    sel = _selection_tensor(selection)
    n, c, j = deviation.shape
    if sel.shape[1:] != (c, j):
        raise StructuralError(f"selection shape {sel.shape} does not match memberships {deviation.shape}")
    if mask is not None and (sel * ~np.asarray(mask, dtype=bool)[None]).any():
        raise StructuralError("selection references a nonexistent term")
    if mode not in (SUM, MEAN):
        raise ConfigError(f"unknown firing mode {mode!r}")
    w = -(deviation.reshape(n, -1) @ sel.reshape(sel.shape[0], -1).T)
    return w / c if mode == MEAN else w


def layer_normalize(w, gain, bias, eps: float = 1e-5) -> np.ndarray:
    if np.asarray(w).shape[-1] < 2:
        raise ConfigError("layer normalization needs at least two rules")
    return firing.layer_normalize(w, gain, bias, eps)[0]


normalize_firing = firing.normalize_firing


def rule_weights(normalized: np.ndarray, head: TskHead, cf_mode: str = CF_RENORMALIZED) -> np.ndarray:
    if head.cf is None:
        return normalized
    weighted = normalized * head.cf[None]
    if cf_mode == CF_RAW:
        return weighted
    return weighted / weighted.sum(axis=-1, keepdims=True)


def defuzzify(X, normalized, head: TskHead, cf_mode: str = CF_RENORMALIZED) -> np.ndarray:
    """Weighted sum of the rule consequents, shape (|X|, |D|)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != head.W.shape[2] or normalized.shape != (X.shape[0], head.W.shape[0]):
        raise StructuralError(
            f"defuzzify shapes disagree: X {X.shape}, firing {normalized.shape}, W {head.W.shape}"
        )
    weights = rule_weights(normalized, head, cf_mode)
    return np.einsum("bu,bud->bd", weights, head.consequents(X))


@dataclass
class Tape:
    """Intermediates of one block's forward pass."""

    X: np.ndarray
    deviation: np.ndarray
    selection: HardSelection
    soft: np.ndarray
    used: np.ndarray  # selection tensor actually multiplied in forward
    preliminary: np.ndarray
    ln_cache: tuple | None
    activation: np.ndarray  # input to normalize_firing
    normalized: np.ndarray
    weights: np.ndarray
    consequents: np.ndarray
    stamp: tuple
    relaxed: bool = False

    @property
    def record(self) -> FiringRecord:
        return FiringRecord(self.preliminary, self.normalized)


class NeuroFuzzyNetwork:
    """One TSK neuro-fuzzy block: membership layer, rule bank, consequents."""

    def __init__(self, layer: MembershipLayer, rules: RuleBank, head: TskHead,
                 config: InferenceConfig | None = None):
        config = config or InferenceConfig()
        if rules.mask.shape != layer.mask.shape or not (rules.mask == layer.mask).all():
            raise StructuralError("rule bank mask must match the membership layer mask")
        if head.W.shape[0] != rules.n_rules or head.W.shape[2] != layer.n_attributes:
            raise StructuralError("consequent shape disagrees with rules/attributes")
        if config.certainty_factors != (head.cf is not None):
            raise StructuralError("certainty factors must be present exactly when enabled")
        self.layer = layer
        self.rules = rules
        self.head = head
        self.config = config
        n_rules = rules.n_rules
        if config.layer_norm and n_rules < 2:
            raise ConfigError("layer normalization needs at least two rules")
        self.ln_gain = np.ones(n_rules)
        self.ln_bias = np.zeros(n_rules)
        self.version = 0

    @classmethod
    def build(cls, in_dim: int, out_dim: int, n_rules: int, n_terms: int = 3,
              low=0.0, high=1.0, config: InferenceConfig | None = None,
              estimator: str = STE, temperature: float = 1.0, retain_batches: int = 1,
              threshold_percentile: float = 0.0, rng: np.random.Generator | None = None,
              layer: MembershipLayer | None = None) -> NeuroFuzzyNetwork:
        rng = rng if rng is not None else np.random.default_rng(0)
        config = config or InferenceConfig()
        if layer is None:
            layer = MembershipLayer.evenly_spaced(low, high, n_terms, n_attributes=in_dim)
        rules = RuleBank(n_rules, layer.mask, estimator, temperature, retain_batches,
                         threshold_percentile, rng=rng)
        head = TskHead.init(rng, n_rules, in_dim, out_dim, config.certainty_factors)
        return cls(layer, rules, head, config)

    @property
    def in_dim(self) -> int:
        return self.layer.n_attributes

    @property
    def out_dim(self) -> int:
        return self.head.out_dim

    @property
    def blocks(self) -> list[NeuroFuzzyNetwork]:
        return [self]

    def stamp(self) -> tuple:
        return (id(self), self.version, self.layer.version, self.rules.version)

    def parameters(self) -> dict[str, np.ndarray]:
        params = {
            "centers": self.layer.centers,
            "widths": self.layer.widths,
            "logits": self.rules.logits,
            "W": self.head.W,
            "b": self.head.b,
        }
        if self.head.cf is not None:
            params["cf"] = self.head.cf
        if self.config.layer_norm:
            params["ln_gain"] = self.ln_gain
            params["ln_bias"] = self.ln_bias
        return params

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        owner, attr = {
            "centers": (self.layer, "centers"), "widths": (self.layer, "widths"),
            "logits": (self.rules, "logits"), "W": (self.head, "W"), "b": (self.head, "b"),
            "cf": (self.head, "cf"), "ln_gain": (self, "ln_gain"), "ln_bias": (self, "ln_bias"),
        }[name]
        setattr(owner, attr, value)

    def enforce_constraints(self) -> None:
        """Width floor, inert masked slots and pinned masked logits."""
        self.layer.clamp_widths()
        self.rules.pin_masked()
        self.version += 1

    def select(self, rng=None, evaluate: bool = False, freeze: bool = False):
        if freeze:
            return frozen_selection(self.rules)
        return sample_structure(self.rules, rng, evaluate=evaluate)

    def forward(self, X, rng: np.random.Generator | None = None, evaluate: bool = False,
                relaxed: bool = False, freeze: bool = False, selection=None):
        """Run the block; returns ``(y, tape)``.

        ``relaxed`` multiplies the soft selection instead of the one-hot (the
        soft path used for gradient verification); ``freeze`` reuses the
        cached Gumbel noise without ageing it.
        """
        if self.rules.mask.shape != self.layer.mask.shape:
            raise StructuralError("membership layer and rule bank are out of sync")
        X = np.asarray(X, dtype=float)
        dev = squared_deviation(self.layer, X)
        hard, soft = selection if selection is not None else self.select(rng, evaluate, freeze)
        used = soft if relaxed else hard.one_hot
        prelim = preliminary_firing(dev, used, self.config.firing_mode)
        ln_cache = None
        act = prelim
        if self.config.layer_norm:
            act, ln_cache = firing.layer_normalize(prelim, self.ln_gain, self.ln_bias, self.config.ln_eps)
        normalized = firing.normalize_firing(act, self.config.alpha)
        weights = rule_weights(normalized, self.head, self.config.cf_mode)
        cons = self.head.consequents(X)
        y = np.einsum("bu,bud->bd", weights, cons)
        tape = Tape(X, dev, hard, soft, used, prelim, ln_cache, act, normalized, weights, cons,
                    self.stamp(), relaxed)
        return y, tape

    def __call__(self, X, **kwargs) -> np.ndarray:
        return self.forward(X, **kwargs)[0]

    def copy(self) -> NeuroFuzzyNetwork:
        head = TskHead(self.head.W.copy(), self.head.b.copy(),
                       None if self.head.cf is None else self.head.cf.copy())
        twin = NeuroFuzzyNetwork(self.layer.copy(), self.rules.copy(), head,
                                 InferenceConfig(**vars(self.config)))
        twin.ln_gain = self.ln_gain.copy()
        twin.ln_bias = self.ln_bias.copy()
        return twin

    def load_parameters_from(self, other: NeuroFuzzyNetwork) -> None:
        """Hard-copy every parameter and structure array from ``other``."""
        src = other.copy()
        self.layer, self.rules, self.head = src.layer, src.rules, src.head
        self.ln_gain, self.ln_bias = src.ln_gain, src.ln_bias
        self.version += 1

    def to_dict(self) -> dict:
        return {
            "kind": "nfn",
            "config": vars(self.config).copy(),
            "layer": self.layer.to_dict(),
            "rules": self.rules.to_dict(),
            "W": self.head.W.tolist(),
            "b": self.head.b.tolist(),
            "cf": None if self.head.cf is None else self.head.cf.tolist(),
            "ln_gain": self.ln_gain.tolist(),
            "ln_bias": self.ln_bias.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> NeuroFuzzyNetwork:
        layer = MembershipLayer.from_dict(doc["layer"])
        rules = RuleBank.from_dict(doc["rules"])
        cf = None if doc["cf"] is None else np.asarray(doc["cf"], dtype=float)
        head = TskHead(np.asarray(doc["W"], dtype=float), np.asarray(doc["b"], dtype=float), cf)
        net = cls(layer, rules, head, InferenceConfig(**doc["config"]))
        net.ln_gain = np.asarray(doc["ln_gain"], dtype=float)
        net.ln_bias = np.asarray(doc["ln_bias"], dtype=float)
        return net


@dataclass
class NetworkStack:
    """Hierarchical NFN: each block's output is the next block's raw input."""

    layers: list[NeuroFuzzyNetwork] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise StructuralError("a stack needs at least one block")
        for k in range(len(self.layers) - 1):
            if self.layers[k].out_dim != self.layers[k + 1].in_dim:
                raise StructuralError(
                    f"block {k} emits {self.layers[k].out_dim} values but block {k + 1} "
                    f"expects {self.layers[k + 1].in_dim}"
                )
        self.version = 0

    @property
    def blocks(self) -> list[NeuroFuzzyNetwork]:
        return self.layers

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{k}.{name}": p for k, block in enumerate(self.layers)
                for name, p in block.parameters().items()}

    def set_parameter(self, name: str, value) -> None:
        k, inner = name.split(".", 1)
        self.layers[int(k)].set_parameter(inner, value)

    def enforce_constraints(self) -> None:
        for block in self.layers:
            block.enforce_constraints()

    def forward(self, X, **kwargs):
        tapes = []
        out = np.asarray(X, dtype=float)
        for block in self.layers:
            out, tape = block.forward(out, **kwargs)
            tapes.append(tape)
        return out, tapes

    def __call__(self, X, **kwargs):
        return self.forward(X, **kwargs)[0]

    def copy(self) -> NetworkStack:
        return NetworkStack([b.copy() for b in self.layers])

    def load_parameters_from(self, other: NetworkStack) -> None:
        for mine, theirs in zip(self.layers, other.layers):
            mine.load_parameters_from(theirs)

    def to_dict(self) -> dict:
        return {"kind": "stack", "layers": [b.to_dict() for b in self.layers]}

    @classmethod
    def from_dict(cls, doc: dict) -> NetworkStack:
        return cls([NeuroFuzzyNetwork.from_dict(d) for d in doc["layers"]])


def stack(layers) -> NetworkStack:
    return NetworkStack(list(layers))


def forward(network, X, **kwargs):
    """Forward pass of a block or stack; returns ``(y, tape)``."""
    return network.forward(X, **kwargs)


def check_tape(network: NeuroFuzzyNetwork, tape: Tape) -> None:
    if tape.stamp != network.stamp():
        raise UsageError("tape is stale: the network changed after this forward pass")
