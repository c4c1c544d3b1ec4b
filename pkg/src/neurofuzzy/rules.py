"""Differentiable selection of rule premises.

Each rule picks exactly one linguistic term per condition attribute.  The
choice is a categorical over real-valued logits: the forward pass uses the
hard one-hot selection and the backward pass routes gradients through the
softmax relaxation (straight-through).  With the Gumbel variant the logits
are perturbed by retained Gumbel(0, 1) noise and divided by a temperature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StructuralError, UsageError

STE = "STE"
STGE = "STGE"
ESTIMATORS = (STE, STGE)

# finite stand-in for -inf on unavailable terms
MASKED_LOGIT = -1e9
CARDINALITY_DECAY = 0.99


@dataclass(frozen=True)
class HardSelection:
    chosen: np.ndarray  # (|U|, |C|) term index per rule and attribute
    one_hot: np.ndarray  # (|U|, |C|, max_terms)

    @classmethod
    def from_chosen(cls, chosen: np.ndarray, n_terms: int) -> HardSelection:
        one_hot = np.zeros(chosen.shape + (n_terms,))
        np.put_along_axis(one_hot, chosen[..., None], 1.0, axis=-1)
        return cls(chosen, one_hot)


class RuleBank:
    """Relaxed connection weights between the condition and rule layers.

    Parameters
    ----------
    n_rules : int
        Size of the fuzzy rule base, fixed for the lifetime of the bank.
    mask : (|C|, max_terms) bool array
        Which terms exist (the membership layer's mask).
    estimator : {"STE", "STGE"}
    temperature : float
        Gumbel-softmax temperature, used by STGE only.
    retain_batches : int
        Number of calls a sampled Gumbel noise tensor is reused for.
    threshold_percentile : float
        Percentile for the constrained Gumbel estimator; 0 disables it.
    rng : numpy Generator, optional
        Used to draw the initial logits (standard normal).
    """

    def __init__(self, n_rules: int, mask, estimator: str = STE, temperature: float = 1.0,
                 retain_batches: int = 1, threshold_percentile: float = 0.0,
                 logits=None, rng: np.random.Generator | None = None, logit_scale: float = 1.0):
        if estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
        if temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {temperature}")
        if retain_batches < 1:
            raise ConfigError("retain_batches must be >= 1")
        if threshold_percentile < 0 or threshold_percentile > 100:
            raise ConfigError("threshold_percentile must lie in [0, 100]")
        if n_rules < 1:
            raise ConfigError("n_rules must be >= 1")
        mask = np.array(mask, dtype=bool, ndmin=2)
        shape = (n_rules,) + mask.shape
        if logits is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            logits = logit_scale * rng.standard_normal(shape)
        logits = np.array(logits, dtype=float)
        if logits.shape != shape:
            raise StructuralError(f"logits shape {logits.shape} != {shape}")

        self.estimator = estimator
        self.temperature = float(temperature)
        self.retain_batches = int(retain_batches)
        self.threshold_percentile = float(threshold_percentile)
        self.mask = mask.copy()
        self.logits = np.where(mask[None], logits, MASKED_LOGIT)
        self.cardinality = np.zeros(mask.shape)
        self.noise: np.ndarray | None = None
        self.noise_age = 0
        self._stale_attributes: set[int] = set()
        self.version = 0

    @property
    def n_rules(self) -> int:
        return self.logits.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.logits.shape[1]

    @property
    def max_terms(self) -> int:
        return self.logits.shape[2]

    def pin_masked(self) -> None:
        self.logits = np.where(self.mask[None], self.logits, MASKED_LOGIT)

    def copy(self) -> RuleBank:
        twin = RuleBank(self.n_rules, self.mask, self.estimator, self.temperature,
                        self.retain_batches, self.threshold_percentile, logits=self.logits.copy())
        twin.cardinality = self.cardinality.copy()
        twin.noise = None if self.noise is None else self.noise.copy()
        twin.noise_age = self.noise_age
        twin._stale_attributes = set(self._stale_attributes)
        twin.version = self.version
        return twin

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "temperature": self.temperature,
            "retain_batches": self.retain_batches,
            "threshold_percentile": self.threshold_percentile,
            "mask": self.mask.astype(int).tolist(),
            "logits": self.logits.tolist(),
            "cardinality": self.cardinality.tolist(),
            "noise": None if self.noise is None else self.noise.tolist(),
            "noise_age": self.noise_age,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> RuleBank:
        logits = np.asarray(doc["logits"], dtype=float)
        bank = cls(logits.shape[0], np.asarray(doc["mask"], dtype=bool), doc["estimator"],
                   doc["temperature"], doc["retain_batches"], doc["threshold_percentile"],
                   logits=logits)
        bank.cardinality = np.asarray(doc["cardinality"], dtype=float)
        if doc.get("noise") is not None:
            bank.noise = np.asarray(doc["noise"], dtype=float)
            bank.noise_age = int(doc.get("noise_age", 0))
        return bank


def _softmax_last(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    v = rng.uniform(np.finfo(float).tiny, 1.0, size=shape)
    return -np.log(-np.log(v))


def update_cardinality(bank: RuleBank, memberships: np.ndarray, decay: float = CARDINALITY_DECAY) -> None:
    """Fold a batch of membership degrees into the decayed scalar cardinality."""
    batch_sum = np.asarray(memberships).sum(axis=0)
    if batch_sum.shape != bank.mask.shape:
        raise StructuralError(f"membership shape {batch_sum.shape} != mask {bank.mask.shape}")
    bank.cardinality = np.where(bank.mask, decay * bank.cardinality + batch_sum, 0.0)


def constrain(bank: RuleBank, cardinality=None, theta: float | None = None) -> np.ndarray:
    """Effective selection mask after dropping rarely activated terms.

    A term is excluded when its scalar cardinality is strictly below the
    ``theta``-th percentile of its attribute's existing terms.  ``theta = 0``
    returns the existence mask unchanged.
    """
    theta = bank.threshold_percentile if theta is None else float(theta)
    if theta < 0:
        raise ConfigError("theta must be >= 0")
    if theta == 0:
        return bank.mask.copy()
    s = bank.cardinality if cardinality is None else np.asarray(cardinality, dtype=float)
    effective = bank.mask.copy()
    for i in range(bank.n_attributes):
        existing = bank.mask[i]
        threshold = np.percentile(s[i, existing], min(theta, 100.0))
        effective[i] = existing & ~(s[i] < threshold)
    return effective


def _refresh_noise(bank: RuleBank, rng: np.random.Generator) -> None:
    if bank.noise is None or bank.noise_age >= bank.retain_batches or bank.noise.shape != bank.logits.shape:
        bank.noise = gumbel_noise(rng, bank.logits.shape)
        bank.noise_age = 0
        bank._stale_attributes.clear()
    elif bank._stale_attributes:
        for i in sorted(bank._stale_attributes):
            bank.noise[:, i, :] = gumbel_noise(rng, (bank.n_rules, bank.max_terms))
        bank._stale_attributes.clear()


def sample_structure(bank: RuleBank, rng: np.random.Generator | None = None,
                     evaluate: bool = False):
    """Draw the hard premise selection and its soft relaxation.

    Returns ``(HardSelection, soft)``.  In evaluation mode no Gumbel noise is
    used and the retained noise cache is left untouched.
    """
    if bank.temperature <= 0:
        raise ConfigError("temperature must be positive")
    allowed = constrain(bank)
    logits = np.where(allowed[None], bank.logits, MASKED_LOGIT)
    if bank.estimator == STE:
        soft = _softmax_last(logits)
        chosen = np.argmax(logits, axis=-1)
    elif evaluate:
        soft = _softmax_last(logits / bank.temperature)
        chosen = np.argmax(logits, axis=-1)
    else:
        if rng is None:
            raise ConfigError("STGE sampling requires a random generator")
        _refresh_noise(bank, rng)
        perturbed = (logits + bank.noise) / bank.temperature
        soft = _softmax_last(perturbed)
        chosen = np.argmax(perturbed, axis=-1)
        bank.noise_age += 1
    soft = np.where(allowed[None], soft, 0.0)
    return HardSelection.from_chosen(chosen, bank.max_terms), soft


def structure_gradient(bank: RuleBank, soft: np.ndarray, one_hot: np.ndarray, upstream) -> np.ndarray:
    """Straight-through gradient of the loss with respect to the logits.

    ``upstream`` is dL/d(selection) evaluated at the forward pass; it is pushed
    through the Jacobian of the softmax that produced ``soft``.
    """
    upstream = np.asarray(upstream, dtype=float)
    if not (soft.shape == one_hot.shape == upstream.shape == bank.logits.shape):
        raise StructuralError(
            f"shape mismatch: soft {soft.shape}, one_hot {one_hot.shape}, "
            f"upstream {upstream.shape}, logits {bank.logits.shape}"
        )
    inner = (soft * upstream).sum(axis=-1, keepdims=True)
    grad = soft * (upstream - inner)
    if bank.estimator == STGE:
        grad = grad / bank.temperature
    return np.where(bank.mask[None], grad, 0.0)


def expand_terms(bank: RuleBank, attribute: int, new_term_index: int, layer=None) -> None:
    """Open a newly created term of ``attribute`` to every rule.

    The new logit is the mean of the slice's existing logits, so the new term
    starts neither favoured nor suppressed.
    """
    if not 0 <= attribute < bank.n_attributes:
        raise StructuralError(f"attribute {attribute} out of range")
    if layer is not None and not (new_term_index < layer.max_terms and layer.mask[attribute, new_term_index]):
        raise StructuralError(f"term ({attribute}, {new_term_index}) does not exist in the membership layer")
    if new_term_index >= bank.max_terms:
        grow = new_term_index + 1 - bank.max_terms
        bank.logits = np.pad(bank.logits, ((0, 0), (0, 0), (0, grow)), constant_values=MASKED_LOGIT)
        bank.mask = np.pad(bank.mask, ((0, 0), (0, grow)))
        bank.cardinality = np.pad(bank.cardinality, ((0, 0), (0, grow)))
        if bank.noise is not None:
            bank.noise = np.pad(bank.noise, ((0, 0), (0, 0), (0, grow)))
    if bank.mask[attribute, new_term_index]:
        raise StructuralError(f"slot ({attribute}, {new_term_index}) is already in use")
    existing = bank.mask[attribute]
    bank.logits[:, attribute, new_term_index] = bank.logits[:, attribute, existing].mean(axis=1)
    bank.mask[attribute, new_term_index] = True
    bank._stale_attributes.add(attribute)
    bank.version += 1


def frozen_selection(bank: RuleBank):
    """Selection from the cached noise without refreshing or ageing it.

    Used wherever the same structure must be re-evaluated many times, e.g.
    finite-difference checks.
    """
    allowed = constrain(bank)
    logits = np.where(allowed[None], bank.logits, MASKED_LOGIT)
    scale = 1.0
    if bank.estimator == STGE:
        if bank.noise is None or bank.noise.shape != bank.logits.shape:
            raise UsageError("no cached Gumbel noise to freeze; sample once first")
        logits = logits + bank.noise
        scale = bank.temperature
    soft = np.where(allowed[None], _softmax_last(logits / scale), 0.0)
    return HardSelection.from_chosen(np.argmax(logits, axis=-1), bank.max_terms), soft
