"""Gaussian fuzzy sets, the masked membership matrix and epsilon-completeness.

Terms are stored densely: attribute ``i`` owns row ``i`` of the ``centers`` and
``widths`` matrices and ``mask[i, j]`` says whether term ``j`` exists.  Entries
outside the mask hold ``0.0`` and never reach an output or a gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, StructuralError

LAYER_SCHEMA = "neurofuzzy.membership-layer/1"

# Width floor relative to an attribute's scale.
MIN_WIDTH_FRACTION = 1e-4


@dataclass(frozen=True)
class GaussianSet:
    center: float
    width: float

    def __post_init__(self):
        if not (np.isfinite(self.center) and np.isfinite(self.width)):
            raise InputError("Gaussian set parameters must be finite")
        if self.width <= 0:
            raise ConfigError(f"width must be positive, got {self.width}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-((x - self.center) ** 2) / (2.0 * self.width**2))


@dataclass(frozen=True)
class CompletenessReport:
    """Observations/attributes whose best membership falls below ``epsilon``."""

    failing: list[tuple[int, int]]
    epsilon: float
    best: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def complete(self) -> bool:
        return not self.failing

    def attributes(self) -> set[int]:
        return {i for _, i in self.failing}


class MembershipLayer:
    """Condition layer holding a ragged bank of Gaussian terms per attribute.

    Parameters
    ----------
    centers, widths : array-like, shape (n_attributes, max_terms)
        Dense parameter storage. Entries where ``mask`` is False are ignored
        and reset to 0.
    mask : array-like of bool, optional
        Existence mask; defaults to all True.
    scale : array-like, optional
        Per-attribute scale used for the width floor (``1e-4 * scale``).
    max_width : float, optional
        Upper clamp for widths relative to ``scale``; off by default.
    """

    def __init__(self, centers, widths, mask=None, scale=None, max_width=None):
        centers = np.array(centers, dtype=float, ndmin=2)
        widths = np.array(widths, dtype=float, ndmin=2)
        if centers.shape != widths.shape or centers.ndim != 2:
            raise StructuralError(
                f"centers {centers.shape} and widths {widths.shape} must be equal 2-D shapes"
            )
        if mask is None:
            mask = np.ones(centers.shape, dtype=bool)
        mask = np.array(mask, dtype=bool, ndmin=2)
        if mask.shape != centers.shape:
            raise StructuralError(f"mask shape {mask.shape} != parameter shape {centers.shape}")
        if not mask.any(axis=1).all():
            raise StructuralError("every attribute needs at least one term")
        if not (np.isfinite(centers[mask]).all() and np.isfinite(widths[mask]).all()):
            raise InputError("term parameters must be finite")
        if (widths[mask] <= 0).any():
            raise ConfigError("widths must be positive")
        if scale is None:
            scale = np.ones(centers.shape[0])
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (centers.shape[0],)).copy()
        if (scale <= 0).any():
            raise ConfigError("attribute scales must be positive")

        self.centers = np.where(mask, centers, 0.0)
        self.widths = np.where(mask, widths, 0.0)
        self.mask = mask
        self.scale = scale
        self.max_width = max_width
        # bumped on every structural or parametric mutation
        self.version = 0

    # construction helpers -------------------------------------------------

    @classmethod
    def from_terms(cls, terms, scale=None, max_width=None) -> MembershipLayer:
        if not terms or any(len(row) == 0 for row in terms):
            raise StructuralError("every attribute needs at least one term")
        width = max(len(row) for row in terms)
        centers = np.zeros((len(terms), width))
        widths = np.zeros((len(terms), width))
        mask = np.zeros((len(terms), width), dtype=bool)
        for i, row in enumerate(terms):
            for j, term in enumerate(row):
                centers[i, j] = term.center
                widths[i, j] = term.width
                mask[i, j] = True
        return cls(centers, widths, mask, scale=scale, max_width=max_width)

    @classmethod
    def evenly_spaced(cls, low, high, n_terms: int, n_attributes: int | None = None) -> MembershipLayer:
        """Partition ``[low, high]`` of each attribute with ``n_terms`` Gaussians.

        Neighbouring terms cross at membership 0.5.
        """
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        if n_attributes is not None:
            low = np.broadcast_to(low, (n_attributes,))
            high = np.broadcast_to(high, (n_attributes,))
        if n_terms < 1:
            raise ConfigError("n_terms must be >= 1")
        span = high - low
        if (span <= 0).any():
            raise ConfigError("high must exceed low for every attribute")
        grid = np.linspace(0.0, 1.0, n_terms) if n_terms > 1 else np.array([0.5])
        centers = low[:, None] + span[:, None] * grid[None, :]
        spacing = span / max(n_terms - 1, 1)
        # exp(-(d/2)^2 / (2 s^2)) = 0.5  =>  s = d / (2 sqrt(2 ln 2))
        widths = np.repeat((spacing / (2.0 * np.sqrt(2.0 * np.log(2.0))))[:, None], n_terms, axis=1)
        return cls(centers, widths, scale=span)

    @classmethod
    def random(cls, rng: np.random.Generator, n_attributes: int, n_terms: int,
               low=0.0, high=1.0) -> MembershipLayer:
        """Random centers in ``[low, high]`` with widths around a term's share of the range."""
        span = float(high) - float(low)
        centers = rng.uniform(low, high, size=(n_attributes, n_terms))
        widths = span / n_terms * rng.uniform(0.5, 1.5, size=(n_attributes, n_terms))
        return cls(centers, widths, scale=np.full(n_attributes, span))

    # structure -----------------------------------------------------------

    @property
    def n_attributes(self) -> int:
        return self.centers.shape[0]

    @property
    def max_terms(self) -> int:
        return self.centers.shape[1]

    @property
    def term_counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @property
    def min_width(self) -> np.ndarray:
        return MIN_WIDTH_FRACTION * self.scale

    def terms(self, attribute: int) -> list[GaussianSet]:
        js = np.flatnonzero(self.mask[attribute])
        return [GaussianSet(float(self.centers[attribute, j]), float(self.widths[attribute, j])) for j in js]

    def add_term(self, attribute: int, term: GaussianSet) -> int:
        """Append ``term`` to ``attribute``; returns the new term's column index.

        The dense arrays grow by one column when the attribute is already full.
        """
        if not 0 <= attribute < self.n_attributes:
            raise StructuralError(f"attribute {attribute} out of range")
        j = int(self.term_counts[attribute])
        if j == self.max_terms:
            pad = ((0, 0), (0, 1))
            self.centers = np.pad(self.centers, pad)
            self.widths = np.pad(self.widths, pad)
            self.mask = np.pad(self.mask, pad)
        if self.mask[attribute, j]:
            raise StructuralError(f"slot ({attribute}, {j}) already holds a term")
        self.centers[attribute, j] = term.center
        self.widths[attribute, j] = max(term.width, self.min_width[attribute])
        self.mask[attribute, j] = True
        self.version += 1
        return j

    def clamp_widths(self) -> None:
        lo = self.min_width[:, None]
        clamped = np.maximum(self.widths, lo)
        if self.max_width is not None:
            clamped = np.minimum(clamped, self.max_width * self.scale[:, None])
        self.widths = np.where(self.mask, clamped, 0.0)
        self.centers = np.where(self.mask, self.centers, 0.0)

    def copy(self) -> MembershipLayer:
        twin = MembershipLayer(self.centers.copy(), np.where(self.mask, self.widths, 1.0),
                               self.mask.copy(), self.scale.copy(), self.max_width)
        twin.version = self.version
        return twin

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": LAYER_SCHEMA,
            "scale": [float(s) for s in self.scale],
            "max_width": self.max_width,
            "attributes": [
                [[t.center, t.width] for t in self.terms(i)] for i in range(self.n_attributes)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> MembershipLayer:
        if doc.get("schema") != LAYER_SCHEMA:
            raise StructuralError(f"unsupported layer schema {doc.get('schema')!r}")
        terms = [[GaussianSet(float(c), float(s)) for c, s in row] for row in doc["attributes"]]
        return cls.from_terms(terms, scale=doc.get("scale"), max_width=doc.get("max_width"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> MembershipLayer:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_batch(layer: MembershipLayer, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=float)
    if batch.ndim == 1 and layer.n_attributes == batch.shape[0]:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != layer.n_attributes:
        raise StructuralError(
            f"batch shape {batch.shape} incompatible with {layer.n_attributes} attributes"
        )
    if not np.isfinite(batch).all():
        raise InputError("batch contains non-finite values")
    return batch


def squared_deviation(layer: MembershipLayer, batch) -> np.ndarray:
    """Return ``(x - c)^2 / (2 sigma^2)`` with shape (|X|, |C|, max_terms), zero where masked.

    This is the negated log-membership and is what rule firing accumulates.
    """
    batch = _check_batch(layer, batch)
    safe_widths = np.where(layer.mask, layer.widths, 1.0)
    diff = batch[:, :, None] - layer.centers[None, :, :]
    dev = diff**2 / (2.0 * safe_widths[None, :, :] ** 2)
    return np.where(layer.mask[None, :, :], dev, 0.0)


def membership(layer: MembershipLayer, batch) -> np.ndarray:
    """Membership degrees of every input to every existing term; 0 for absent terms."""
    dev = squared_deviation(layer, batch)
    return np.exp(-dev) * layer.mask[None, :, :]


def membership_gradients(layer: MembershipLayer, batch, upstream):
    """Reverse-mode pass of :func:`membership`.

    Returns ``(d_centers, d_widths, d_input)`` given ``upstream = dL/dmu``.
    """
    batch = _check_batch(layer, batch)
    upstream = np.asarray(upstream, dtype=float)
    expected = (batch.shape[0], layer.n_attributes, layer.max_terms)
    if upstream.shape != expected:
        raise StructuralError(f"upstream shape {upstream.shape} != {expected}")
    mu = membership(layer, batch)
    safe_widths = np.where(layer.mask, layer.widths, 1.0)[None]
    diff = batch[:, :, None] - layer.centers[None]
    g = upstream * mu
    d_centers = (g * diff / safe_widths**2).sum(axis=0)
    d_widths = (g * diff**2 / safe_widths**3).sum(axis=0)
    d_input = -(g * diff / safe_widths**2).sum(axis=2)
    return (np.where(layer.mask, d_centers, 0.0), np.where(layer.mask, d_widths, 0.0), d_input)


def deviation_gradients(layer: MembershipLayer, batch, upstream):
    """Reverse-mode pass of :func:`squared_deviation` (the log-space path)."""
    batch = _check_batch(layer, batch)
    safe_widths = np.where(layer.mask, layer.widths, 1.0)[None]
    diff = batch[:, :, None] - layer.centers[None]
    g = np.where(layer.mask[None], upstream, 0.0)
    d_centers = -(g * diff / safe_widths**2).sum(axis=0)
    d_widths = -(g * diff**2 / safe_widths**3).sum(axis=0)
    d_input = (g * diff / safe_widths**2).sum(axis=2)
    return d_centers, d_widths, d_input


def check_completeness(layer: MembershipLayer, batch, epsilon: float) -> CompletenessReport:
    """List every (observation, attribute) whose best existing term has membership < epsilon."""
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon}")
    batch = np.asarray(batch, dtype=float)
    if batch.size == 0:
        return CompletenessReport([], epsilon, np.zeros((0, layer.n_attributes)))
    best = membership(layer, batch).max(axis=2)
    rows, cols = np.nonzero(best < epsilon)
    return CompletenessReport(list(zip(rows.tolist(), cols.tolist())), epsilon, best)
