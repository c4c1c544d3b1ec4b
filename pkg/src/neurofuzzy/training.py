"""Reverse-mode gradients, Adam, finite-difference verification and supervised fitting."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import firing
from .errors import StructuralError, TrainingError, UsageError
from .inference import CF_RAW, MEAN, SUM, InferenceConfig, NetworkStack, NeuroFuzzyNetwork, Tape, check_tape
from .membership import GaussianSet, MembershipLayer, deviation_gradients
from .neurogenesis import NeurogenesisState, grow
from .rules import STE, STGE, structure_gradient, update_cardinality

logger = logging.getLogger(__name__)


@dataclass
class GradientSet:
    params: dict[str, np.ndarray]
    d_input: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()


def _backward_block(net: NeuroFuzzyNetwork, tape: Tape, dy: np.ndarray) -> GradientSet:
    check_tape(net, tape)
    dy = np.asarray(dy, dtype=float)
    if dy.shape != (tape.X.shape[0], net.out_dim):
        raise StructuralError(f"upstream shape {dy.shape} != {(tape.X.shape[0], net.out_dim)}")
    head, cfg = net.head, net.config
    X = tape.X
    grads: dict[str, np.ndarray] = {}

    # defuzzification
    d_weights = np.einsum("bd,bud->bu", dy, tape.consequents)
    dg = tape.weights[:, :, None] * dy[:, None, :]
    grads["W"] = np.einsum("bud,bc->udc", dg, X)
    grads["b"] = dg.sum(axis=0)
    d_input = np.einsum("bud,udc->bc", dg, head.W)

    # certainty factors
    if head.cf is not None:
        if cfg.cf_mode == CF_RAW:
            d_scaled = d_weights
        else:
            total = (tape.normalized * head.cf[None]).sum(axis=-1, keepdims=True)
            d_scaled = (d_weights - (tape.weights * d_weights).sum(axis=-1, keepdims=True)) / total
        grads["cf"] = (d_scaled * tape.normalized).sum(axis=0)
        d_normalized = d_scaled * head.cf[None]
    else:
        d_normalized = d_weights

    d_act = firing.normalize_firing_backward(tape.normalized, d_normalized, cfg.alpha)
    if cfg.layer_norm:
        d_prelim, grads["ln_gain"], grads["ln_bias"] = firing.layer_normalize_backward(
            d_act, tape.ln_cache, net.ln_gain)
    else:
        d_prelim = d_act

    # preliminary firing w = -scale * D @ sel^T
    n, c, j = tape.deviation.shape
    scale = 1.0 / c if cfg.firing_mode == MEAN else 1.0
    used = tape.used.reshape(tape.used.shape[0], -1)
    d_dev = (-scale * (d_prelim @ used)).reshape(n, c, j)
    d_sel = (-scale * (d_prelim.T @ tape.deviation.reshape(n, -1))).reshape(tape.used.shape)
    grads["logits"] = structure_gradient(net.rules, tape.soft, tape.selection.one_hot, d_sel)

    d_centers, d_widths, d_x_mem = deviation_gradients(net.layer, X, d_dev)
    grads["centers"] = d_centers
    grads["widths"] = d_widths
    return GradientSet(grads, d_input + d_x_mem)


def backward(network, tape, d_loss_d_y) -> GradientSet:
    """Gradients of every parameter given dL/dy for the forward pass that produced ``tape``."""
    if hasattr(network, "backward"):
        return network.backward(tape, d_loss_d_y)
    if isinstance(network, NetworkStack):
        params: dict[str, np.ndarray] = {}
        upstream = d_loss_d_y
        for k in reversed(range(len(network.layers))):
            gs = _backward_block(network.layers[k], tape[k], upstream)
            params.update({f"{k}.{name}": g for name, g in gs.items()})
            upstream = gs.d_input
        return GradientSet(params, upstream)
    return _backward_block(network, tape, d_loss_d_y)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "step": self.step,
            "m": {k: a.tolist() for k, a in self.m.items()},
            "v": {k: a.tolist() for k, a in self.v.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> AdamState:
        state = cls(doc["lr"], doc["beta1"], doc["beta2"], doc["eps"], doc["step"])
        state.m = {k: np.asarray(a, dtype=float) for k, a in doc["m"].items()}
        state.v = {k: np.asarray(a, dtype=float) for k, a in doc["v"].items()}
        return state


def _fit_moment(moment: np.ndarray | None, shape) -> np.ndarray:
    # parameters only ever grow by appended terms, so pad at the end of each axis
    if moment is None:
        return np.zeros(shape)
    if moment.shape == shape:
        return moment
    pad = [(0, new - old) for old, new in zip(moment.shape, shape)]
    if any(p < 0 for _, p in pad):
        raise StructuralError(f"parameter shrank from {moment.shape} to {shape}")
    return np.pad(moment, pad)


def adam_step(network, grads: GradientSet, state: AdamState) -> None:
    """Bias-corrected Adam update in place, followed by the width clamp."""
    params = network.parameters()
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.params.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise StructuralError(f"gradient shape {g.shape} != parameter {name} shape {p.shape}")
        m = _fit_moment(state.m.get(name), p.shape)
        v = _fit_moment(state.v.get(name), p.shape)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    network.enforce_constraints()


# checkpoints ------------------------------------------------------------------------

CHECKPOINT_SCHEMA = "neurofuzzy.checkpoint/1"


def network_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "nfn":
        return NeuroFuzzyNetwork.from_dict(doc)
    if kind == "stack":
        return NetworkStack.from_dict(doc)
    if kind == "mlp":
        from .rl.mlp import MLP
        return MLP.from_dict(doc)
    raise UsageError(f"unknown network kind {kind!r}")


def save_checkpoint(path, network, optimizer: AdamState | None = None, step: int = 0) -> None:
    """Network structure and parameters plus optimizer state as one JSON document."""
    doc = {"schema": CHECKPOINT_SCHEMA, "step": step, "network": network.to_dict(),
           "optimizer": None if optimizer is None else optimizer.to_dict()}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Return ``(network, optimizer or None, step)``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise UsageError(f"{path} is not a {CHECKPOINT_SCHEMA} checkpoint")
    opt = None if doc["optimizer"] is None else AdamState.from_dict(doc["optimizer"])
    return network_from_dict(doc["network"]), opt, int(doc["step"])


# finite differences ---------------------------------------------------------------

@dataclass
class GradientCheck:
    errors: dict[str, float]
    checked: dict[str, int]
    skipped: dict[str, int]

    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.worst() <= tol


def relative_error(analytic, numeric, floor: float = 1e-5) -> np.ndarray:
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _entry_mask(network, name: str, p: np.ndarray) -> np.ndarray:
    block_name = name.split(".")[-1]
    block = network.layers[int(name.split(".")[0])] if "." in name else network
    if block_name in ("centers", "widths"):
        return block.layer.mask.copy()
    if block_name == "logits":
        return np.broadcast_to(block.rules.mask[None], p.shape).copy()
    return np.ones(p.shape, dtype=bool)


def _supports(tapes) -> list[np.ndarray]:
    # only firing tapes have a sparse support; other models contribute nothing
    tapes = tapes if isinstance(tapes, list) else [tapes]
    return [t.normalized > 0 for t in tapes if hasattr(t, "normalized")]


def check_gradients(network, X, seed: int = 0, relaxed: bool = True, h: float = 1e-4,
                    include=None, max_entries: int | None = None, order: int = 4) -> GradientCheck:
    """Compare :func:`backward` against central finite differences.

    The structure is frozen (cached Gumbel noise, no ageing) for every
    evaluation.  With ``relaxed=True`` the forward pass multiplies the soft
    selection, so logits get an exact gradient; otherwise logits are skipped.
    The loss is ``sum(y * R)`` for a fixed random ``R``.  ``order`` selects
    the 2- or 4-point central stencil.  Entries whose perturbation moves a
    sparse (entmax) support boundary are skipped.
    """
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=float)
    for block in network.blocks:
        if block.rules.estimator == STGE and block.rules.noise is None:
            block.select(np.random.default_rng(seed + 1))

    def run():
        return network.forward(X, relaxed=relaxed, freeze=True)

    if order == 2:
        offsets, weights = (1, -1), (0.5, -0.5)
    elif order == 4:
        offsets, weights = (2, 1, -1, -2), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)
    else:
        raise ValueError("order must be 2 or 4")

    y, tape = run()
    R = rng.standard_normal(y.shape)
    grads = backward(network, tape, R)
    base_support = _supports(tape)

    errors, checked, skipped = {}, {}, {}
    for name, p in network.parameters().items():
        leaf = name.split(".")[-1]
        if include is not None and leaf not in include:
            continue
        if leaf == "logits" and not relaxed:
            continue
        candidates = np.argwhere(_entry_mask(network, name, p))
        if max_entries is not None and len(candidates) > max_entries:
            candidates = candidates[rng.choice(len(candidates), max_entries, replace=False)]
        worst, n_checked, n_skipped = 0.0, 0, 0
        for idx in map(tuple, candidates):
            orig = p[idx]
            step = h * max(1.0, abs(orig))
            values, moved = {}, False
            for k in offsets:
                p[idx] = orig + k * step
                y_k, t_k = run()
                values[k] = (y_k * R).sum()
                moved = moved or any((a != b).any() for a, b in zip(base_support, _supports(t_k)))
            p[idx] = orig
            if moved:
                n_skipped += 1
                continue
            numeric = sum(c * values[k] for k, c in zip(offsets, weights)) / step
            worst = max(worst, float(relative_error(grads[name][idx], numeric)))
            n_checked += 1
        errors[name], checked[name], skipped[name] = worst, n_checked, n_skipped
    return GradientCheck(errors, checked, skipped)


CELLS = tuple(
    {"firing_mode": mode, "alpha": alpha, "layer_norm": ln, "certainty_factors": cf, "estimator": est}
    for mode in (SUM, MEAN) for alpha in (1.0, 1.5) for ln in (False, True)
    for cf in (False, True) for est in (STE, STGE)
)


def cell_name(cell: dict) -> str:
    return "{firing_mode}/a={alpha}/LN={layer_norm}/CF={certainty_factors}/{estimator}".format(**cell)


def random_network(rng: np.random.Generator, cell: dict, max_attributes: int = 6, max_rules: int = 8,
                   max_outputs: int = 3) -> NeuroFuzzyNetwork:
    """Small random network for one configuration cell, with uneven term counts."""
    n_attr = int(rng.integers(1, max_attributes + 1))
    n_rules = int(rng.integers(2, max_rules + 1))
    n_out = int(rng.integers(1, max_outputs + 1))
    counts = rng.integers(1, 5, size=n_attr)
    # with one term everywhere all rules coincide and a layer-normalized row is constant
    counts[rng.integers(n_attr)] = max(2, counts.max())
    layer = MembershipLayer.from_terms([
        [GaussianSet(float(rng.uniform(0, 1)), float(rng.uniform(0.2, 0.6))) for _ in range(k)]
        for k in counts
    ])
    config = InferenceConfig(cell["firing_mode"], cell["alpha"], cell["layer_norm"],
                             certainty_factors=cell["certainty_factors"])
    net = NeuroFuzzyNetwork.build(n_attr, n_out, n_rules, config=config, estimator=cell["estimator"],
                                  temperature=float(rng.uniform(0.5, 1.5)), rng=rng, layer=layer)
    if net.head.cf is not None:
        net.head.cf = rng.uniform(0.5, 1.5, size=n_rules)
    net.ln_gain = rng.uniform(0.5, 1.5, size=n_rules)
    net.ln_bias = rng.normal(0.0, 0.3, size=n_rules)
    if cell["estimator"] == STGE:
        net.select(rng)
    return net


@dataclass
class SuiteResult:
    cells: dict[str, float]  # worst relative error per cell
    checked: int
    skipped: int
    networks: int

    def worst(self) -> float:
        return max(self.cells.values(), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.worst() <= tol


def gradient_suite(seed: int = 0, networks_per_cell: int = 20, batch: int = 4,
                   max_entries: int | None = 12, relaxed: bool = True) -> SuiteResult:
    """Finite-difference check of every parameter tensor across all configuration cells.

    ``max_entries`` caps how many entries of each tensor are perturbed.
    """
    rng = np.random.default_rng(seed)
    cells, checked, skipped = {}, 0, 0
    for cell in CELLS:
        worst = 0.0
        for _ in range(networks_per_cell):
            net = random_network(rng, cell)
            X = rng.uniform(-0.2, 1.2, size=(batch, net.in_dim))
            res = check_gradients(net, X, seed=int(rng.integers(2**31)), relaxed=relaxed,
                                  max_entries=max_entries)
            worst = max(worst, res.worst())
            checked += sum(res.checked.values())
            skipped += sum(res.skipped.values())
        cells[cell_name(cell)] = worst
    return SuiteResult(cells, checked, skipped, networks_per_cell * len(CELLS))


# supervised fitting ----------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    epsilon: float = 0.4
    delay: int = 3
    neurogenesis: bool = True


@dataclass
class TrainingReport:
    losses: list[float]
    metrics: list[dict]
    events: list
    final_loss: float


def mse(y: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient with respect to ``y``."""
    diff = y - target
    return float((diff**2).mean()), 2.0 * diff / diff.size


def term_counts(network) -> list[list[int]]:
    return [block.layer.term_counts.tolist() for block in network.blocks]


class StructureTracker:
    """Counts premise slots whose chosen term changed since the previous call."""

    def __init__(self):
        self.previous: list[np.ndarray | None] | None = None

    def update(self, tapes) -> int:
        tapes = tapes if isinstance(tapes, list) else [tapes]
        chosen = [t.selection.chosen for t in tapes]
        edits = 0
        if self.previous is not None:
            edits = int(sum((a != b).sum() for a, b in zip(self.previous, chosen)))
        self.previous = [c.copy() for c in chosen]
        return edits


def neurogenesis_round(network, states: list[NeurogenesisState], tapes, step: int):
    """Grow every block from the inputs it saw in the latest forward pass."""
    tapes = tapes if isinstance(tapes, list) else [tapes]
    failures, added = 0, []
    for block, state, tape in zip(network.blocks, states, tapes):
        report, new = grow(state, block.layer, block.rules, tape.X, step)
        failures += len(report.failing)
        added.extend(new)
    return failures, added


def training_step(network, X, target, opt: AdamState, rng: np.random.Generator):
    y, tape = network.forward(X, rng=rng)
    loss, dy = mse(y, target)
    if not np.isfinite(loss):
        raise TrainingError(f"loss diverged at step {opt.step}")
    adam_step(network, backward(network, tape, dy), opt)
    for block, t in zip(network.blocks, tape if isinstance(tape, list) else [tape]):
        update_cardinality(block.rules, np.exp(-t.deviation) * block.layer.mask[None])
    return loss, tape


def fit_supervised(network, X, Y, config: TrainConfig | None = None, metrics_path=None,
                   event_log=None) -> TrainingReport:
    """Minibatch MSE regression with Adam and neurogenesis after every batch."""
    config = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(len(X), -1)
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise TrainingError("dataset contains non-finite values")
    rng = np.random.default_rng(config.seed)
    opt = AdamState(lr=config.lr)
    if event_log:
        open(event_log, "w").close()
    states = [NeurogenesisState(b.in_dim, config.delay, config.epsilon, log_path=event_log)
              for b in network.blocks]
    tracker = StructureTracker()
    losses, metrics = [], []
    sink = open(metrics_path, "w") if metrics_path else None
    try:
        step = 0
        epoch = 0
        while step < config.steps:
            order = rng.permutation(len(X))
            for start in range(0, len(X), config.batch_size):
                if step >= config.steps:
                    break
                idx = order[start:start + config.batch_size]
                loss, tape = training_step(network, X[idx], Y[idx], opt, rng)
                edits = tracker.update(tape)
                failures = 0
                if config.neurogenesis:
                    failures, _ = neurogenesis_round(network, states, tape, step)
                record = {"step": step, "epoch": epoch, "loss": loss, "epsilon_failures": failures,
                          "structure_edits": edits, "term_counts": term_counts(network)}
                losses.append(loss)
                metrics.append(record)
                if sink:
                    sink.write(json.dumps(record) + "\n")
                step += 1
            epoch += 1
    finally:
        if sink:
            sink.close()
    events = [ev for s in states for ev in s.events]
    y = network.forward(X, evaluate=True)[0]
    final = mse(y, Y)[0]
    logger.info("fit_supervised finished: %d steps, final MSE %.3g", config.steps, final)
    return TrainingReport(losses, metrics, events, final)
