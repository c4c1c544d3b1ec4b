"""Command-line entry point: ``neurofuzzy study|train|verify ...``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import config as jobs
from .errors import NeuroFuzzyError

logger = logging.getLogger("neurofuzzy")


def _study_firing(args) -> int:
    from .diagnostics import DEFAULT_VARIANTS, FiringStudyConfig, firing_study

    variants = [v for v in args.variants.split(",") if v.strip()] if args.variants else DEFAULT_VARIANTS
    cfg = FiringStudyConfig(args.dim, args.rules, tuple(variants), args.samples, args.seed, args.terms)
    study = firing_study(cfg)
    table, summary = study.write(args.out)
    for res in study.results.values():
        s = res.summary()
        print(f"{s['variant']:<18} entropy {s['mean_entropy']:.4f}  median support {s['median_support']:.0f}")
    print(f"entropy ordering holds: {study.ordering_holds()}")
    print(f"wrote {table} and {summary}")
    return 0


def _study_structure(args) -> int:
    from .diagnostics import structure_report

    report = structure_report(args.log)
    report.write(args.out)
    print(f"{len(report.epochs)} epochs, {sum(report.thrashing)} premise edits, "
          f"{report.total_terms[-1]} terms at the end; wrote {args.out}")
    return 0


def sin_dataset(job):
    X = np.linspace(job.low, job.high, job.n_samples)[:, None]
    Y = np.sin(X) if job.target == "sin" else np.full_like(X, 0.7)
    return X, Y


def run_supervised(job, metrics=None, checkpoint=None, event_log=None):
    from .inference import InferenceConfig, NeuroFuzzyNetwork
    from .training import AdamState, TrainConfig, fit_supervised, save_checkpoint

    rng = np.random.default_rng(job.seed)
    inference = InferenceConfig(job.firing_mode, job.alpha, job.layer_norm,
                                certainty_factors=job.certainty_factors)
    net = NeuroFuzzyNetwork.build(1, 1, job.n_rules, job.n_terms, job.low, job.high, config=inference,
                                  estimator="STGE" if job.STGE else "STE", temperature=job.temperature,
                                  retain_batches=job.retain_batches,
                                  threshold_percentile=job.threshold_percentile, rng=rng)
    X, Y = sin_dataset(job)
    cfg = TrainConfig(job.steps, job.batch_size, job.lr, job.seed, job.epsilon, job.delay, job.neurogenesis)
    report = fit_supervised(net, X, Y, cfg, metrics_path=metrics, event_log=event_log)
    if checkpoint:
        save_checkpoint(checkpoint, net, AdamState(lr=job.lr), job.steps)
    return net, report


def _train(args) -> int:
    job, harness = jobs.load(args.config, args.kind)
    metrics = args.metrics or harness.get("metrics")
    event_log = args.events or harness.get("event_log")
    if args.kind == "supervised":
        _, report = run_supervised(job, metrics, args.checkpoint or harness.get("checkpoint"), event_log)
        print(f"final MSE {report.final_loss:.6g} after {len(report.losses)} steps, "
              f"{len(report.events)} neurogenesis events")
        return 0
    from .rl.agent import train_loop

    episodes = args.episodes or harness.get("episode_log")
    report = train_loop(job, episode_log=episodes, event_log=event_log, metrics_path=metrics)
    print(f"best evaluation mean {report.best_mean:.3f} vs oracle {report.oracle_mean:.3f} "
          f"(ratio {report.ratio:.3f}) after {report.env_steps} environment steps")
    return 0


def _verify_gradients(args) -> int:
    from .training import gradient_suite

    result = gradient_suite(args.seed, args.networks, max_entries=args.max_entries)
    for name, err in result.cells.items():
        print(f"{'PASS' if err <= args.tol else 'FAIL'} {name:<40} worst rel. error {err:.2e}")
    print(f"{result.networks} networks, {result.checked} entries checked, {result.skipped} skipped")
    return 0 if result.passed(args.tol) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neurofuzzy", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    study = sub.add_parser("study", help="firing-level and structure diagnostics")
    study_sub = study.add_subparsers(dest="study", required=True)
    fire = study_sub.add_parser("firing", help="firing levels of a random rule base")
    fire.add_argument("--dim", type=int, default=1600)
    fire.add_argument("--rules", type=int, default=256)
    fire.add_argument("--variants", default="", help="comma list such as 'Sum+softmax,Mean+LN+entmax15'")
    fire.add_argument("--samples", type=int, default=100)
    fire.add_argument("--terms", type=int, default=3)
    fire.add_argument("--seed", type=int, default=0)
    fire.add_argument("--out", required=True, help="output directory")
    fire.set_defaults(func=_study_firing)
    struct = study_sub.add_parser("structure", help="thrashing and term growth from a metrics log")
    struct.add_argument("--log", required=True)
    struct.add_argument("--out", required=True)
    struct.set_defaults(func=_study_structure)

    train = sub.add_parser("train", help="supervised regression or RL training")
    train.add_argument("kind", choices=("supervised", "rl"))
    train.add_argument("--config", required=True)
    train.add_argument("--metrics", help="per-step JSONL metrics")
    train.add_argument("--events", help="neurogenesis event JSONL")
    train.add_argument("--episodes", help="per-epoch evaluation JSONL (rl)")
    train.add_argument("--checkpoint", help="checkpoint path (supervised)")
    train.set_defaults(func=_train)

    verify = sub.add_parser("verify", help="self-checks")
    verify_sub = verify.add_subparsers(dest="check", required=True)
    grads = verify_sub.add_parser("gradients", help="finite-difference gradient suite")
    grads.add_argument("--seed", type=int, default=0)
    grads.add_argument("--networks", type=int, default=20, help="random networks per configuration cell")
    grads.add_argument("--max-entries", type=int, default=12)
    grads.add_argument("--tol", type=float, default=1e-4)
    grads.set_defaults(func=_verify_gradients)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NeuroFuzzyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
