"""Command-line entry point.

Exit codes: 0 success, 2 invalid input (config, sequence file, dataset
fingerprint), 1 any other failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .acquisition import read_score_dump
from .config import ConfigError, ExperimentConfig, build_bundle, load_config
from .metrics import selection_composition, spearman_by_step, write_composition_csv, write_rho_csv
from .pipeline import replay_arm, run_experiment
from .sequence import SequenceFormatError
from .sequence import read as read_sequence
from .trainer import FingerprintMismatchError

log = logging.getLogger("goldiprox")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _pick_arm(configs: list[ExperimentConfig], arm) -> ExperimentConfig:
    if arm is None:
        return configs[0]
    for cfg in configs:
        if cfg.arm == arm:
            return cfg
    names = ", ".join(str(c.arm) for c in configs)
    raise ConfigError(f"no arm named {arm!r} (have: {names})", "arms")


def cmd_run(args) -> int:
    configs = load_config(args.config, seed_override=args.seed)
    if args.arm is not None:
        configs = [_pick_arm(configs, args.arm)]
    for o in run_experiment(configs):
        last = o.result.rows[-1] if o.result.rows else None
        acc = f"{last.test_accuracy:.4f}" if last else "n/a"
        print(f"{o.config.arm or 'run'}: {o.sequence.header.num_batches} batches, final test accuracy {acc} -> {o.out_dir}")
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = _pick_arm(load_config(args.config, seed_override=args.seed), args.arm)
    result = replay_arm(cfg, args.sequence, out_dir=args.output, probe_path=args.probe)
    acc = f"{result.rows[-1].test_accuracy:.4f}" if result.rows else "n/a"
    print(f"replayed {len(result.consumed)} batches, final test accuracy {acc}")
    return EXIT_OK


def cmd_spearman(args) -> int:
    rows = spearman_by_step(read_score_dump(args.dump_a), read_score_dump(args.dump_b))
    write_rho_csv(args.output, rows)
    positive = sum(1 for _, r in rows if r > 0)
    print(f"{len(rows)} steps, rho > 0 at {positive}")
    return EXIT_OK


def cmd_compose(args) -> int:
    cfg = _pick_arm(load_config(args.dataset_config, seed_override=args.seed), args.arm)
    bundle = build_bundle(cfg)
    seq = read_sequence(args.sequence)
    if seq.header.dataset_fingerprint != bundle.fingerprint:
        raise FingerprintMismatchError(
            f"sequence was recorded on dataset {seq.header.dataset_fingerprint:016x}, "
            f"the config builds {bundle.fingerprint:016x}"
        )
    comp = selection_composition(seq.batches, bundle.train, window=args.window)
    write_composition_csv(args.output, comp)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="goldiprox", description="Online batch selection experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--arm", default=None, help="restrict to one named arm of the config")

    sp = sub.add_parser("run", help="pretrain the holdout model, run selection, write artifacts")
    sp.add_argument("config", type=Path)
    seeded(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("replay", help="train the config's big model on a recorded sequence")
    sp.add_argument("config", type=Path)
    sp.add_argument("sequence", type=Path)
    sp.add_argument("-o", "--output", type=Path, default=None, help="output directory (default <output_dir>/replay)")
    sp.add_argument("--probe", type=Path, default=None, help="score dump whose (step, id) keys are re-scored")
    seeded(sp)
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("spearman", help="per-step rank correlation of two score dumps")
    sp.add_argument("dump_a", type=Path)
    sp.add_argument("dump_b", type=Path)
    sp.add_argument("-o", "--output", type=Path, required=True)
    sp.set_defaults(func=cmd_spearman)

    sp = sub.add_parser("compose", help="corrupted / white-noise share of each recorded batch")
    sp.add_argument("sequence", type=Path)
    sp.add_argument("dataset_config", type=Path)
    sp.add_argument("-o", "--output", type=Path, required=True)
    sp.add_argument("--window", type=int, default=100)
    seeded(sp)
    sp.set_defaults(func=cmd_compose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SequenceFormatError, FingerprintMismatchError) as exc:
        print(f"goldiprox: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError, KeyError) as exc:
        print(f"goldiprox: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
