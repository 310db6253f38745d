"""Run and replay experiments from parsed configs, writing artifacts to disk."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from . import sequence as seqfile
from ._io import atomic_text, atomic_write_bytes
from .acquisition import IrreducibleLossTable, read_score_dump, write_score_dump
from .config import ExperimentConfig, build_bundle, resolve_models
from .data import DatasetBundle
from .metrics import (
    selection_composition,
    svg_line_chart,
    write_composition_csv,
    write_metrics_csv,
)
from .trainer import TrainRunResult, replay_sequence, run_selection_loop, train_irreducible_model

log = logging.getLogger(__name__)

SEQUENCE_NAME = "sequence.gpsq"
METRICS_NAME = "metrics.csv"
SCORES_NAME = "scores.csv"
IRREDUCIBLE_NAME = "irreducible.csv"
COMPOSITION_NAME = "composition.csv"
MANIFEST_NAME = "manifest.json"


@dataclass
class ArmOutcome:
    config: ExperimentConfig
    bundle: DatasetBundle
    result: TrainRunResult
    sequence: seqfile.SequenceFile
    irr_table: IrreducibleLossTable | None
    out_dir: Path


def _key(*parts) -> str:
    return json.dumps(parts, sort_keys=True, default=str)


class _Cache:
    """Shares datasets and holdout models between arms with identical settings."""

    def __init__(self):
        self.bundles: dict[str, DatasetBundle] = {}
        self.tables: dict[str, IrreducibleLossTable] = {}

    def bundle(self, cfg: ExperimentConfig) -> DatasetBundle:
        k = _key(cfg.as_dict()["dataset"], cfg.as_dict()["corruption"], cfg.seed)
        if k not in self.bundles:
            self.bundles[k] = build_bundle(cfg)
        elif cfg.proxy is None:
            resolve_models(cfg, self.bundles[k].input_dim)
        return self.bundles[k]

    def table(self, cfg: ExperimentConfig, bundle: DatasetBundle) -> IrreducibleLossTable | None:
        if cfg.irreducible is None:
            return None
        k = _key(bundle.fingerprint, cfg.as_dict()["irreducible"], cfg.seed)
        if k not in self.tables:
            _, self.tables[k] = train_irreducible_model(cfg.irreducible, bundle.validation, bundle.train, cfg.seed)
        return self.tables[k]


def write_irreducible_csv(path, table: IrreducibleLossTable) -> None:
    with atomic_text(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "loss"])
        for i, v in zip(table.ids.tolist(), table.losses.tolist()):
            w.writerow([i, repr(float(v))])


def read_irreducible_csv(path, source_fingerprint="") -> IrreducibleLossTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids = np.array([int(r["id"]) for r in rows], dtype=np.int64)
    losses = np.array([float(r["loss"]) for r in rows])
    return IrreducibleLossTable(ids, losses, source_fingerprint)


def _write_svg(path, text) -> None:
    atomic_write_bytes(path, text.encode())


def _write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _manifest(cfg: ExperimentConfig, bundle, wall, extra) -> dict:
    return {
        "goldiprox_version": __version__,
        "config": cfg.as_dict(),
        "config_hash": cfg.content_hash(),
        "seeds": {"run": cfg.seed, "corruption": cfg.corruption.seed, "selection": cfg.selection.seed},
        "rng_streams": {"schedule": 1, "dropout": 2, "scoring": 3, "shuffle": 4},
        "dataset_fingerprint": f"{bundle.fingerprint:016x}",
        "kernel_backend": _kernels.BACKEND,
        "wall_clock_seconds": round(wall, 3),
        "substitutions": cfg.substitutions(),
        **extra,
    }


def _write_charts(out_dir: Path, result: TrainRunResult, comp) -> None:
    steps = [r.step for r in result.rows]
    _write_svg(out_dir / "accuracy.svg", 
        svg_line_chart(steps, {"test accuracy": [r.test_accuracy for r in result.rows]}, "test accuracy")
    )
    _write_svg(out_dir / "composition.svg", 
        svg_line_chart(
            comp.steps,
            {"corrupted": comp.windowed(comp.corrupted), "white noise": comp.windowed(comp.white_noise)},
            f"selected-batch composition ({comp.window}-step mean)",
        )
    )


def run_arm(cfg: ExperimentConfig, cache: _Cache | None = None, write=True) -> ArmOutcome:
    """Holdout pretraining (if configured), the selection loop, and artifact output."""
    cache = cache or _Cache()
    t0 = time.perf_counter()
    bundle = cache.bundle(cfg)
    table = cache.table(cfg, bundle)
    _, seq, result = run_selection_loop(cfg.selection, cfg.proxy, bundle, table, seed=cfg.seed)
    wall = time.perf_counter() - t0
    out = Path(cfg.output_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        seqfile.write(out / SEQUENCE_NAME, seq.header, seq.batches)
        write_metrics_csv(out / METRICS_NAME, result.rows)
        comp = selection_composition(seq.batches, bundle.train)
        write_composition_csv(out / COMPOSITION_NAME, comp)
        if cfg.selection.dump_scores:
            write_score_dump(out / SCORES_NAME, result.score_dumps)
        if table is not None:
            write_irreducible_csv(out / IRREDUCIBLE_NAME, table)
        if cfg.charts:
            _write_charts(out, result, comp)
        extra = {
            "phase": "run",
            "final_param_fingerprint": result.final_fingerprint,
            "irreducible_model_fingerprint": table.source_model_fingerprint if table is not None else None,
        }
        _write_json(out / MANIFEST_NAME, _manifest(cfg, bundle, wall, extra))
        log.info("arm %s done in %.1fs -> %s", cfg.arm or "-", wall, out)
    return ArmOutcome(cfg, bundle, result, seq, table, out)


def run_experiment(configs: list[ExperimentConfig], write=True) -> list[ArmOutcome]:
    cache = _Cache()
    outcomes = [run_arm(cfg, cache, write) for cfg in configs]
    if write and len(configs) > 1:
        _write_summary(outcomes)
    return outcomes


def _tail_mean(x, n):
    return float(np.mean(x[-n:])) if len(x) else float("nan")


def _after_mean(x, skip):
    # falls back to the whole run when it is shorter than the skip
    return float(np.mean(x[skip:] if len(x) > skip else x)) if len(x) else float("nan")


def _write_summary(outcomes: list[ArmOutcome]) -> None:
    """Per-arm headline numbers and overlay charts in the shared parent directory."""
    parent = outcomes[0].out_dir.parent
    with atomic_text(parent / "summary.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "kind", "seed", "final_test_accuracy", "corrupted_frac_last500", "whitenoise_frac_after_warmup"])
        for o in outcomes:
            sel = o.config.selection
            w.writerow([
                o.config.arm, sel.kind.value, o.config.seed, repr(o.result.rows[-1].test_accuracy),
                repr(_tail_mean(o.result.corrupted_frac, 500)),
                repr(_after_mean(o.result.whitenoise_frac, sel.bald_warmup_steps)),
            ])
    if not all(o.config.charts for o in outcomes):
        return
    steps = [r.step for r in outcomes[0].result.rows]
    _write_svg(parent / "accuracy.svg", 
        svg_line_chart(steps, {o.config.arm: [r.test_accuracy for r in o.result.rows] for o in outcomes}, "test accuracy")
    )
    for name, attr in (("corrupted", "corrupted"), ("whitenoise", "white_noise")):
        series = {}
        for o in outcomes:
            comp = selection_composition(o.sequence.batches, o.bundle.train)
            series[o.config.arm] = comp.windowed(getattr(comp, attr))
            xs = comp.steps
        _write_svg(parent / f"{name}.svg", svg_line_chart(xs, series, f"{name} share of selected points (100-step mean)"))


def replay_arm(cfg: ExperimentConfig, sequence_path, out_dir=None, probe_path=None, write=True):
    """Train the config's ``big`` model on a recorded sequence.

    With ``probe_path`` (a score dump from the recording run) the replayed
    model's reducible loss is recorded on the same ids at the same steps.
    The holdout loss table is read from the recording run's directory when
    present, otherwise the holdout model is retrained.
    """
    t0 = time.perf_counter()
    bundle = build_bundle(cfg)
    seq = seqfile.read(sequence_path)
    probe, table = None, None
    if probe_path is not None:
        dump = read_score_dump(probe_path)
        probe = {step: np.array(sorted(ids), dtype=np.int64) for step, ids in dump.items()}
        cached = Path(cfg.output_dir) / IRREDUCIBLE_NAME
        if cached.exists():
            table = read_irreducible_csv(cached)
        elif cfg.irreducible is not None:
            _, table = train_irreducible_model(cfg.irreducible, bundle.validation, bundle.train, cfg.seed)
        else:
            raise ValueError("probing needs an 'irreducible' section or a recorded irreducible.csv")
    _, result = replay_sequence(
        cfg.replay_optimizer, bundle, seq, cfg.big, cfg.seed, cfg.selection.eval_every, table, probe
    )
    wall = time.perf_counter() - t0
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir) / "replay"
    if write:
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / METRICS_NAME, result.rows)
        if probe:
            write_score_dump(out / SCORES_NAME, result.score_dumps)
        if cfg.charts:
            steps = [r.step for r in result.rows]
            _write_svg(out / "accuracy.svg", 
                svg_line_chart(steps, {"test accuracy": [r.test_accuracy for r in result.rows]}, "replay test accuracy")
            )
        extra = {
            "phase": "replay",
            "sequence": str(sequence_path),
            "sequence_kind": seq.header.kind.value,
            "replay_model": cfg.as_dict()["big"],
            "final_param_fingerprint": result.final_fingerprint,
        }
        _write_json(out / MANIFEST_NAME, _manifest(cfg, bundle, wall, extra))
    return result
