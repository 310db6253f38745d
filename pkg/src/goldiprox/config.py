"""Experiment configuration: YAML loading, validation, and dataset assembly."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .acquisition import AcquisitionKind
from .data import (
    CorruptionConfig,
    DatasetBundle,
    ExampleSet,
    corrupt_bundle,
    load_idx,
    split,
    synth_clusters,
    synth_latent_digits,
)
from .model import ModelSpec, OptimizerConfig
from .trainer import IrreducibleModelConfig, TrainLoopConfig


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is a dotted path, ``line`` 1-based when known."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = ""
        if field:
            where += f"{field}: "
        if line:
            where = f"line {line}: " + where
        super().__init__(where + message)


@dataclass
class DatasetConfig:
    source: str = "clusters"
    num_classes: int = 10
    n_train: int = 8000
    n_val: int = 2000
    n_test: int = 2000
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: Path
    dataset: DatasetConfig
    corruption: CorruptionConfig
    proxy: ModelSpec
    big: ModelSpec
    irreducible: IrreducibleModelConfig | None
    selection: TrainLoopConfig
    replay_optimizer: OptimizerConfig
    charts: bool = True
    raw: dict = field(default_factory=dict)
    arm: str | None = None

    def content_hash(self) -> str:
        """Git-style blob hash of the canonical JSON form of the raw config."""
        body = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()

    def substitutions(self) -> dict:
        """Defaults the method description leaves open, echoed for the manifest."""
        opt = self.selection.optimizer
        out = {
            "adamw_beta1": opt.beta1,
            "adamw_beta2": opt.beta2,
            "adamw_epsilon": opt.epsilon,
            "adamw_weight_decay": opt.weight_decay,
            "weight_decay_on_biases": False,
            "init": "uniform(+-1/sqrt(fan_in)) weights, zero biases",
            "dropout": "inverted, hidden layers only",
            "score_forward_mode": "eval (dropout off) except bald",
            "tie_break": "ascending id",
            "sequence_order_within_batch": "descending score, then ascending id",
            "lr_schedule": "constant",
            "eval_every": self.selection.eval_every,
            "bald_mc_samples": self.selection.bald_mc_samples,
            "bald_warmup_steps": self.selection.bald_warmup_steps,
            "label_noise": "uniform over the other num_classes-1 classes",
            "white_noise": "appended; uniform features and labels",
            "validation_corrupted": self.corruption.corrupt_validation,
            "replay_init": "fresh init from the run seed",
        }
        if self.irreducible is not None:
            out.update(
                irreducible_patience=self.irreducible.patience,
                irreducible_tolerance=self.irreducible.tolerance,
                irreducible_max_epochs=self.irreducible.max_epochs,
                irreducible_batch_size=self.irreducible.batch_size,
            )
        return out

    def as_dict(self) -> dict:
        d = {
            "arm": self.arm,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "dataset": asdict(self.dataset),
            "corruption": asdict(self.corruption),
            "proxy": asdict(self.proxy) if self.proxy is not None else None,
            "big": asdict(self.big) if self.big is not None else None,
            "irreducible": None,
            "selection": {**asdict(self.selection), "kind": self.selection.kind.value},
            "replay_optimizer": asdict(self.replay_optimizer),
            "charts": self.charts,
        }
        if self.irreducible is not None:
            d["irreducible"] = asdict(self.irreducible)
        return d


# ------------------------------------------------------------- parsing


class _Located:
    """Maps dotted config paths to source lines using the YAML node tree.

    With ``prefixes`` (e.g. ``["arms.bald"]``) a path is looked up under each
    prefix first, so fields overridden by an arm point at the arm's line.
    """

    def __init__(self, node, prefixes=()):
        self.node = node
        self.prefixes = list(prefixes)

    def _find(self, path):
        node, depth = self.node, 0
        parts = path.split(".")
        for part in parts:
            if not isinstance(node, yaml.MappingNode):
                break
            for k, v in node.value:
                if k.value == part:
                    node, depth = v, depth + 1
                    break
            else:
                break
        return node, depth == len(parts)

    def line(self, path):
        for prefix in self.prefixes:
            node, exact = self._find(f"{prefix}.{path}")
            if exact:
                return node.start_mark.line + 1
        node, _ = self._find(path)
        return node.start_mark.line + 1 if node is not None else None


def _section(raw, key, loc, required=False) -> dict:
    val = raw.get(key)
    if val is None:
        if required:
            raise ConfigError("section is required", key, loc.line(key))
        return {}
    if not isinstance(val, dict):
        raise ConfigError("must be a mapping", key, loc.line(key))
    return val


def _build(cls, values, path, loc, **extra):
    values = dict(values)
    try:
        return cls(**values, **extra)
    except TypeError as exc:
        known = getattr(cls, "__dataclass_fields__", {})
        unknown = [k for k in values if k not in known]
        field_path = f"{path}.{unknown[0]}" if unknown else path
        raise ConfigError(f"unexpected or missing field ({exc})", field_path, loc.line(field_path)) from None
    except ValueError as exc:
        raise ConfigError(str(exc), path, loc.line(path)) from None


def _model_spec(raw, name, loc, input_dim, num_classes, default=None):
    sec = raw.get("models", {}) or {}
    if not isinstance(sec, dict):
        raise ConfigError("must be a mapping", "models", loc.line("models"))
    if name not in sec:
        if default is None:
            raise ConfigError("model spec is required", f"models.{name}", loc.line("models"))
        return default
    vals = dict(sec[name] or {})
    vals.setdefault("input_dim", input_dim)
    vals.setdefault("num_classes", num_classes)
    vals["hidden_dims"] = tuple(vals.get("hidden_dims", ()))
    return _build(ModelSpec, vals, f"models.{name}", loc)


_DATA_SOURCES = {
    "clusters": ("num_classes", "input_dim", "n_per_class", "spread", "active_fraction", "background"),
    "latent_digits": ("num_classes", "input_dim", "n_per_class", "latent_dim", "separation", "density", "offset", "scale"),
    "idx": ("files",),
}


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def parse_config(text, base_dir=".", seed_override=None) -> list[ExperimentConfig]:
    """Parse a YAML experiment file into one config per arm.

    A file without an ``arms`` mapping yields a single config with
    ``arm=None``.  Each arm's mapping is deep-merged over the shared fields
    and gets its own output subdirectory.
    """
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {exc}", line=mark.line + 1 if mark else None) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", line=1)
    arms = raw.get("arms")
    if arms is None:
        return [_parse_one(raw, _Located(node), base_dir, seed_override)]
    if not isinstance(arms, dict) or not arms:
        raise ConfigError("must be a non-empty mapping of arm name to overrides", "arms", _Located(node).line("arms"))
    base = {k: v for k, v in raw.items() if k != "arms"}
    out = []
    for name, over in arms.items():
        if not isinstance(over, dict):
            raise ConfigError("arm overrides must be a mapping", f"arms.{name}", _Located(node).line(f"arms.{name}"))
        cfg = _parse_one(_merge(base, over), _Located(node, [f"arms.{name}"]), base_dir, seed_override)
        cfg.arm = str(name)
        cfg.output_dir = cfg.output_dir / str(name)
        out.append(cfg)
    return out


def _parse_one(raw, loc, base_dir, seed_override) -> ExperimentConfig:
    base_dir = Path(base_dir)

    seed = raw.get("seed", 0) if seed_override is None else seed_override
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("must be a non-negative integer", "seed", loc.line("seed"))
    if seed_override is not None:
        raw = {**raw, "seed": seed}

    ds = _section(raw, "dataset", loc, required=True)
    source = ds.get("source", "clusters")
    if source not in _DATA_SOURCES:
        raise ConfigError(f"unknown source {source!r}; expected one of {sorted(_DATA_SOURCES)}", "dataset.source", loc.line("dataset.source"))
    counts = {k: ds.get(k, getattr(DatasetConfig, k)) for k in ("n_train", "n_val", "n_test")}
    params = {k: v for k, v in ds.items() if k not in ("source", "num_classes", *counts)}
    for k in params:
        if k not in _DATA_SOURCES[source]:
            raise ConfigError(f"not a parameter of source {source!r}", f"dataset.{k}", loc.line(f"dataset.{k}"))
    if source == "idx":
        files = params.get("files")
        if not files or not isinstance(files, list):
            raise ConfigError("needs a list of {images, labels} file pairs", "dataset.files", loc.line("dataset"))
        resolved = []
        for pair in files:
            if not isinstance(pair, dict) or not {"images", "labels"} <= set(pair):
                raise ConfigError("each entry needs 'images' and 'labels'", "dataset.files", loc.line("dataset.files"))
            entry = {}
            for key in ("images", "labels"):
                p = Path(pair[key])
                p = p if p.is_absolute() else base_dir / p
                if not p.exists():
                    raise ConfigError(f"file not found: {p}", "dataset.files", loc.line("dataset.files"))
                entry[key] = str(p)
            resolved.append(entry)
        params = {"files": resolved}
    dataset = DatasetConfig(source, int(ds.get("num_classes", 10)), params=params, **counts)
    if min(counts.values()) < 1:
        raise ConfigError("split sizes must be positive", "dataset", loc.line("dataset"))

    corr = dict(_section(raw, "corruption", loc))
    corr.setdefault("seed", seed)
    corruption = _build(CorruptionConfig, corr, "corruption", loc)

    input_dim = int(params.get("input_dim", 784))
    if source == "idx":
        input_dim = -1  # resolved when the files are read
    proxy = _model_spec(raw, "proxy", loc, input_dim, dataset.num_classes) if input_dim > 0 else None

    opt_raw = _section(raw, "optimizer", loc)
    optimizer = _build(OptimizerConfig, opt_raw, "optimizer", loc)
    sel = dict(_section(raw, "selection", loc, required=True))
    sel_opt = sel.pop("optimizer", None)
    sel_optimizer = _build(OptimizerConfig, {**opt_raw, **(sel_opt or {})}, "selection.optimizer", loc)
    sel.setdefault("seed", seed)
    if "kind" in sel:
        try:
            AcquisitionKind(sel["kind"])
        except ValueError:
            raise ConfigError(
                f"unknown acquisition kind {sel['kind']!r}", "selection.kind", loc.line("selection.kind")
            ) from None
    selection = _build(TrainLoopConfig, sel, "selection", loc, optimizer=sel_optimizer)
    if selection.large_batch_size <= selection.batch_size:
        raise ConfigError(
            "large_batch_size must exceed batch_size", "selection.large_batch_size", loc.line("selection.large_batch_size")
        )
    if selection.total_steps < 1:
        raise ConfigError("total_steps must be at least 1", "selection.total_steps", loc.line("selection.total_steps"))

    irr_raw = raw.get("irreducible")
    irreducible = None
    if irr_raw is not None:
        if not isinstance(irr_raw, dict):
            raise ConfigError("must be a mapping", "irreducible", loc.line("irreducible"))
        irr_raw = dict(irr_raw)
        irr_opt = irr_raw.pop("optimizer", None)
        irr_optimizer = _build(OptimizerConfig, {**opt_raw, **(irr_opt or {})}, "irreducible.optimizer", loc)
        irreducible = irr_raw, irr_optimizer
    elif selection.kind.needs_irreducible:
        raise ConfigError(
            f"kind {selection.kind.value!r} needs an 'irreducible' section", "selection.kind", loc.line("selection.kind")
        )

    rep = dict(_section(raw, "replay", loc))
    rep_optimizer = _build(OptimizerConfig, {**opt_raw, **(rep.get("optimizer") or {})}, "replay.optimizer", loc)

    out = raw.get("output_dir", "out")
    output_dir = Path(out) if Path(out).is_absolute() else base_dir / out

    cfg = ExperimentConfig(
        seed=seed,
        output_dir=output_dir,
        dataset=dataset,
        corruption=corruption,
        proxy=proxy,
        big=None,
        irreducible=None,
        selection=selection,
        replay_optimizer=rep_optimizer,
        charts=bool(raw.get("charts", True)),
        raw=raw,
    )
    cfg._loc = loc
    cfg._irr_raw = irreducible
    if input_dim > 0:
        resolve_models(cfg, input_dim)
    return cfg


def resolve_models(cfg: ExperimentConfig, input_dim):
    loc, raw, k = cfg._loc, cfg.raw, cfg.dataset.num_classes
    cfg.proxy = _model_spec(raw, "proxy", loc, input_dim, k)
    cfg.big = _model_spec(raw, "big", loc, input_dim, k, default=cfg.proxy)
    if cfg.selection.kind is AcquisitionKind.BALD and cfg.proxy.dropout_rate <= 0:
        raise ConfigError("bald selection needs models.proxy.dropout_rate > 0", "models.proxy", loc.line("models.proxy"))
    if cfg._irr_raw is not None:
        irr_raw, irr_opt = cfg._irr_raw
        irr_raw = dict(irr_raw)
        spec = _model_spec(raw, "irreducible", loc, input_dim, k, default=cfg.proxy)
        cfg.irreducible = _build(IrreducibleModelConfig, irr_raw, "irreducible", loc, spec=spec, optimizer=irr_opt)


def load_config(path, seed_override=None) -> list[ExperimentConfig]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent, seed_override=seed_override)


# -------------------------------------------------------------- dataset


def _raw_examples(ds: DatasetConfig, seed) -> ExampleSet:
    p = dict(ds.params)
    if ds.source == "clusters":
        p.setdefault("num_classes", ds.num_classes)
        return synth_clusters(seed=seed, **p)
    if ds.source == "latent_digits":
        p.setdefault("num_classes", ds.num_classes)
        return synth_latent_digits(seed=seed, **p)
    sets, offset = [], 0
    for pair in p["files"]:
        s = load_idx(pair["images"], pair["labels"], id_offset=offset)
        offset += len(s)
        sets.append(s)
    out = sets[0]
    for s in sets[1:]:
        out = out.concat(s)
    return out


def build_bundle(cfg: ExperimentConfig) -> DatasetBundle:
    """Generate or load examples, split them, and apply the corruption config."""
    ds = cfg.dataset
    try:
        examples = _raw_examples(ds, cfg.seed)
        if examples.labels.max() >= ds.num_classes:
            raise ValueError(f"labels exceed num_classes={ds.num_classes}")
        tr, va, te = split(examples, ds.n_train, ds.n_val, ds.n_test, cfg.seed)
        bundle = corrupt_bundle(DatasetBundle(tr, va, te, ds.num_classes), cfg.corruption)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "dataset", cfg._loc.line("dataset")) from None
    if cfg.proxy is None:
        resolve_models(cfg, bundle.input_dim)
    return bundle
