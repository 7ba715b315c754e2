"""Pipeline configuration: one YAML file drives every stage.

All randomness funnels through the single top-level seed; stages derive
their own streams at fixed offsets so each stage is independently
re-runnable:

    seed + 0  synthetic data generation
    seed + 1  train/test split
    seed + 2  weight initialization
    seed + 3  training batch shuffle (fine-tune phases offset from here)
    seed + 4  end-to-end verification samples

The whole file is validated before any stage runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .pruning import ADMM, GRADUAL, FcpConfig
from .qnn import ActivationSpec
from .training import Hyper
from .truthtable import HARD_INPUT_CAP

SEED_DATA = 0
SEED_SPLIT = 1
SEED_INIT = 2
SEED_TRAIN = 3
SEED_VERIFY = 4


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    csv: str | None = None
    label_column: str | None = None
    synthetic: dict | None = None
    train_fraction: float = 0.75


@dataclass
class ModelConfig:
    hidden_widths: list[int] = field(default_factory=list)
    input_quant: ActivationSpec = field(default_factory=lambda: ActivationSpec("signed", 2, 2.0))
    hidden_quants: list[ActivationSpec] = field(default_factory=list)
    batchnorm: bool = True
    output_bits: int = 8


@dataclass
class CompileConfig:
    max_table_inputs: int = 12
    lut_size: int = 6
    pipeline: bool = True


@dataclass
class PipelineConfig:
    seed: int = 0
    output_dir: str = "out"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: Hyper = field(default_factory=Hyper)
    fcp: FcpConfig = field(default_factory=lambda: FcpConfig(fanin=3))
    compile: CompileConfig = field(default_factory=CompileConfig)
    verify_samples: int = 10_000


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _parse_activation(d: dict, where: str) -> ActivationSpec:
    _require(isinstance(d, dict) and "kind" in d, f"{where}: expected a mapping with 'kind'")
    try:
        return ActivationSpec(kind=d["kind"], bits=int(d.get("bits", 1)),
                              alpha=float(d.get("alpha", 1.0)))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    known = {"seed", "output_dir", "dataset", "model", "training", "fcp",
             "compile", "verify"}
    unknown = set(doc) - known
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")

    cfg = PipelineConfig()
    cfg.seed = int(doc.get("seed", 0))
    cfg.output_dir = str(doc.get("output_dir", "out"))

    ds = doc.get("dataset", {})
    _require(isinstance(ds, dict), "dataset: expected a mapping")
    dcfg = DatasetConfig()
    dcfg.csv = ds.get("csv")
    dcfg.label_column = ds.get("label_column")
    dcfg.synthetic = ds.get("synthetic")
    dcfg.train_fraction = float(ds.get("train_fraction", 0.75))
    _require((dcfg.csv is None) != (dcfg.synthetic is None),
             "dataset: exactly one of 'csv' or 'synthetic' must be given")
    if dcfg.csv is not None:
        _require(bool(dcfg.label_column), "dataset: csv input needs 'label_column'")
    if dcfg.synthetic is not None:
        _require(isinstance(dcfg.synthetic, dict), "dataset.synthetic: expected a mapping")
        for key in ("samples", "features", "classes"):
            _require(key in dcfg.synthetic, f"dataset.synthetic: missing '{key}'")
    _require(0.0 < dcfg.train_fraction < 1.0, "dataset.train_fraction must be in (0, 1)")
    cfg.dataset = dcfg

    md = doc.get("model", {})
    _require(isinstance(md, dict), "model: expected a mapping")
    mcfg = ModelConfig()
    mcfg.hidden_widths = [int(w) for w in md.get("hidden_widths", [])]
    _require(all(w >= 1 for w in mcfg.hidden_widths), "model.hidden_widths must be positive")
    mcfg.input_quant = _parse_activation(md.get("input_quant", {"kind": "signed", "bits": 2, "alpha": 2.0}),
                                         "model.input_quant")
    hq = md.get("hidden_quant", {"kind": "pact", "bits": 2, "alpha": 2.0})
    if isinstance(hq, list):
        _require(len(hq) == len(mcfg.hidden_widths),
                 "model.hidden_quant list must match hidden_widths length")
        mcfg.hidden_quants = [_parse_activation(h, f"model.hidden_quant[{i}]")
                              for i, h in enumerate(hq)]
    else:
        spec = _parse_activation(hq, "model.hidden_quant")
        mcfg.hidden_quants = [ActivationSpec(spec.kind, spec.bits, spec.alpha)
                              for _ in mcfg.hidden_widths]
    mcfg.batchnorm = bool(md.get("batchnorm", True))
    mcfg.output_bits = int(md.get("output_bits", 8))
    _require(mcfg.output_bits >= 2, "model.output_bits must be >= 2")
    cfg.model = mcfg

    tr = doc.get("training", {})
    _require(isinstance(tr, dict), "training: expected a mapping")
    cfg.training = Hyper(lr=float(tr.get("lr", 0.05)),
                         epochs=int(tr.get("epochs", 30)),
                         batch_size=int(tr.get("batch_size", 64)),
                         weight_decay=float(tr.get("weight_decay", 0.0)),
                         momentum=float(tr.get("momentum", 0.9)),
                         seed=cfg.seed + SEED_TRAIN)
    _require(cfg.training.lr > 0, "training.lr must be positive")
    _require(cfg.training.epochs >= 0, "training.epochs must be >= 0")
    _require(cfg.training.batch_size >= 1, "training.batch_size must be >= 1")
    _require(cfg.training.weight_decay >= 0, "training.weight_decay must be >= 0")
    _require(0.0 <= cfg.training.momentum < 1.0, "training.momentum must be in [0, 1)")

    fc = doc.get("fcp", {})
    _require(isinstance(fc, dict), "fcp: expected a mapping")
    _require("fanin" in fc, "fcp: missing 'fanin'")
    try:
        cfg.fcp = FcpConfig(fanin=int(fc["fanin"]),
                            method=str(fc.get("method", GRADUAL)),
                            start_step=int(fc.get("start_step", 0)),
                            duration=int(fc.get("duration", 1)),
                            prune_every=int(fc.get("prune_every", 1)),
                            rho=float(fc.get("rho", 0.5)),
                            admm_steps=int(fc.get("admm_steps", 8)),
                            epochs_per_round=int(fc.get("epochs_per_round", 2)),
                            fine_tune_epochs=int(fc.get("fine_tune_epochs", 0)))
    except ValueError as exc:
        raise ConfigError(f"fcp: {exc}") from exc

    cp = doc.get("compile", {})
    _require(isinstance(cp, dict), "compile: expected a mapping")
    ccfg = CompileConfig(max_table_inputs=int(cp.get("max_table_inputs", 12)),
                         lut_size=int(cp.get("lut_size", 6)),
                         pipeline=bool(cp.get("pipeline", True)))
    _require(1 <= ccfg.max_table_inputs <= HARD_INPUT_CAP,
             f"compile.max_table_inputs must be in [1, {HARD_INPUT_CAP}]")
    _require(2 <= ccfg.lut_size <= 6, "compile.lut_size must be in [2, 6]")
    cfg.compile = ccfg

    vf = doc.get("verify", {})
    _require(isinstance(vf, dict), "verify: expected a mapping")
    cfg.verify_samples = int(vf.get("samples", 10_000))
    _require(cfg.verify_samples >= 0, "verify.samples must be >= 0")

    _check_feasibility(cfg)
    return cfg


def _check_feasibility(cfg: PipelineConfig) -> None:
    """Per-layer fanin x input-bits must fit the table input budget."""
    fanin = cfg.fcp.fanin
    limit = cfg.compile.max_table_inputs
    layer_bits = [cfg.model.input_quant.bits] + [s.bits for s in cfg.model.hidden_quants]
    for i, bits in enumerate(layer_bits):
        n = fanin * bits
        if n > limit:
            raise ConfigError(
                f"layer {i}: fanin {fanin} x {bits} activation bits = {n} table inputs "
                f"exceeds compile.max_table_inputs = {limit}")


def load_config(path: str, *, seed: int | None = None, output_dir: str | None = None,
                label_column: str | None = None) -> PipelineConfig:
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if seed is not None:
        doc["seed"] = seed
    if output_dir is not None:
        doc["output_dir"] = output_dir
    if label_column is not None:
        doc.setdefault("dataset", {})["label_column"] = label_column
    return parse_config(doc)
