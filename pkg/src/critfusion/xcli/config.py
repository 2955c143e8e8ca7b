"""Experiment configuration schema.

A config is one YAML or JSON document::

    kind: deficit          # lindyn | gradsim | rsv-sim | deficit | sweep
    seed: 0
    jobs: 1
    out: runs/example      # optional; defaults under $CRITFUSION_OUT
    deficit:               # block named after the kind (rsv-sim -> rsv_sim)
      task: {noise_std: 0.5}
      schedule: {kind: dissociation, start: 0, length: 20}

Unknown keys anywhere are rejected before any computation.  ``--set
a.b.c=value`` overrides apply to the raw document, values parsed as YAML.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, create_model, field_validator

from .. import rsv
from ..deficitlab.deficits import DeficitSchedule
from ..deficitlab.net import NetSpec
from ..deficitlab.task import TaskSpec
from ..deficitlab.train import OptimConfig

KINDS = ("lindyn", "gradsim", "rsv-sim", "deficit", "sweep")
OUT_ENV = "CRITFUSION_OUT"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _mirror(dc, name: str):
    """Strict pydantic model with the fields and defaults of dataclass ``dc``."""
    hints = typing.get_type_hints(dc)
    fields = {}
    for f in dataclasses.fields(dc):
        if f.default is not dataclasses.MISSING:
            default = f.default
        elif f.default_factory is not dataclasses.MISSING:
            default = f.default_factory()
        else:
            default = ...
        fields[f.name] = (hints[f.name], default)
    return create_model(name, __base__=Strict, **fields)


TaskBlock = _mirror(TaskSpec, "TaskBlock")
NetBlock = _mirror(NetSpec, "NetBlock")
OptimBlock = _mirror(OptimConfig, "OptimBlock")
ScheduleBlock = _mirror(DeficitSchedule, "ScheduleBlock")


class RSVBlock(Strict):
    fixed_sample_count: int = 32
    variation_sample_count: int = 256
    seed: int = 0
    dead_unit_epsilon: float = 1e-12


class LindynBlock(Strict):
    matrix: str = "appendix-pre"  # fixture name, matrix file or inline literal
    drop: int | None = 2  # 0-based source disabled in the counterfactual; null for none
    models: list[Literal["deep", "shallow"]] = ["deep", "shallow"]
    tau: float = 100.0
    a0: float = 1e-4
    t_max: float = 2000.0
    n_times: int = Field(401, ge=2)


class PhaseBlock(Strict):
    matrix: str
    steps: int = Field(ge=1)


class GradsimBlock(Strict):
    phases: list[PhaseBlock] = [PhaseBlock(matrix="appendix-pre", steps=10_000)]
    depth: int = Field(2, ge=1)
    hidden: int | None = None  # defaults to the number of inputs
    init: Literal["small-random", "spectral"] = "small-random"
    eta: float = 1e-3
    record_stride: int = Field(10, ge=1)
    scale: float = 1e-3
    a0: float = 1e-4


class RSVSimBlock(Strict):
    alpha: float = 1.0
    beta: float = 20.0
    sigma0: float = 1.0
    sigma_a: float = 1.0
    sigma_b: float = 1.0
    unit_count: int = 2000
    mixing: float = 0.5
    rsv: RSVBlock = RSVBlock()
    activations: str | None = None  # analyse an activation dump instead of the synthetic model


class LabBlock(Strict):
    task: TaskBlock = TaskBlock()
    net: NetBlock = NetBlock()
    optim: OptimBlock = OptimBlock()
    epochs: int = 60
    recon_lambda: float = 0.0
    mask_prob: float = 0.0
    rsv: RSVBlock = RSVBlock()


class DeficitBlock(LabBlock):
    schedule: ScheduleBlock = ScheduleBlock()
    write_dataset: bool = False


class SweepBlock(LabBlock):
    mode: Literal["initial", "sliding", "depth"] = "initial"
    deficit: Literal["blur", "dissociation"] = "dissociation"
    lengths: list[int] = [0, 5, 10, 20, 40, 60]  # initial windows
    starts: list[int] = []  # sliding windows
    length: int = 20  # sliding / depth window length
    depths: list[int] = [1, 2, 3]
    n_seeds: int = Field(5, ge=1)
    post_epochs: int | None = 60  # null: every run lasts ``epochs``
    gain: float = 0.25
    noise_std: float = 1.0
    pathway: Literal["a", "b"] = "b"

    @field_validator("lengths", "starts", "depths")
    @classmethod
    def _non_negative(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("values must be >= 0")
        return v


BLOCKS = {"lindyn": LindynBlock, "gradsim": GradsimBlock, "rsv-sim": RSVSimBlock,
          "deficit": DeficitBlock, "sweep": SweepBlock}


def block_key(kind: str) -> str:
    return kind.replace("-", "_")


class ExperimentConfig(Strict):
    kind: Literal["lindyn", "gradsim", "rsv-sim", "deficit", "sweep"]
    seed: int = 0
    out: str | None = None
    jobs: int = Field(1, ge=1)
    overwrite: bool = False
    lindyn: LindynBlock | None = None
    gradsim: GradsimBlock | None = None
    rsv_sim: RSVSimBlock | None = None
    deficit: DeficitBlock | None = None
    sweep: SweepBlock | None = None

    @property
    def params(self):
        return getattr(self, block_key(self.kind))

    def hash(self) -> str:
        """sha256 of the canonical config, ignoring ``out``, ``jobs`` and ``overwrite``."""
        d = self.model_dump(mode="json", exclude={"out", "jobs", "overwrite"})
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def output_dir(self) -> Path:
        if self.out:
            return Path(self.out)
        return Path(os.environ.get(OUT_ENV, "runs")) / f"{self.kind}-{self.hash()[:12]}"


def _set_dotted(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {key!r}: {p!r} is not a mapping")
        node = nxt
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key!r}: cannot parse value {raw!r}") from exc
    return key, value


def read_document(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return doc


def _describe(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def validate(doc: dict) -> ExperimentConfig:
    """Validate a raw document; fill the kind's block with defaults."""
    doc = dict(doc)
    try:
        cfg = ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_describe(exc)}") from None
    stray = [block_key(k) for k in KINDS if k != cfg.kind and doc.get(block_key(k)) is not None]
    if stray:
        raise ConfigError(f"invalid config: block(s) {stray} do not belong to kind {cfg.kind!r}")
    if cfg.params is None:
        cfg = cfg.model_copy(update={block_key(cfg.kind): BLOCKS[cfg.kind]()})
    try:
        build_objects(cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config in {block_key(cfg.kind)}: {exc}") from None
    return cfg


def load_config(path=None, kind: str | None = None, overrides=(), seed=None, out=None, jobs=None) -> ExperimentConfig:
    """Read, override and validate; CLI flags win over file values."""
    doc = read_document(path) if path else {}
    if kind is not None:
        if "kind" in doc and doc["kind"] != kind:
            raise ConfigError(f"kind: config says {doc['kind']!r} but the subcommand is {kind!r}")
        doc["kind"] = kind
    for text in overrides:
        key, value = parse_override(text)
        _set_dotted(doc, key, value)
    for key, value in (("seed", seed), ("out", out), ("jobs", jobs)):
        if value is not None:
            doc[key] = value
    return validate(doc)


def build_objects(cfg: ExperimentConfig) -> dict:
    """Construct the domain objects a block describes (runs their validation)."""
    p = cfg.params
    if cfg.kind in ("deficit", "sweep"):
        from ..deficitlab.train import LabConfig

        lab = LabConfig(
            task=TaskSpec(**p.task.model_dump()),
            net=NetSpec(**p.net.model_dump()),
            optim=OptimConfig(**p.optim.model_dump()),
            epochs=p.epochs,
            recon_lambda=p.recon_lambda,
            mask_prob=p.mask_prob,
            rsv=rsv.RSVConfig(**p.rsv.model_dump()),
        )
        out = {"lab": lab}
        if cfg.kind == "deficit":
            sched = DeficitSchedule(**p.schedule.model_dump())
            sched.check_within(p.epochs)
            out["schedule"] = sched
        else:
            if p.mode == "sliding" and not p.starts:
                raise ValueError("sliding sweeps need a non-empty 'starts' list")
            if p.mode == "depth" and (not p.depths or min(p.depths) < 1):
                raise ValueError("depth sweeps need depths >= 1")
            DeficitSchedule(kind=p.deficit, gain=p.gain, noise_std=p.noise_std, pathway=p.pathway)
        return out
    if cfg.kind == "rsv-sim":
        return {"rsv": rsv.RSVConfig(**p.rsv.model_dump())}
    return {}
