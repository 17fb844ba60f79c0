"""JSON run configuration with five sections: model, scaling, train, task, report."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .dextra import as_fraction
from .model import ModelConfig
from .scaling import ScalingConfig

_number_or_fraction = {"anyOf": [{"type": "number", "exclusiveMinimum": 0},
                                 {"type": "string", "pattern": r"^\d+(/\d+)?$"}]}
_nullable_int = {"type": ["integer", "null"], "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "vocab_size": _nullable_int,
                "d_m": {"type": "integer", "minimum": 2},
                "embed_dim": _nullable_int,
                "d_o": _nullable_int,
                "r": _number_or_fraction,
                "g_max": _nullable_int,
                "shuffle": {"type": "boolean"},
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "max_positions": {"type": "integer", "minimum": 1},
            },
        },
        "scaling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N_min": {"type": "integer", "minimum": 2},
                "N_max": {"type": "integer", "minimum": 2},
                "m_w": _number_or_fraction,
                "B": _nullable_int,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "peak_lr": {"type": "number", "exclusiveMinimum": 0},
                "warmup": {"type": "integer", "minimum": 1},
                "label_smoothing": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "log_every": {"type": "integer", "minimum": 1},
                "eval_every": {"type": "integer", "minimum": 0},
                "checkpoint_every": {"type": "integer", "minimum": 0},
            },
        },
        "task": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["copy", "char_lm"]},
                "min_len": {"type": "integer", "minimum": 1},
                "max_len": {"type": "integer", "minimum": 1},
                "train_size": {"type": "integer", "minimum": 1},
                "val_size": {"type": "integer", "minimum": 1},
                "context": {"type": "integer", "minimum": 1},
                "text_path": {"type": ["string", "null"]},
            },
        },
        "report": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 1},
                "mode": {"enum": ["forward", "decode"]},
                "format": {"enum": ["csv", "json"]},
            },
        },
    },
}

DEFAULTS = {
    "model": {"vocab_size": None, "d_m": 64, "embed_dim": None, "d_o": None, "r": 4, "g_max": None,
              "shuffle": True, "dropout": 0.0, "max_positions": 256},
    "scaling": {"N_min": 2, "N_max": 4, "m_w": 2, "B": 4},
    "train": {"steps": 2000, "batch_size": 32, "peak_lr": 2e-3, "warmup": 400, "label_smoothing": 0.1,
              "seed": 0, "log_every": 1, "eval_every": 0, "checkpoint_every": 0},
    "task": {"kind": "copy", "min_len": 3, "max_len": 8, "train_size": 4096, "val_size": 256,
             "context": 32, "text_path": None},
    "report": {"n": 20, "m": 20, "mode": "forward", "format": "csv"},
}

COPY_VOCAB = 16


class RunConfigError(ValueError):
    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class RunConfig:
    """Validated run configuration; every default is filled in after loading."""

    def __init__(self, data: dict | None = None):
        data = {} if data is None else data
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise RunConfigError(exc.message, path) from None
        merged = copy.deepcopy(DEFAULTS)
        for section, values in data.items():
            merged[section].update(values)
        if merged["task"]["min_len"] > merged["task"]["max_len"]:
            raise RunConfigError("min_len exceeds max_len", "task")
        self.data = merged

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise RunConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise RunConfigError(f"invalid JSON ({exc})", str(path)) from None
        return cls(data)

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def override(self, section: str, **values) -> "RunConfig":
        data = self.to_dict()
        data[section].update({k: v for k, v in values.items() if v is not None})
        return RunConfig(data)

    @property
    def task_kind(self) -> str:
        return self.data["task"]["kind"]

    def model_config(self, vocab_size: int | None = None) -> ModelConfig:
        m, s = self.data["model"], self.data["scaling"]
        if vocab_size is None:
            vocab_size = m["vocab_size"] or COPY_VOCAB
        return ModelConfig(
            vocab_size=vocab_size,
            d_m=m["d_m"],
            scaling=ScalingConfig(s["N_min"], s["N_max"], as_fraction(s["m_w"]), s["B"]),
            embed_dim=m["embed_dim"],
            d_o=m["d_o"],
            r=as_fraction(m["r"]),
            task="lm" if self.task_kind == "char_lm" else "seq2seq",
            max_positions=m["max_positions"],
            dropout=m["dropout"],
            g_max=m["g_max"],
            shuffle=m["shuffle"],
        )
