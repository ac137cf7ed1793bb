"""Sectioned ``key = value`` configuration files.

Precedence for every key: command-line flag > config file > built-in default.

Recognised sections and keys (defaults in parentheses)::

    [model]     channels (48) depth (5) dim (384) heads (8) sparse (false)
                lsh_rounds (32) target_sparsity (0.9)
    [train]     lr (3e-4) batch_size (32) epochs (1200) batches_per_epoch (800)
                segment_seconds (1.0) weight_decay (0.0) grad_clip (none)
                valid_every (none) valid_fraction (0.25) remix (true) rescale (true)
    [finetune]  source (vocals) lr (1e-4) epochs (50) grad_clip (5.0)
                weight_decay (0.05) batch_size (32) batches_per_epoch (800)
                segment_seconds (1.0) valid_every (none) valid_fraction (0.25)
    [separate]  chunk_seconds (none) overlap (0.25)
    [curate]    separator (model) chunk_seconds (none) keywords (none)
"""
from __future__ import annotations

import configparser

from .errors import ConfigError

DEFAULTS = {
    "model": {"channels": 48, "depth": 5, "dim": 384, "heads": 8, "sparse": False,
              "lsh_rounds": 32, "target_sparsity": 0.9},
    "train": {"lr": 3e-4, "batch_size": 32, "epochs": 1200, "batches_per_epoch": 800,
              "segment_seconds": 1.0, "weight_decay": 0.0, "grad_clip": None,
              "valid_every": None, "valid_fraction": 0.25, "remix": True, "rescale": True},
    "finetune": {"source": "vocals", "lr": 1e-4, "epochs": 50, "grad_clip": 5.0,
                 "weight_decay": 0.05, "batch_size": 32, "batches_per_epoch": 800,
                 "segment_seconds": 1.0, "valid_every": None, "valid_fraction": 0.25},
    "separate": {"chunk_seconds": None, "overlap": 0.25},
    "curate": {"separator": "model", "chunk_seconds": None, "keywords": None},
}

# keys whose default is None still need a type for parsing
_TYPES = {"grad_clip": float, "valid_every": int, "chunk_seconds": float, "keywords": str}


def _parse(key, text, default):
    text = text.strip()
    if text.lower() in ("none", ""):
        return None
    kind = type(default) if default is not None else _TYPES.get(key, str)
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {text!r}") from exc


class Config:
    def __init__(self, sections=None):
        self.sections = {name: dict(vals) for name, vals in DEFAULTS.items()}
        for name, vals in (sections or {}).items():
            self.sections.setdefault(name, {}).update(vals)

    @classmethod
    def from_text(cls, text):
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        parsed = {}
        for name in cp.sections():
            if name not in DEFAULTS:
                raise ConfigError(f"unknown config section [{name}]")
            parsed[name] = {}
            for key, text_val in cp.items(name):
                if key not in DEFAULTS[name]:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                parsed[name][key] = _parse(key, text_val, DEFAULTS[name][key])
        return cls(parsed)

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return cls.from_text(f.read())

    def get(self, section, key, override=None):
        """``override`` (a CLI value) wins when not None."""
        if override is not None:
            return override
        return self.sections[section][key]

    def set_override(self, assignment):
        """Apply a ``section.key=value`` string."""
        lhs, sep, value = assignment.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot or section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"bad override {assignment!r}; expected section.key=value")
        self.sections[section][key] = _parse(key, value, DEFAULTS[section][key])
