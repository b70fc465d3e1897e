"""Hyperparameter configuration: documented defaults, JSON loading with
field validation, and the resolved-config echo written next to outputs.

Toy defaults (d = 64, depth 2) keep runs at desk scale; the full-scale
values (d = d_llm = 1024, 8 heads) are accepted through the same fields.
"""

import dataclasses
import json
from dataclasses import dataclass

VARIANTS = ("base", "dci", "dci_cmci", "full")


class ConfigError(ValueError):
    """Raised for unknown or invalid configuration fields."""


@dataclass
class ModelConfig:
    d: int = 64                 # encoder embedding dim (full scale: 1024)
    d_llm: int = 64             # decoder embedding dim (full scale: 1024)
    patch_size: int = 8
    image_size: int = 64
    m: int = 14                 # disease clue count
    r: int = 8                  # token rows per clue embedding
    k: int = 3                  # injected clues
    query_len: int = 16         # learnable queries L
    heads: int = 4              # full scale: 8
    interaction_layers: int = 1
    encoder_depth: int = 2
    decoder_depth: int = 2
    tau: float = 0.07
    vocab_size: int = 0         # filled from the corpus
    max_text_len: int = 24
    max_report_len: int = 64
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    variant: str = "full"

    @property
    def n_patches(self):
        return (self.image_size // self.patch_size) ** 2

    def validate(self):
        positive = (
            "d", "d_llm", "patch_size", "image_size", "m", "r", "k",
            "query_len", "heads", "interaction_layers", "encoder_depth",
            "decoder_depth", "max_text_len", "max_report_len",
            "batch_size", "epochs",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"config field {name!r} must be positive")
        if self.tau <= 0 or self.lr <= 0:
            raise ConfigError("tau and lr must be positive")
        if self.k > self.m:
            raise ConfigError(f"k = {self.k} may not exceed m = {self.m}")
        if self.d % self.heads or self.d_llm % self.heads:
            raise ConfigError(
                f"heads = {self.heads} must divide d = {self.d} "
                f"and d_llm = {self.d_llm}"
            )
        if self.image_size % self.patch_size:
            raise ConfigError("patch_size must divide image_size")
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"variant must be one of {VARIANTS}, got {self.variant!r}"
            )
        if self.variant == "dci" and self.d != self.d_llm:
            raise ConfigError("the dci variant requires d == d_llm")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**data).validate()

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **overrides):
        return ModelConfig.from_dict({**self.to_dict(), **overrides})


def echo_resolved(config, out_dir):
    """Write the effective configuration as config.resolved.json."""
    path = out_dir / "config.resolved.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
