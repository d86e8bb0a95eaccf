"""Tracker configuration (JSON-serializable, field names mirror the file)."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict

SHARED = "shared"
SEPARATE = "separate"


@dataclass
class TrackerConfig:
    # Backbone geometry (defaults are the Vim-S scale: ~29.3 M parameters)
    patch_size: int = 16
    embed_dim: int = 384
    depth: int = 24
    d_state: int = 16
    dt_rank: int = 24
    conv_width: int = 4
    # Crops
    template_size: int = 128
    search_size: int = 256
    template_context: float = 2.0
    search_context: float = 4.0
    # Template memory
    lt_capacity: int = 16
    st_capacity: int = 6
    update_interval: int = 5
    memory_mode: str = SHARED  # "shared" or "separate" fusion stack
    # Loss weights
    lambda_l1: float = 5.0
    lambda_focal: float = 1.0
    lambda_giou: float = 2.0
    # Event stacking and determinism
    window_us: int = 10_000
    seed: int = 0
    regenerate_every_frame: bool = False

    def __post_init__(self):
        positive = ("patch_size", "embed_dim", "depth", "d_state", "dt_rank",
                    "conv_width", "template_size", "search_size", "lt_capacity",
                    "st_capacity", "update_interval", "window_us")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.memory_mode not in (SHARED, SEPARATE):
            raise ValueError("memory_mode must be 'shared' or 'separate'")
        if self.template_context < 1 or self.search_context < 1:
            raise ValueError("context factors must be >= 1")
        for side in (self.template_size, self.search_size):
            if side % self.patch_size:
                raise ValueError("crop sides must be divisible by patch_size")
        if min(self.lambda_l1, self.lambda_focal, self.lambda_giou) < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def d_inner(self) -> int:
        return 2 * self.embed_dim

    @property
    def n_template_tokens(self) -> int:
        return (self.template_size // self.patch_size) ** 2

    @property
    def n_search_tokens(self) -> int:
        return (self.search_size // self.patch_size) ** 2

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrackerConfig":
        return cls(**json.loads(text))


def load_config(path: str | None) -> TrackerConfig:
    """Load a config file (or defaults); MEVT_SEED overrides the seed."""
    if path is None:
        cfg = TrackerConfig()
    else:
        with open(path, "r", encoding="utf-8") as f:
            cfg = TrackerConfig.from_json(f.read())
    env_seed = os.environ.get("MEVT_SEED")
    if env_seed is not None:
        cfg.seed = int(env_seed)
    return cfg
