"""End-to-end tracking loop wiring all modules together.

Per frame: crop the search region at the previous prediction, tokenize,
assemble [static | dynamic | search], run the backbone, decode the head
outputs back to frame coordinates. Every `update_interval` frames the
dynamic template is regenerated from the memory libraries and the predicted
crop's embedded feature is pushed into short-term memory; between those
ticks the last dynamic template is reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .backbone import backbone
from .config import TrackerConfig
from .events import BBox, EventFrame, EventStream, crop_region, stack_events
from .fusion import generate_dynamic_template
from .head import decode_bbox, head_forward
from .memory import MemoryLibrary, TemplateFeature
from .model import ModelParams
from .tokenizer import (DYNAMIC, STATIC, SEARCH, TokenSeq, add_position_embedding,
                        assemble_input, extract_search_tokens, patch_embed)


@dataclass
class TrackerStats:
    memory_updates: int = 0
    template_regenerations: int = 0


class Tracker:
    """Single-sequence tracker; mutable state is this instance's alone."""

    def __init__(self, config: TrackerConfig, model: ModelParams,
                 debug_stream: IO[str] | None = None):
        self.config = config
        self.model = model
        self.memory = MemoryLibrary(st_capacity=config.st_capacity,
                                    lt_capacity=config.lt_capacity,
                                    interval=config.update_interval,
                                    debug_stream=debug_stream)
        self.stats = TrackerStats()
        self._static: TokenSeq | None = None
        self._dynamic: np.ndarray | None = None
        self._last_feature: TemplateFeature | None = None
        self._frame_index = 0
        self._box: BBox | None = None

    # -- helpers -----------------------------------------------------------

    def _template_feature(self, frame: EventFrame, box: BBox, frame_index: int) -> TemplateFeature:
        patch = crop_region(frame, box, self.config.template_context,
                            self.config.template_size)
        tokens = patch_embed(patch, self.model.patch_embed, DYNAMIC).tokens
        return TemplateFeature(tokens=tokens, frame_index=frame_index)

    def _regenerate_dynamic(self) -> None:
        assert self._last_feature is not None
        self._dynamic = generate_dynamic_template(
            self.memory, self._last_feature, self.model.fusion_params())
        self.stats.template_regenerations += 1

    # -- protocol ----------------------------------------------------------

    def init(self, frame: EventFrame, init_box: BBox) -> BBox:
        """Initialize from the first frame; returns the init box unchanged."""
        if not (0 <= init_box.cx < frame.width and 0 <= init_box.cy < frame.height):
            raise ValueError("init box outside frame")
        cfg = self.config
        template_patch = crop_region(frame, init_box, cfg.template_context,
                                     cfg.template_size)
        static = patch_embed(template_patch, self.model.patch_embed, STATIC)
        self._static = add_position_embedding(static, self.model.patch_embed)

        initial = self._template_feature(frame, init_box, frame_index=0)
        self.memory.init_memory(initial)
        self._last_feature = initial
        self._regenerate_dynamic()
        self._frame_index = 0
        self._box = init_box
        return init_box

    def step(self, frame: EventFrame) -> BBox:
        """Track one frame; returns the predicted box in frame coordinates."""
        if self._box is None:
            raise ValueError("tracker not initialized")
        cfg = self.config
        self._frame_index += 1
        t = self._frame_index
        tick = t % cfg.update_interval == 0

        if (tick or cfg.regenerate_every_frame) and self._last_feature is not None:
            self._regenerate_dynamic()

        search_patch = crop_region(frame, self._box, cfg.search_context, cfg.search_size)
        search = add_position_embedding(
            patch_embed(search_patch, self.model.patch_embed, SEARCH),
            self.model.patch_embed)
        dynamic = TokenSeq.single(self._dynamic, DYNAMIC)
        seq = assemble_input(self._static, dynamic, search)

        out = backbone(seq.tokens, self.model.backbone)
        search_out = extract_search_tokens(seq.with_tokens(out))
        outputs = head_forward(search_out, self.model.head)
        box = decode_bbox(outputs, search_patch)
        # Keep the next search crop anchored on the sensor.
        box = BBox(float(np.clip(box.cx, 0, frame.width - 1)),
                   float(np.clip(box.cy, 0, frame.height - 1)), box.w, box.h)

        if tick:
            feature = self._template_feature(frame, box, frame_index=t)
            self.memory.st_push(feature)
            self.stats.memory_updates += 1
            self._last_feature = feature

        self._box = box
        return box


def track_frames(config: TrackerConfig, model: ModelParams,
                 frames: Sequence[EventFrame], init_box: BBox,
                 debug_stream: IO[str] | None = None) -> list[BBox]:
    """Track over pre-stacked frames; the first output box is init_box."""
    if not frames:
        return []
    tracker = Tracker(config, model, debug_stream)
    boxes = [tracker.init(frames[0], init_box)]
    for frame in frames[1:]:
        boxes.append(tracker.step(frame))
    return boxes


def track_sequence(config: TrackerConfig, model: ModelParams,
                   stream: EventStream, init_box: BBox,
                   debug_stream: IO[str] | None = None) -> list[BBox]:
    """Stack a stream into frames and track it; one box per stacked frame."""
    frames = stack_events(stream, config.window_us)
    return track_frames(config, model, frames, init_box, debug_stream)
