"""Event-camera single-object tracking with a selective-scan backbone.

Submodules:
    events     event streams, frame stacking, crops, synthetic sequences
    tokenizer  patch embedding and token assembly
    ssm        the discretized selective-scan operator (forward/chunked/backward)
    backbone   bidirectional Vim blocks and the residual token backbone
    memory     LT/ST template libraries with Gram-determinant admission
    fusion     dynamic-template generation via the fusion Mamba stack
    head       convolutional score/offset/size head and box decoding
    losses     focal / L1 / GIoU losses with analytic gradients
    metrics    SR / PR / NPR evaluation
    tracker    the end-to-end tracking loop
    weights    binary weight-file round trips
    cli        command-line interface
"""

from .config import TrackerConfig, load_config
from .events import (BBox, EventFrame, EventPoint, EventStream, RegionPatch,
                     SynthConfig, crop_region, stack_events, synth_stream)
from .head import HeadOutputs, decode_bbox, head_forward
from .losses import LossWeights, focal_loss, giou, iou, total_loss
from .memory import MemoryLibrary, TemplateFeature, gram_det, pearson
from .metrics import EvalReport, evaluate
from .model import ModelParams, count_params, init_model
from .ssm import (SSMParams, discretize, scan_backward, scan_bidirectional,
                  scan_forward, scan_forward_chunked)
from .tokenizer import (DYNAMIC, SEARCH, STATIC, TokenSeq, assemble_input,
                        extract_search_tokens, patch_embed)
from .tracker import Tracker, track_frames, track_sequence
from .weights import WeightFileError, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "BBox", "DYNAMIC", "EvalReport", "EventFrame", "EventPoint", "EventStream",
    "HeadOutputs", "LossWeights", "MemoryLibrary", "ModelParams", "RegionPatch",
    "SEARCH", "SSMParams", "STATIC", "SynthConfig", "TokenSeq", "Tracker",
    "TrackerConfig", "WeightFileError", "assemble_input", "count_params",
    "crop_region", "decode_bbox", "discretize", "evaluate",
    "extract_search_tokens", "focal_loss", "giou", "gram_det", "head_forward",
    "init_model", "iou", "load_config", "load_weights", "patch_embed",
    "pearson", "save_weights", "scan_backward", "scan_bidirectional",
    "scan_forward", "scan_forward_chunked", "stack_events", "synth_stream",
    "total_loss", "track_frames", "track_sequence", "TemplateFeature",
]
