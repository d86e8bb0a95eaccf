"""Dynamic-template generation: fuse a memory library with a Mamba stack.

The selected library's templates are concatenated chronologically into one
long token sequence and run through a stack whose architecture matches the
vision backbone; the trailing N_z tokens become the fused dynamic template.
The stack either shares the backbone's parameters or owns an identical,
independently parameterized copy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backbone import BackboneParams, backbone
from .memory import MemoryLibrary, TemplateFeature

# Number of dynamic templates simulated per training sample, and the
# ablation-best library size; both are exposed, neither changes inference.
TRAIN_DYNAMIC_TEMPLATES = 7
BEST_DYNAMIC_TEMPLATES = 11


@dataclass
class MemMambaParams:
    """Fusion stack parameters; `shared` marks backbone parameter aliasing."""

    stack: BackboneParams
    shared: bool


def fuse(templates: Sequence[TemplateFeature], params: MemMambaParams,
         chunk: int = 64) -> np.ndarray:
    """Fuse m templates (oldest first) into one N_z x C dynamic template.

    The concatenated (m * N_z) x C sequence runs through the full stack; the
    final N_z rows are returned. No positional embedding is added.
    """
    if len(templates) == 0:
        raise ValueError("cannot fuse an empty template sequence")
    n_z = templates[0].tokens.shape[0]
    seq = np.concatenate([z.tokens for z in templates], axis=0)
    out = backbone(seq, params.stack, chunk)
    return out[-n_z:]


def generate_dynamic_template(lib: MemoryLibrary, incoming: TemplateFeature,
                              params: MemMambaParams, chunk: int = 64) -> np.ndarray:
    """Route by similarity, then fuse the winning library's members.

    ST members fuse in FIFO order, LT members in ascending frame order.
    """
    routed = lib.route(incoming)
    members = lib.st_members() if routed == "ST" else lib.lt_members()
    return fuse(members, params, chunk)
