"""Patch embedding and token-sequence assembly.

A region patch is cut into non-overlapping P x P patches in row-major order;
each patch is flattened channel-major and linearly projected to the embedding
dimension. The backbone input is the concatenation
[static template | dynamic template | search region]; positional embeddings
are added to the static template and search tokens only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import RegionPatch

STATIC = 0
DYNAMIC = 1
SEARCH = 2

_SEGMENT_NAMES = {STATIC: "STATIC", DYNAMIC: "DYNAMIC", SEARCH: "SEARCH"}


@dataclass
class TokenSeq:
    """Token matrix (m x C) with a per-token segment label.

    Segment runs must be contiguous and ordered [STATIC, DYNAMIC, SEARCH].
    """

    tokens: np.ndarray
    segments: np.ndarray

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.int8)
        if self.tokens.ndim != 2:
            raise ValueError("tokens must be m x C")
        if self.segments.shape != (self.tokens.shape[0],):
            raise ValueError("one segment label per token required")
        if self.segments.size and not np.all(np.isin(self.segments, (STATIC, DYNAMIC, SEARCH))):
            raise ValueError("unknown segment label")
        if np.any(np.diff(self.segments) < 0):
            raise ValueError("segments must be contiguous runs in order [STATIC, DYNAMIC, SEARCH]")

    @property
    def embed_dim(self) -> int:
        return self.tokens.shape[1]

    def count(self, segment: int) -> int:
        return int(np.sum(self.segments == segment))

    @property
    def segment_counts(self) -> tuple[int, int, int]:
        return (self.count(STATIC), self.count(DYNAMIC), self.count(SEARCH))

    @classmethod
    def single(cls, tokens: np.ndarray, segment: int) -> "TokenSeq":
        return cls(tokens, np.full(tokens.shape[0], segment, dtype=np.int8))

    def with_tokens(self, tokens: np.ndarray) -> "TokenSeq":
        """Same segment labels over a transformed token matrix."""
        if tokens.shape[0] != self.segments.shape[0]:
            raise ValueError("token count must match segment labels")
        return TokenSeq(tokens, self.segments.copy())


@dataclass
class PatchEmbedParams:
    """Linear patch projection plus positional embeddings.

    projection: (3*P*P) x C, bias: C
    pos_embed_template: N_z x C, pos_embed_search: N_x x C
    """

    projection: np.ndarray
    bias: np.ndarray
    pos_embed_template: np.ndarray
    pos_embed_search: np.ndarray
    patch_size: int

    def __post_init__(self):
        if self.projection.shape[0] != 3 * self.patch_size ** 2:
            raise ValueError("projection rows must equal 3*P*P")
        if self.bias.shape != (self.projection.shape[1],):
            raise ValueError("bias must match embedding dimension")

    @property
    def embed_dim(self) -> int:
        return self.projection.shape[1]


def init_patch_embed(patch_size: int, embed_dim: int, template_size: int,
                     search_size: int, rng: np.random.Generator,
                     dtype=np.float32) -> PatchEmbedParams:
    n_z = (template_size // patch_size) ** 2
    n_x = (search_size // patch_size) ** 2
    scale = 0.02
    return PatchEmbedParams(
        projection=(rng.standard_normal((3 * patch_size ** 2, embed_dim)) * scale).astype(dtype),
        bias=np.zeros(embed_dim, dtype=dtype),
        pos_embed_template=(rng.standard_normal((n_z, embed_dim)) * scale).astype(dtype),
        pos_embed_search=(rng.standard_normal((n_x, embed_dim)) * scale).astype(dtype),
        patch_size=patch_size,
    )


def patchify(data: np.ndarray, patch_size: int) -> np.ndarray:
    """(3, S, S) -> (n_patches, 3*P*P); row-major patches, channel-major flattening."""
    c, s, s2 = data.shape
    p = patch_size
    if s != s2 or s % p != 0:
        raise ValueError("patch side must divide the image side")
    g = s // p
    # (c, gy, p, gx, p) -> (gy, gx, c, p, p): channel-major within each patch
    tiles = data.reshape(c, g, p, g, p).transpose(1, 3, 0, 2, 4)
    return tiles.reshape(g * g, c * p * p)


def patch_embed(patch: RegionPatch, params: PatchEmbedParams, segment: int = SEARCH) -> TokenSeq:
    """Embed a region patch into a single-segment token sequence.

    Token i corresponds to grid cell (i // g, i % g) with g = side / P.
    No positional embedding is added here.
    """
    flat = patchify(patch.data, params.patch_size)
    tokens = flat.astype(params.projection.dtype) @ params.projection + params.bias
    return TokenSeq.single(tokens, segment)


def add_position_embedding(seq: TokenSeq, params: PatchEmbedParams) -> TokenSeq:
    """Add the positional table matching the sequence's segment.

    Only static-template and search tokens carry positional embeddings;
    dynamic-template tokens are returned unchanged.
    """
    seg = int(seq.segments[0]) if seq.segments.size else DYNAMIC
    if seg == STATIC:
        table = params.pos_embed_template
    elif seg == SEARCH:
        table = params.pos_embed_search
    else:
        return seq
    if seq.tokens.shape != table.shape:
        raise ValueError(f"{_SEGMENT_NAMES[seg]} tokens do not match the positional table shape")
    return seq.with_tokens(seq.tokens + table)


def assemble_input(static_t: TokenSeq, dynamic_t: TokenSeq, search_t: TokenSeq) -> TokenSeq:
    """Concatenate [STATIC, DYNAMIC, SEARCH] into the backbone input.

    Positional embeddings are expected to be already added to the static and
    search tokens; dynamic tokens never receive one.
    """
    parts = (static_t, dynamic_t, search_t)
    dims = {p.embed_dim for p in parts if p.tokens.size}
    if len(dims) > 1:
        raise ValueError("embedding dimension mismatch")
    for p, seg in zip(parts, (STATIC, DYNAMIC, SEARCH)):
        if p.segments.size and not np.all(p.segments == seg):
            raise ValueError(f"expected a pure {_SEGMENT_NAMES[seg]} sequence")
    tokens = np.concatenate([p.tokens for p in parts], axis=0)
    segments = np.concatenate([p.segments for p in parts])
    return TokenSeq(tokens, segments)


def extract_search_tokens(seq: TokenSeq) -> np.ndarray:
    """Return exactly the SEARCH-labeled rows, in order."""
    mask = seq.segments == SEARCH
    if not mask.any():
        raise ValueError("sequence has no SEARCH tokens")
    return seq.tokens[mask]
