"""Fully convolutional tracking head and box decoding.

Search tokens are reshaped row-major into a C x H_s x W_s map and fed to
three branches (score, offset, size). Each branch halves the channel count
through Conv-BN-ReLU stages (C -> C/2 -> C/4 -> C/8) and ends in a plain
3x3 convolution to its output width (1, 2, 2); all stages preserve the
spatial resolution. Score and the two regression maps pass through a
sigmoid, keeping score in (0,1), offsets in [0,1) per cell, and sizes in
(0,1] of the search side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .events import BBox, RegionPatch
from .ops import sigmoid

BN_EPS = 1e-5


@dataclass
class ConvBNParams:
    conv_w: np.ndarray   # (out, in, 3, 3)
    bn_scale: np.ndarray
    bn_shift: np.ndarray
    bn_mean: np.ndarray  # running statistics (buffers, not learned)
    bn_var: np.ndarray


@dataclass
class HeadBranchParams:
    stages: list[ConvBNParams]
    final_w: np.ndarray  # (out, in, 3, 3)
    final_b: np.ndarray


@dataclass
class HeadParams:
    score: HeadBranchParams
    offset: HeadBranchParams
    size: HeadBranchParams


@dataclass
class HeadOutputs:
    score: np.ndarray   # (H_s, W_s) in (0, 1)
    offset: np.ndarray  # (2, H_s, W_s) as (x, y), in [0, 1)
    size: np.ndarray    # (2, H_s, W_s) as (w, h), in (0, 1]

    @property
    def map_size(self) -> int:
        return self.score.shape[0]


def _init_branch(embed_dim: int, out_channels: int, rng: np.random.Generator,
                 dtype=np.float32) -> HeadBranchParams:
    stages = []
    c_in = embed_dim
    for _ in range(3):
        c_out = c_in // 2
        stages.append(ConvBNParams(
            conv_w=(rng.standard_normal((c_out, c_in, 3, 3)) * 0.05).astype(dtype),
            bn_scale=np.ones(c_out, dtype=dtype),
            bn_shift=np.zeros(c_out, dtype=dtype),
            bn_mean=np.zeros(c_out, dtype=dtype),
            bn_var=np.ones(c_out, dtype=dtype),
        ))
        c_in = c_out
    return HeadBranchParams(
        stages=stages,
        final_w=(rng.standard_normal((out_channels, c_in, 3, 3)) * 0.05).astype(dtype),
        final_b=np.zeros(out_channels, dtype=dtype),
    )


def init_head(embed_dim: int, rng: np.random.Generator, dtype=np.float32) -> HeadParams:
    return HeadParams(
        score=_init_branch(embed_dim, 1, rng, dtype),
        offset=_init_branch(embed_dim, 2, rng, dtype),
        size=_init_branch(embed_dim, 2, rng, dtype),
    )


def conv2d_same(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """3x3 stride-1 convolution with zero padding; x (C_in, H, W) -> (C_out, H, W)."""
    c_in, h, wd = x.shape
    c_out, c_in2, kh, kw = w.shape
    if c_in != c_in2:
        raise ValueError("channel mismatch")
    xp = np.zeros((c_in, h + kh - 1, wd + kw - 1), dtype=x.dtype)
    xp[:, kh // 2:kh // 2 + h, kw // 2:kw // 2 + wd] = x
    # im2col: (H*W, C_in*kh*kw) @ (C_in*kh*kw, C_out)
    cols = np.empty((h * wd, c_in * kh * kw), dtype=x.dtype)
    idx = 0
    for c in range(c_in):
        for dy in range(kh):
            for dx in range(kw):
                cols[:, idx] = xp[c, dy:dy + h, dx:dx + wd].reshape(-1)
                idx += 1
    out = cols @ w.reshape(c_out, -1).T
    return out.T.reshape(c_out, h, wd)


def _batch_norm(x: np.ndarray, p: ConvBNParams) -> np.ndarray:
    inv = 1.0 / np.sqrt(p.bn_var + BN_EPS)
    return ((x - p.bn_mean[:, None, None]) * inv[:, None, None]
            * p.bn_scale[:, None, None] + p.bn_shift[:, None, None])


def _branch_forward(fmap: np.ndarray, branch: HeadBranchParams) -> np.ndarray:
    x = fmap
    for stage in branch.stages:
        x = conv2d_same(x, stage.conv_w)
        x = _batch_norm(x, stage)
        x = np.maximum(x, 0.0)
    x = conv2d_same(x, branch.final_w) + branch.final_b[:, None, None]
    return sigmoid(x)


def tokens_to_map(search_tokens: np.ndarray) -> np.ndarray:
    """Row-major token matrix (N_x, C) -> feature map (C, H_s, W_s)."""
    n, c = search_tokens.shape
    side = math.isqrt(n)
    if side * side != n:
        raise ValueError("search token count must be a perfect square")
    return search_tokens.reshape(side, side, c).transpose(2, 0, 1)


def head_forward(search_tokens: np.ndarray, params: HeadParams) -> HeadOutputs:
    fmap = tokens_to_map(search_tokens)
    return HeadOutputs(
        score=_branch_forward(fmap, params.score)[0],
        offset=_branch_forward(fmap, params.offset),
        size=_branch_forward(fmap, params.size),
    )


def decode_bbox(out: HeadOutputs, search_patch: RegionPatch) -> BBox:
    """Decode the head maps into a frame-coordinate box.

    The score argmax (row-major first on ties) picks the cell; the offset
    refines the center inside the cell, sizes are fractions of the search
    side, and the crop geometry maps everything back to frame coordinates.
    """
    side = out.map_size
    cell_px = search_patch.out_size // side
    flat = int(np.argmax(out.score))  # row-major argmax; ties -> first
    i, j = divmod(flat, side)
    px = (j + float(out.offset[0, i, j])) * cell_px
    py = (i + float(out.offset[1, i, j])) * cell_px
    w_patch = float(out.size[0, i, j]) * search_patch.out_size
    h_patch = float(out.size[1, i, j]) * search_patch.out_size
    cx, cy = search_patch.patch_to_frame(px, py)
    return BBox(cx, cy, w_patch / search_patch.resize_factor,
                h_patch / search_patch.resize_factor)
