"""Shared test helpers: small model builders and gradient comparison."""

import numpy as np

from evtrack.config import TrackerConfig
from evtrack.model import init_model

SMALL_CONFIG = dict(embed_dim=16, depth=1, d_state=2, dt_rank=2,
                    template_size=32, search_size=64, patch_size=16,
                    lt_capacity=3, st_capacity=2, update_interval=5)


def small_config(**overrides) -> TrackerConfig:
    kw = dict(SMALL_CONFIG)
    kw.update(overrides)
    return TrackerConfig(**kw)


def small_model(**overrides):
    cfg = small_config(**overrides)
    return cfg, init_model(cfg)


def assert_grad_close(analytic, fd, rtol=1e-4, atol=1e-7):
    """Elementwise |a - b| <= atol + rtol * max(|a|, |b|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    tol = atol + rtol * np.maximum(np.abs(analytic), np.abs(fd))
    bad = np.abs(analytic - fd) > tol
    assert not bad.any(), (
        f"{int(bad.sum())} gradient entries disagree; worst "
        f"analytic={analytic[bad].ravel()[0]:.6g} fd={fd[bad].ravel()[0]:.6g}")


def central_difference(fn, arr, idx, eps=1e-4):
    orig = arr[idx]
    arr[idx] = orig + eps
    hi = fn()
    arr[idx] = orig - eps
    lo = fn()
    arr[idx] = orig
    return (hi - lo) / (2 * eps)
