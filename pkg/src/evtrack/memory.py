"""Long-term / short-term template libraries with Gram-determinant admission.

The short-term store is a FIFO queue sampled at fixed intervals; evicted
templates are offered to the long-term store, which accepts a replacement
only when it strictly increases the determinant of its pairwise Pearson
correlation (Gram) matrix, i.e. only when diversity grows. Lookups route an
incoming template to whichever library holds its most similar member.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np


@dataclass(frozen=True)
class TemplateFeature:
    """Patch-embedded tokens (N_z x C) of one tracking-result crop."""

    tokens: np.ndarray
    frame_index: int

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ValueError("template tokens must be N_z x C")
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("non-finite template feature")

    def flat(self) -> np.ndarray:
        return self.tokens.reshape(-1)


def pearson(a: TemplateFeature, b: TemplateFeature) -> float:
    """Pearson linear correlation of the flattened features, in [-1, 1].

    Zero-variance convention: identical vectors correlate at 1, otherwise 0.
    """
    x = a.flat().astype(np.float64)
    y = b.flat().astype(np.float64)
    if x.shape != y.shape:
        raise ValueError("feature shapes differ")
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(xc @ xc)
    vy = float(yc @ yc)
    if vx == 0.0 or vy == 0.0:
        return 1.0 if np.array_equal(x, y) else 0.0
    r = float(xc @ yc) / np.sqrt(vx * vy)
    return float(np.clip(r, -1.0, 1.0))


def gram_matrix(templates: Sequence[TemplateFeature]) -> np.ndarray:
    n = len(templates)
    g = np.ones((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            g[i, j] = g[j, i] = pearson(templates[i], templates[j])
    return g


def gram_det(templates: Sequence[TemplateFeature]) -> float:
    """Determinant of the pairwise-correlation matrix; the diversity measure.

    Correlation matrices are positive semi-definite, so the value lies in
    [0, 1] up to rounding; anything below -1e-9 indicates a bug.
    """
    if not templates:
        raise ValueError("empty template set")
    det = float(np.linalg.det(gram_matrix(templates)))
    assert det >= -1e-9, f"gram determinant {det} below PSD rounding floor"
    return det


@dataclass(frozen=True)
class AdmissionRecord:
    accepted: bool
    replaced_index: int | None
    det_before: float
    det_after: float


@dataclass
class MemoryLibrary:
    """ST (FIFO) + LT (diversity-curated) template stores.

    Both stores are filled to capacity with the initial template before any
    update; `interval` records the frame cadence the tracker updates at.
    Set debug_stream to a writable file object to get one JSON line per
    operation.
    """

    st_capacity: int = 6
    lt_capacity: int = 16
    interval: int = 5
    debug_stream: IO[str] | None = None
    st: deque = field(default_factory=deque)
    lt: list = field(default_factory=list)
    initialized: bool = False

    def __post_init__(self):
        if self.st_capacity < 1 or self.lt_capacity < 1 or self.interval < 1:
            raise ValueError("capacities and interval must be positive")

    def _log(self, frame: int | None, op: str, record: AdmissionRecord | None = None,
             routed: str | None = None) -> None:
        if self.debug_stream is None:
            return
        entry = {
            "frame": frame,
            "op": op,
            "accepted": record.accepted if record else None,
            "replaced_index": record.replaced_index if record else None,
            "det_before": record.det_before if record else None,
            "det_after": record.det_after if record else None,
            "routed": routed,
        }
        self.debug_stream.write(json.dumps(entry) + "\n")

    def init_memory(self, initial: TemplateFeature) -> None:
        """Fill both libraries to capacity with copies of the initial template."""
        if self.initialized:
            raise ValueError("memory already initialized")
        self.st.extend(initial for _ in range(self.st_capacity))
        self.lt.extend(initial for _ in range(self.lt_capacity))
        self.initialized = True
        self._log(initial.frame_index, "init")

    def lt_admit(self, z_rem: TemplateFeature) -> AdmissionRecord:
        """Try every single replacement; keep the best only if it strictly
        raises the Gram determinant, otherwise discard z_rem."""
        if len(self.lt) != self.lt_capacity:
            raise ValueError("lt_admit requires a full long-term library")
        det_before = gram_det(self.lt)
        best_det = -np.inf
        best_j = -1
        for j in range(len(self.lt)):
            candidate = list(self.lt)
            candidate[j] = z_rem
            det = gram_det(candidate)
            if det > best_det:
                best_det, best_j = det, j
        if best_det > det_before:
            self.lt[best_j] = z_rem
            record = AdmissionRecord(True, best_j, det_before, best_det)
        else:
            record = AdmissionRecord(False, None, det_before, det_before)
        self._log(z_rem.frame_index, "lt_admit", record=record)
        return record

    def st_push(self, z_new: TemplateFeature) -> AdmissionRecord | None:
        """Enqueue into ST; an overflowing oldest member is offered to the LT."""
        self.st.append(z_new)
        record = None
        if len(self.st) > self.st_capacity:
            evicted = self.st.popleft()
            record = self.lt_admit(evicted)
        self._log(z_new.frame_index, "st_push", record=record)
        return record

    def route(self, incoming: TemplateFeature) -> str:
        """Return "ST" or "LT": the library holding the most similar member.

        Ties go to ST (more recent information).
        """
        if not self.st or not self.lt:
            raise ValueError("route requires non-empty libraries")
        best_st = max(pearson(incoming, z) for z in self.st)
        best_lt = max(pearson(incoming, z) for z in self.lt)
        routed = "ST" if best_st >= best_lt else "LT"
        self._log(incoming.frame_index, "route", routed=routed)
        return routed

    def st_members(self) -> list[TemplateFeature]:
        """ST contents in FIFO order (oldest first)."""
        return list(self.st)

    def lt_members(self) -> list[TemplateFeature]:
        """LT contents ordered by ascending frame index."""
        return sorted(self.lt, key=lambda z: z.frame_index)
