"""Training losses with analytic gradients.

The frame loss is the weighted sum  w1 * L1 + w2 * focal + w3 * (1 - GIoU)
with default weights (5, 1, 2). The score map is supervised with a
penalty-reduced center-point focal loss (alpha=2, beta=4) against a Gaussian
target heatmap; offsets and sizes are supervised at the ground-truth cell
with L1 and GIoU on (cx, cy, w, h) normalized by the search side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .events import BBox
from .head import HeadOutputs

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
SCORE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    l1: float = 5.0
    focal: float = 1.0
    giou: float = 2.0

    def __post_init__(self):
        if min(self.l1, self.focal, self.giou) < 0:
            raise ValueError("loss weights must be non-negative")


def combine_losses(l1: float, focal: float, giou_loss: float, w: LossWeights) -> float:
    return w.l1 * l1 + w.focal * focal + w.giou * giou_loss


# ---------------------------------------------------------------------------
# Box overlap
# ---------------------------------------------------------------------------

def iou(a: BBox, b: BBox) -> float:
    # Areas from corner differences so identical boxes give exactly 1.0.
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU in (-1, 1]: IoU minus the hull fraction not covered."""
    val, _ = _giou_value_and_grad(np.array([a.cx, a.cy, a.w, a.h], dtype=np.float64),
                                  np.array([b.cx, b.cy, b.w, b.h], dtype=np.float64))
    return val


def _giou_value_and_grad(p: np.ndarray, g: np.ndarray) -> tuple[float, np.ndarray]:
    """GIoU of center-form boxes and its gradient in the first box.

    Piecewise-smooth; at boundary ties the one-sided derivative is used.
    """
    pcx, pcy, pw, ph = (float(v) for v in p)
    gcx, gcy, gw, gh = (float(v) for v in g)
    if pw <= 0 or ph <= 0 or gw <= 0 or gh <= 0:
        raise ValueError("degenerate box")
    px1, px2 = pcx - pw / 2, pcx + pw / 2
    py1, py2 = pcy - ph / 2, pcy + ph / 2
    gx1, gx2 = gcx - gw / 2, gcx + gw / 2
    gy1, gy2 = gcy - gh / 2, gcy + gh / 2

    iw = min(px2, gx2) - max(px1, gx1)
    ih = min(py2, gy2) - max(py1, gy1)
    inter = max(0.0, iw) * max(0.0, ih)
    # Areas from corner differences so identical boxes give exactly giou = 1.
    area_p = (px2 - px1) * (py2 - py1)
    union = area_p + (gx2 - gx1) * (gy2 - gy1) - inter
    hw = max(px2, gx2) - min(px1, gx1)
    hh = max(py2, gy2) - min(py1, gy1)
    hull = hw * hh
    val = inter / union + union / hull - 1.0

    # Partials of iw/ih/hw/hh in the pred corners (indicators pick the branch).
    diw_dx1 = -1.0 if (iw > 0 and ih > 0 and px1 > gx1) else 0.0
    diw_dx2 = 1.0 if (iw > 0 and ih > 0 and px2 < gx2) else 0.0
    dih_dy1 = -1.0 if (iw > 0 and ih > 0 and py1 > gy1) else 0.0
    dih_dy2 = 1.0 if (iw > 0 and ih > 0 and py2 < gy2) else 0.0
    dhw_dx1 = -1.0 if px1 < gx1 else 0.0
    dhw_dx2 = 1.0 if px2 > gx2 else 0.0
    dhh_dy1 = -1.0 if py1 < gy1 else 0.0
    dhh_dy2 = 1.0 if py2 > gy2 else 0.0

    iw_pos = max(0.0, iw)
    ih_pos = max(0.0, ih)
    d_inter = np.array([ih_pos * (diw_dx1 + diw_dx2),
                        iw_pos * (dih_dy1 + dih_dy2),
                        ih_pos * (diw_dx2 - diw_dx1) / 2,
                        iw_pos * (dih_dy2 - dih_dy1) / 2])
    d_area = np.array([0.0, 0.0, ph, pw])
    d_hull = np.array([hh * (dhw_dx1 + dhw_dx2),
                       hw * (dhh_dy1 + dhh_dy2),
                       hh * (dhw_dx2 - dhw_dx1) / 2,
                       hw * (dhh_dy2 - dhh_dy1) / 2])

    dval_dinter = (union + inter) / union ** 2 - 1.0 / hull
    dval_darea = -inter / union ** 2 + 1.0 / hull
    dval_dhull = -union / hull ** 2
    grad = dval_dinter * d_inter + dval_darea * d_area + dval_dhull * d_hull
    return val, grad


# ---------------------------------------------------------------------------
# Gaussian target heatmap (CenterNet-style)
# ---------------------------------------------------------------------------

def gaussian_radius(box_h: float, box_w: float, min_overlap: float = 0.3) -> float:
    """Largest center shift (in cells) keeping IoU >= min_overlap."""
    a1 = 1.0
    b1 = box_h + box_w
    c1 = box_w * box_h * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 - math.sqrt(b1 ** 2 - 4 * a1 * c1)) / (2 * a1)

    a2 = 4.0
    b2 = 2 * (box_h + box_w)
    c2 = (1 - min_overlap) * box_w * box_h
    r2 = (b2 - math.sqrt(b2 ** 2 - 4 * a2 * c2)) / (2 * a2)

    a3 = 4.0 * min_overlap
    b3 = -2 * min_overlap * (box_h + box_w)
    c3 = (min_overlap - 1) * box_w * box_h
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / (2 * a3)
    return max(0.0, min(r1, r2, r3))


def gaussian_heatmap(shape: tuple[int, int], center: tuple[int, int], radius: float) -> np.ndarray:
    """Heatmap with an exact 1 at `center` and a Gaussian falloff around it."""
    h, w = shape
    ci, cj = center
    out = np.zeros(shape, dtype=np.float64)
    r = max(0, int(radius))
    sigma = (2 * r + 1) / 6.0
    ii, jj = np.ogrid[-r:r + 1, -r:r + 1]
    patch = np.exp(-(ii ** 2 + jj ** 2) / (2 * sigma ** 2))
    i0, i1 = max(0, ci - r), min(h, ci + r + 1)
    j0, j1 = max(0, cj - r), min(w, cj + r + 1)
    out[i0:i1, j0:j1] = patch[i0 - ci + r:i1 - ci + r, j0 - cj + r:j1 - cj + r]
    out[ci, cj] = 1.0
    return out


# ---------------------------------------------------------------------------
# Focal loss
# ---------------------------------------------------------------------------

def focal_loss_with_grad(score: np.ndarray, target: np.ndarray,
                         alpha: float = FOCAL_ALPHA,
                         beta: float = FOCAL_BETA) -> tuple[float, np.ndarray]:
    """Penalty-reduced pixelwise focal loss and its gradient in the score map.

    Cells where target == 1 are positives; elsewhere the penalty is reduced
    by (1 - target)^beta. Normalized by the positive count.
    """
    if score.shape != target.shape:
        raise ValueError("score/target shape mismatch")
    s = np.clip(score.astype(np.float64), SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    in_range = (score > SCORE_CLAMP) & (score < 1.0 - SCORE_CLAMP)
    pos = target == 1.0
    n_pos = max(int(pos.sum()), 1)

    loss = np.where(
        pos,
        -((1.0 - s) ** alpha) * np.log(s),
        -((1.0 - target) ** beta) * (s ** alpha) * np.log(1.0 - s),
    )
    grad = np.where(
        pos,
        alpha * (1.0 - s) ** (alpha - 1) * np.log(s) - (1.0 - s) ** alpha / s,
        -((1.0 - target) ** beta) * (alpha * s ** (alpha - 1) * np.log(1.0 - s)
                                     - (s ** alpha) / (1.0 - s)),
    )
    grad = np.where(in_range, grad, 0.0)  # clamped cells carry no gradient
    return float(loss.sum() / n_pos), grad / n_pos


def focal_loss(score: np.ndarray, target: np.ndarray) -> float:
    value, _ = focal_loss_with_grad(score, target)
    return value


# ---------------------------------------------------------------------------
# Combined loss
# ---------------------------------------------------------------------------

@dataclass
class TotalLoss:
    total: float
    l1: float
    focal: float
    giou_loss: float
    grad_score: np.ndarray
    grad_offset: np.ndarray
    grad_size: np.ndarray
    pred_box: BBox  # decoded at the ground-truth cell, search-patch pixels


def total_loss(outputs: HeadOutputs, gt: BBox, weights: LossWeights | None = None,
               search_size: int = 256) -> TotalLoss:
    """Weighted L1 + focal + GIoU with gradients in the three head maps.

    `gt` is expected in search-patch pixel coordinates. The predicted box is
    decoded at the ground-truth center cell, which keeps the regression
    losses independent of the (non-differentiable) score argmax.
    """
    if weights is None:
        weights = LossWeights()
    side = outputs.map_size
    cell = search_size // side
    j = int(np.clip(gt.cx // cell, 0, side - 1))
    i = int(np.clip(gt.cy // cell, 0, side - 1))

    target = gaussian_heatmap((side, side), (i, j),
                              gaussian_radius(gt.h / cell, gt.w / cell))
    focal, d_score = focal_loss_with_grad(outputs.score, target)

    off_x = float(outputs.offset[0, i, j])
    off_y = float(outputs.offset[1, i, j])
    size_w = float(outputs.size[0, i, j])
    size_h = float(outputs.size[1, i, j])
    pred = np.array([(j + off_x) * cell / search_size,
                     (i + off_y) * cell / search_size,
                     size_w, size_h], dtype=np.float64)
    gt_n = np.array([gt.cx, gt.cy, gt.w, gt.h], dtype=np.float64) / search_size

    l1 = float(np.abs(pred - gt_n).mean())
    d_l1 = np.sign(pred - gt_n) / 4.0

    giou_val, d_giou = _giou_value_and_grad(pred, gt_n)
    giou_loss_val = 1.0 - giou_val
    d_gl = -d_giou

    d_pred = weights.l1 * d_l1 + weights.giou * d_gl
    grad_offset = np.zeros_like(outputs.offset, dtype=np.float64)
    grad_size = np.zeros_like(outputs.size, dtype=np.float64)
    grad_offset[0, i, j] = d_pred[0] * cell / search_size
    grad_offset[1, i, j] = d_pred[1] * cell / search_size
    grad_size[0, i, j] = d_pred[2]
    grad_size[1, i, j] = d_pred[3]

    return TotalLoss(
        total=combine_losses(l1, focal, giou_loss_val, weights),
        l1=l1,
        focal=focal,
        giou_loss=giou_loss_val,
        grad_score=weights.focal * d_score,
        grad_offset=grad_offset,
        grad_size=grad_size,
        pred_box=BBox(pred[0] * search_size, pred[1] * search_size,
                      pred[2] * search_size, pred[3] * search_size),
    )
