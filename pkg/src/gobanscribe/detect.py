"""Stone detection on rectified frames.

Each lattice point is summarized by a small feature vector (luminance,
chrominance, variance, ring edge density) and classified against running
per-class reference statistics by variance-normalized nearest-mean with
a margin.  The fast main detector confirms a stone after three
consecutive supporting frames; the slow asynchronous scanner revisits
the whole board on snapshots, requiring five frames plus a circular
Hough confirmation for late detections, and reports (never deletes)
stones that keep classifying empty.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frames import Frame, EdgeMap, canny_edges, rgb_to_ycbcr
from .game import (BLACK, EMPTY, WHITE, BoardState, DetectionEvent,
                   FalsePositiveReport, LateDetection)
from .geometry import RectLayout
from .hough import circular_hough

UNCERTAIN = 3

# feature vector layout: [luma_mean, cb, cr, luma_var, edge_density]
_N_FEAT = 5
# luma and chroma carry the classification; variance and edge density
# are noisier secondary cues
_BASE_WEIGHTS = np.array([1.0, 1.0, 1.0, 0.1, 0.1])
# variance floors keep distances finite for tight clusters
_VAR_FLOOR = np.array([36.0, 9.0, 9.0, 1e4, 2.5e-3])


@dataclass(frozen=True)
class DetectionFeatures:
    luma_mean: float
    chroma_mean: tuple  # (cb, cr)
    luma_var: float
    edge_density: float

    def vector(self) -> np.ndarray:
        return np.array([self.luma_mean, self.chroma_mean[0],
                         self.chroma_mean[1], self.luma_var,
                         self.edge_density])


@dataclass
class ReferenceStats:
    """Per-class exponentially weighted feature statistics.

    Updates decay with a configurable half-life in samples, so the
    references follow lighting drift while staying stable frame to
    frame.  The empty class must be seeded from the initial empty board
    before classification starts.
    """

    halflife: float = 50.0
    _mean: dict = field(default_factory=dict)   # class -> (5,) array
    _var: dict = field(default_factory=dict)
    _weight: dict = field(default_factory=dict)  # effective sample weight
    _count: dict = field(default_factory=dict)

    def count(self, cls: int) -> int:
        return self._count.get(cls, 0)

    def mean(self, cls: int) -> np.ndarray:
        return self._mean[cls]

    def var(self, cls: int) -> np.ndarray:
        return self._var[cls]

    def update(self, cls: int, x) -> None:
        v = x.vector() if isinstance(x, DetectionFeatures) else \
            np.asarray(x, dtype=np.float64)
        if cls not in self._mean:
            self._mean[cls] = v.copy()
            self._var[cls] = np.zeros(_N_FEAT)
            self._weight[cls] = 1.0
            self._count[cls] = 1
            return
        decay = 0.5 ** (1.0 / self.halflife)
        w = self._weight[cls] * decay + 1.0
        lr = 1.0 / w
        m = self._mean[cls]
        d = v - m
        # West's incremental variance under exponential weighting
        self._var[cls] = (1.0 - lr) * (self._var[cls] + lr * d * d)
        self._mean[cls] = m + lr * d
        self._weight[cls] = w
        self._count[cls] += 1


# ---------------------------------------------------------------------------
# feature extraction


def _disk_offsets(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1]
    m = xs * xs + ys * ys <= radius * radius
    return np.stack([xs[m], ys[m]], axis=-1)


def _ring_offsets(radius: float, width: float = 1.5) -> np.ndarray:
    r = int(np.ceil(radius + width))
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1]
    d = np.sqrt(xs * xs + ys * ys)
    m = np.abs(d - radius) <= width
    return np.stack([xs[m], ys[m]], axis=-1)


_OFFSET_CACHE: dict = {}


def _offsets_for(layout: RectLayout) -> tuple[np.ndarray, np.ndarray]:
    key = (round(layout.spacing, 3),)
    if key not in _OFFSET_CACHE:
        radius = 0.4 * layout.spacing  # 0.8 x half-spacing
        _OFFSET_CACHE[key] = (_disk_offsets(radius), _ring_offsets(radius))
    return _OFFSET_CACHE[key]


def _gather_features(rect: Frame | np.ndarray, layout: RectLayout,
                     edges: EdgeMap | None = None) -> np.ndarray:
    """Feature vectors of every lattice point at once, shape (n, n, 5).

    Indexed [row, col]; one fancy-indexed gather replaces n*n per-point
    extractions on the per-frame hot path.
    """
    px = rect.pixels if isinstance(rect, Frame) else np.asarray(rect)
    h, w = px.shape[:2]
    disk, ring = _offsets_for(layout)
    n, s, m = layout.n, layout.spacing, layout.margin
    cols, rows = np.meshgrid(np.arange(n), np.arange(n))
    cx = (cols + m) * s
    cy = (rows + m) * s
    dx = np.clip(np.rint(cx[..., None] + disk[:, 0]).astype(int), 0, w - 1)
    dy = np.clip(np.rint(cy[..., None] + disk[:, 1]).astype(int), 0, h - 1)
    if px.ndim == 3:
        patch = rgb_to_ycbcr(px[dy, dx])
        luma = patch[..., 0]
        cb = patch[..., 1].mean(axis=-1)
        cr = patch[..., 2].mean(axis=-1)
    else:
        luma = px[dy, dx].astype(np.float64)
        cb = cr = np.full((n, n), 128.0)
    if edges is not None:
        rx = np.clip(np.rint(cx[..., None] + ring[:, 0]).astype(int), 0, w - 1)
        ry = np.clip(np.rint(cy[..., None] + ring[:, 1]).astype(int), 0, h - 1)
        density = edges.bits[ry, rx].mean(axis=-1)
    else:
        density = np.zeros((n, n))
    return np.stack([luma.mean(axis=-1), cb, cr, luma.var(axis=-1), density],
                    axis=-1)


def extract_features(rect: Frame | np.ndarray, p: tuple[int, int],
                     layout: RectLayout,
                     edges: EdgeMap | None = None) -> DetectionFeatures:
    """Features of the disk patch around lattice point `p` (col, row).

    The patch is a disk of 0.8 x half-spacing radius; edge density is
    measured on the ring at the patch boundary.  `edges` should be the
    Canny map of the whole rectified frame, computed once per frame.
    """
    px = rect.pixels if isinstance(rect, Frame) else np.asarray(rect)
    h, w = px.shape[:2]
    cx, cy = layout.point_px(p[0], p[1])
    disk, ring = _offsets_for(layout)
    dx = np.clip(np.rint(disk[:, 0] + cx).astype(int), 0, w - 1)
    dy = np.clip(np.rint(disk[:, 1] + cy).astype(int), 0, h - 1)
    if px.ndim == 3:
        patch = rgb_to_ycbcr(px[dy, dx][None, :, :])[0]
        luma = patch[:, 0]
        cb = float(patch[:, 1].mean())
        cr = float(patch[:, 2].mean())
    else:
        luma = px[dy, dx].astype(np.float64)
        cb = cr = 128.0
    density = 0.0
    if edges is not None:
        rx = np.clip(np.rint(ring[:, 0] + cx).astype(int), 0, w - 1)
        ry = np.clip(np.rint(ring[:, 1] + cy).astype(int), 0, h - 1)
        density = float(edges.bits[ry, rx].mean())
    return DetectionFeatures(luma_mean=float(luma.mean()),
                             chroma_mean=(cb, cr),
                             luma_var=float(luma.var()),
                             edge_density=density)


# ---------------------------------------------------------------------------
# classification


def _chroma_weight(refs: ReferenceStats, classes: list[int]) -> float:
    """Down-weight chroma when class chroma means collapse (pale light)."""
    if len(classes) < 2:
        return 1.0
    means = [refs.mean(c)[1:3] for c in classes]
    spread = max(float(np.linalg.norm(a - b))
                 for i, a in enumerate(means) for b in means[i + 1:])
    pooled = float(np.sqrt(np.mean([refs.var(c)[1:3] for c in classes])
                           + _VAR_FLOOR[1]))
    return float(min(1.0, (spread / (3.0 * pooled)) ** 2))


_FALLBACK_LUMA = {BLACK: 30.0, WHITE: 225.0}


def _classify_vectors(vs: np.ndarray, refs: ReferenceStats,
                      margin: float = 0.6) -> np.ndarray:
    """Vectorized classify over feature vectors of shape (..., 5)."""
    if refs.count(EMPTY) < 1:
        raise ValueError("empty class must be seeded before classification")
    seen = [c for c in (EMPTY, BLACK, WHITE) if refs.count(c) > 0]
    cw = _chroma_weight(refs, seen)
    weights = _BASE_WEIGHTS.copy()
    weights[1:3] *= cw
    dists = []
    for cls in (EMPTY, BLACK, WHITE):
        if refs.count(cls) > 0:
            m = refs.mean(cls)
            var = np.maximum(refs.var(cls), _VAR_FLOOR)
            w = weights
        else:
            # luminance-only prototype for a class never observed
            m = refs.mean(EMPTY).copy()
            m[0] = _FALLBACK_LUMA[cls]
            var = np.maximum(refs.var(EMPTY), _VAR_FLOOR)
            var[0] = 30.0 ** 2
            w = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
        d = vs - m
        dists.append(np.sqrt((w * d * d / var).sum(axis=-1)))
    d = np.stack(dists, axis=-1)   # (..., 3), class index == class constant
    order = np.argsort(d, axis=-1)
    best = order[..., 0]
    d_best = np.take_along_axis(d, order[..., 0:1], -1)[..., 0]
    d_second = np.take_along_axis(d, order[..., 1:2], -1)[..., 0]
    return np.where(d_best < margin * d_second, best, UNCERTAIN)


def classify_point(x: DetectionFeatures, refs: ReferenceStats,
                   margin: float = 0.6) -> int:
    """Nearest reference class by variance-normalized distance.

    The winner must be closer than `margin` times the runner-up's
    distance, else UNCERTAIN.  Stone classes without samples yet fall
    back to luminance-polarity prototypes so early game frames still
    classify.
    """
    return int(_classify_vectors(x.vector(), refs, margin))


def seed_empty(refs: ReferenceStats, rect: Frame | np.ndarray,
               layout: RectLayout, edges: EdgeMap | None = None) -> None:
    """Seed the empty class from every point of an empty-board frame."""
    feats = _gather_features(rect, layout, edges)
    for row in range(layout.n):
        for col in range(layout.n):
            refs.update(EMPTY, feats[row, col])


# ---------------------------------------------------------------------------
# evidence and step functions


@dataclass(frozen=True)
class PointEvidence:
    point: tuple[int, int]
    hypothesis: int  # BLACK or WHITE
    streak: int = 1
    source: str = "main"

    def __post_init__(self):
        if self.hypothesis not in (BLACK, WHITE):
            raise ValueError("hypothesis must be a stone color")
        if self.streak < 1:
            raise ValueError("streak must be >= 1")


@dataclass
class AsyncEvidence:
    """Working state of the asynchronous scanner between snapshots."""

    stones: dict = field(default_factory=dict)     # point -> PointEvidence
    vacancies: dict = field(default_factory=dict)  # point -> empty streak


def _rect_edges(rect: Frame | np.ndarray) -> EdgeMap:
    px = rect.pixels if isinstance(rect, Frame) else np.asarray(rect)
    if px.ndim == 3:
        px = np.clip(np.rint(px.astype(np.float64) @
                             np.array([0.299, 0.587, 0.114])), 0, 255
                     ).astype(np.uint8)
    return canny_edges(px)


def main_step(rect: Frame | np.ndarray, state: BoardState,
              evidence: dict, refs: ReferenceStats, layout: RectLayout,
              *, edges: EdgeMap | None = None, frame: int = 0,
              gate: int = 3, margin: float = 0.6) -> list[DetectionEvent]:
    """One frame of the fast detector over all believed-empty points.

    `evidence` maps point -> PointEvidence and is updated in place.  A
    point emits when its streak reaches `gate` consecutive frames with
    the same stone hypothesis; a classification flip resets the streak.
    Multiple points may emit in the same frame.  Reference statistics
    are refreshed from points whose occupancy is already confirmed.
    """
    if edges is None:
        edges = _rect_edges(rect)
    feats = _gather_features(rect, layout, edges)
    classes = _classify_vectors(feats, refs, margin)
    out: list[DetectionEvent] = []
    for row in range(state.n):
        for col in range(state.n):
            p = (col, row)
            occupant = state.cells[row, col]
            if occupant != EMPTY:
                refs.update(occupant, feats[row, col])
                evidence.pop(p, None)
                continue
            cls = int(classes[row, col])
            if cls in (BLACK, WHITE):
                ev = evidence.get(p)
                if ev is not None and ev.hypothesis == cls:
                    ev = PointEvidence(p, cls, ev.streak + 1, "main")
                else:
                    ev = PointEvidence(p, cls, 1, "main")
                if ev.streak >= gate:
                    out.append(DetectionEvent(point=p, color=cls,
                                              frame=frame, source="main"))
                    evidence.pop(p, None)
                else:
                    evidence[p] = ev
            else:
                evidence.pop(p, None)
                if cls == EMPTY:
                    refs.update(EMPTY, feats[row, col])
    return out


def _circle_at(circles, layout: RectLayout, p: tuple[int, int]) -> bool:
    cx, cy = layout.point_px(p[0], p[1])
    tol = 0.5 * layout.spacing
    return any(np.hypot(c.cx - cx, c.cy - cy) <= tol for c in circles)


def async_scan_step(rect: Frame | np.ndarray, state: BoardState,
                    async_evidence: AsyncEvidence, refs: ReferenceStats,
                    layout: RectLayout, *, edges: EdgeMap | None = None,
                    circles: list | None = None, frame: int = 0,
                    gate: int = 5, margin: float = 0.6) -> list:
    """One snapshot of the slow whole-board scanner.

    Late detections require `gate` consecutive promising snapshots AND a
    circular Hough confirmation at the point; believed-occupied points
    classifying empty for `gate` consecutive snapshots yield a
    FalsePositiveReport.  Reports carry no deletion authority — the
    game-state layer decides what to do with them.
    """
    if edges is None:
        edges = _rect_edges(rect)
    if circles is None:
        sp = layout.spacing
        circles = circular_hough(edges, 0.35 * sp, 0.65 * sp,
                                 min_votes=20, r_step=2.0)
    feats = _gather_features(rect, layout, edges)
    classes = _classify_vectors(feats, refs, margin)
    out: list = []
    for row in range(state.n):
        for col in range(state.n):
            p = (col, row)
            occupant = state.cells[row, col]
            cls = int(classes[row, col])
            if occupant == EMPTY:
                async_evidence.vacancies.pop(p, None)
                if cls in (BLACK, WHITE) or cls == UNCERTAIN:
                    ev = async_evidence.stones.get(p)
                    if cls == UNCERTAIN:
                        if ev is None:
                            continue  # promising but colorless: wait
                        hyp = ev.hypothesis
                    else:
                        hyp = cls
                    if ev is not None and ev.hypothesis == hyp:
                        ev = PointEvidence(p, hyp, ev.streak + 1, "async")
                    else:
                        ev = PointEvidence(p, hyp, 1, "async")
                    if ev.streak >= gate and _circle_at(circles, layout, p):
                        out.append(LateDetection(point=p, color=ev.hypothesis,
                                                 frame=frame))
                        async_evidence.stones.pop(p, None)
                    else:
                        async_evidence.stones[p] = ev
                else:
                    async_evidence.stones.pop(p, None)
            else:
                async_evidence.stones.pop(p, None)
                if cls == EMPTY:
                    streak = async_evidence.vacancies.get(p, 0) + 1
                    if streak >= gate:
                        out.append(FalsePositiveReport(point=p, frame=frame))
                        async_evidence.vacancies.pop(p, None)
                    else:
                        async_evidence.vacancies[p] = streak
                else:
                    async_evidence.vacancies.pop(p, None)
    return out
