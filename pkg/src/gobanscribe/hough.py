"""Linear and circular Hough transforms with peak extraction.

Implemented from scratch on numpy accumulators.  Circle voting is
restricted along gradient directions when the edge map carries
orientations, which keeps the 3-parameter accumulator tractable on a
quarter-megapixel rectified image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .frames import EdgeMap


@dataclass(frozen=True)
class Line:
    rho: float
    theta: float  # radians in [0, pi)
    score: int = 0


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float
    score: int = 0

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])


def _line_bin_distance(j1, i1, j2, i2, n_theta, n_rho):
    """Chebyshev bin distance between accumulator cells, theta wrap aware."""
    d_plain = max(abs(j1 - j2), abs(i1 - i2))
    # (theta, rho) ~ (theta + pi, -rho): compare against the wrapped twin
    j2w = j2 - n_theta if j2 > j1 else j2 + n_theta
    i2w = (n_rho - 1) - i2
    d_wrap = max(abs(j1 - j2w), abs(i1 - i2w))
    return min(d_plain, d_wrap)


def linear_hough(edges: EdgeMap, theta_step: float = np.radians(1.0),
                 rho_step: float = 1.0, min_votes: int = 50,
                 max_lines: int | None = None) -> list[Line]:
    """Peak lines of the (rho, theta) accumulator, sorted by score.

    Neighboring cells within one bin of a stronger peak are suppressed;
    `max_lines` stops the suppression scan once enough peaks survive.
    """
    if theta_step <= 0 or rho_step <= 0:
        raise ValueError("steps must be positive")
    ys, xs = np.nonzero(edges.bits)
    if len(xs) == 0:
        return []
    h, w = edges.bits.shape
    diag = float(np.hypot(h, w))
    n_rho = 2 * int(np.ceil(diag / rho_step)) + 1
    off = n_rho // 2
    thetas = np.arange(0.0, np.pi - 1e-9, theta_step)
    n_theta = len(thetas)
    cos = np.cos(thetas).astype(np.float32)
    sin = np.sin(thetas).astype(np.float32)
    xs32 = xs.astype(np.float32)
    ys32 = ys.astype(np.float32)
    acc = np.empty((n_theta, n_rho), dtype=np.int64)
    chunk = max(1, int(4e6 / max(len(xs), 1)))
    for j0 in range(0, n_theta, chunk):
        j1 = min(n_theta, j0 + chunk)
        rho = np.multiply.outer(cos[j0:j1], xs32) + np.multiply.outer(sin[j0:j1], ys32)
        idx = np.rint(rho / rho_step).astype(np.int64) + off
        base = (np.arange(j0, j1) - j0)[:, None] * n_rho
        flat = (base + idx).ravel()
        acc[j0:j1] = np.bincount(flat, minlength=(j1 - j0) * n_rho).reshape(j1 - j0, n_rho)

    local_max = acc == ndi.maximum_filter(acc, size=3, mode="nearest")
    cand = np.argwhere(local_max & (acc >= min_votes))
    if len(cand) == 0:
        return []
    scores = acc[cand[:, 0], cand[:, 1]]
    order = np.argsort(-scores, kind="stable")
    kept: list[tuple[int, int, int]] = []
    kj = np.empty(len(order), dtype=np.int64)
    ki = np.empty(len(order), dtype=np.int64)
    for k in order:
        j, i = int(cand[k, 0]), int(cand[k, 1])
        m = len(kept)
        if m:
            # vectorized _line_bin_distance against all accepted peaks
            d_plain = np.maximum(np.abs(kj[:m] - j), np.abs(ki[:m] - i))
            jw = np.where(kj[:m] > j, kj[:m] - n_theta, kj[:m] + n_theta)
            iw = (n_rho - 1) - ki[:m]
            d_wrap = np.maximum(np.abs(jw - j), np.abs(iw - i))
            if int(np.minimum(d_plain, d_wrap).min()) <= 1:
                continue
        kj[m] = j
        ki[m] = i
        kept.append((j, i, int(scores[k])))
        if max_lines is not None and len(kept) >= max_lines:
            break
    return [Line(rho=(i - off) * rho_step, theta=j * theta_step, score=s)
            for j, i, s in kept]


def circular_hough(edges: EdgeMap, r_min: float, r_max: float,
                   min_votes: int = 20, r_step: float = 1.0,
                   angle_step_deg: float = 2.0) -> list[Circle]:
    """Candidate circles from a (cx, cy, r) vote with local-max suppression.

    With gradient orientations available each edge pixel votes only along
    +/- its gradient; otherwise the full perimeter is sampled.  Scores are
    3x3-summed center votes, so a clean ring scores about its perimeter
    pixel count.
    """
    if not 0 < r_min <= r_max:
        raise ValueError("need 0 < r_min <= r_max")
    ys, xs = np.nonzero(edges.bits)
    if len(xs) == 0:
        return []
    h, w = edges.bits.shape
    radii = np.arange(r_min, r_max + r_step / 2, r_step)
    acc = np.zeros((len(radii), h, w), dtype=np.int32)
    if edges.orientation is not None:
        o = edges.orientation[ys, xs].astype(np.float64)
        dirs = np.stack([np.cos(o), np.sin(o)], axis=-1)
        for i, r in enumerate(radii):
            for sgn in (1.0, -1.0):
                cx = np.rint(xs + sgn * r * dirs[:, 0]).astype(np.int64)
                cy = np.rint(ys + sgn * r * dirs[:, 1]).astype(np.int64)
                ok = (cx >= 0) & (cy >= 0) & (cx < w) & (cy < h)
                flat = cy[ok] * w + cx[ok]
                acc[i] += np.bincount(flat, minlength=h * w).reshape(h, w).astype(np.int32)
    else:
        angles = np.arange(0.0, 2 * np.pi, np.radians(angle_step_deg))
        ca, sa = np.cos(angles), np.sin(angles)
        for i, r in enumerate(radii):
            cx = np.rint(xs[:, None] + r * ca[None, :]).astype(np.int64).ravel()
            cy = np.rint(ys[:, None] + r * sa[None, :]).astype(np.int64).ravel()
            ok = (cx >= 0) & (cy >= 0) & (cx < w) & (cy < h)
            flat = cy[ok] * w + cx[ok]
            acc[i] += np.bincount(flat, minlength=h * w).reshape(h, w).astype(np.int32)

    # 3x3 center smearing absorbs rasterization jitter before peak picking
    summed = ndi.uniform_filter(acc.astype(np.float32), size=(1, 3, 3),
                                mode="constant") * 9.0
    summed = np.rint(summed).astype(np.int32)
    cand = np.argwhere(summed >= min_votes)
    if len(cand) == 0:
        return []
    # sparse local-max test: cells above threshold are few, so comparing
    # each against its 26 neighbors beats a full 3x3x3 maximum filter
    nr = len(radii)
    vals = summed[cand[:, 0], cand[:, 1], cand[:, 2]]
    keep = np.ones(len(cand), dtype=bool)
    for dr in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dr == dy == dx == 0:
                    continue
                ri = np.clip(cand[:, 0] + dr, 0, nr - 1)
                yi = np.clip(cand[:, 1] + dy, 0, h - 1)
                xi = np.clip(cand[:, 2] + dx, 0, w - 1)
                keep &= vals >= summed[ri, yi, xi]
    cand = cand[keep]
    if len(cand) == 0:
        return []
    scores = summed[cand[:, 0], cand[:, 1], cand[:, 2]]
    order = np.argsort(-scores, kind="stable")
    kept: list[Circle] = []
    for k in order:
        ri, cy, cx = (int(v) for v in cand[k])
        r = float(radii[ri])
        suppressed = False
        for c in kept:
            if (abs(c.r - r) <= r_step + 1e-9
                    and np.hypot(c.cx - cx, c.cy - cy) < c.r / 2):
                suppressed = True
                break
        if not suppressed:
            kept.append(Circle(cx=float(cx), cy=float(cy), r=r,
                               score=int(scores[k])))
    return kept


def refine_circle(edges: EdgeMap, c: Circle, band: float = 2.0) -> Circle:
    """Sub-pixel center/radius via an algebraic least-squares circle fit.

    Uses edge pixels within `band` of the candidate ring; falls back to
    the input circle when the fit is degenerate.
    """
    pts = edges.pixels_xy()
    if len(pts) == 0:
        return c
    d = np.hypot(pts[:, 0] - c.cx, pts[:, 1] - c.cy)
    sel = np.abs(d - c.r) <= band
    pts = pts[sel]
    if len(pts) < 6:
        return c
    a = np.column_stack([pts, np.ones(len(pts))])
    b = (pts ** 2).sum(axis=1)
    try:
        sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    except np.linalg.LinAlgError:
        return c
    cx, cy = sol[0] / 2, sol[1] / 2
    rr = sol[2] + cx * cx + cy * cy
    if rr <= 0:
        return c
    r = float(np.sqrt(rr))
    if abs(r - c.r) > band + 1 or np.hypot(cx - c.cx, cy - c.cy) > band + 1:
        return c
    return Circle(cx=float(cx), cy=float(cy), r=r, score=c.score)
