"""Grid pose tracking across frames.

Three tiers keep the grid locked: a fast per-frame template tracker, an
asynchronous full relocation by the linear pipeline early in the game
(grid-init's `locate_grid` serves that role directly), and the circular
relocator for yose, when most grid lines are hidden under stones.  All
proposals go through a stability gate before the engine swaps grids.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .frames import Frame, canny_edges, to_grayscale
from .geometry import (DegenerateError, GridModel, RectLayout, convex_hull,
                       homography_from_pairs, homography_lsq,
                       max_area_quadrilateral, order_quad, quad_area,
                       rectify_pixels, rotate_points, rotation_from_segments,
                       weighted_mean_homography)
from .geometry import NoAdjacentPairsError
from .hough import Circle, circular_hough, refine_circle
from .game import BoardState


class TrackingLostError(RuntimeError):
    """Fast tracker lost correlation; the previous grid remains valid."""


class InsufficientStonesError(RuntimeError):
    pass


class NoMatchError(RuntimeError):
    pass


class AmbiguousMatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridProposal:
    grid: GridModel
    source: str  # {"fast", "linear-async", "circular-async"}
    streak: int = 1
    frame: int = 0
    # circle candidates to carry into the next streaming relocation call
    carry: tuple = ()

    def __post_init__(self):
        if self.streak < 1:
            raise ValueError("streak must be >= 1")


@dataclass(frozen=True)
class CandidateCircle:
    center: np.ndarray  # rectified coordinates
    radius: float
    first_seen: int = 0
    streak: int = 1
    confirmed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=np.float64))
        if self.confirmed and self.streak < 2:
            raise ValueError("confirmed requires streak >= 2")


# ---------------------------------------------------------------------------
# fast per-frame tracker


def _ncc(template: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation map of template over window (valid)."""
    th, tw = template.shape
    wh, ww = window.shape
    oh, ow = wh - th + 1, ww - tw + 1
    t = template.astype(np.float64)
    t = t - t.mean()
    tn = np.sqrt((t * t).sum())
    out = np.full((oh, ow), -1.0)
    if tn < 1e-9:
        return out
    w = window.astype(np.float64)
    # numerator by FFT correlation (the template is zero-mean, so the
    # window's local mean drops out); local variances by integral images
    num = signal.fftconvolve(w, t[::-1, ::-1], mode="valid")
    area = th * tw
    ii = np.pad(w, ((1, 0), (1, 0))).cumsum(axis=0).cumsum(axis=1)
    ii2 = np.pad(w * w, ((1, 0), (1, 0))).cumsum(axis=0).cumsum(axis=1)
    s = ii[th:, tw:] - ii[:-th, tw:] - ii[th:, :-tw] + ii[:-th, :-tw]
    s2 = ii2[th:, tw:] - ii2[:-th, tw:] - ii2[th:, :-tw] + ii2[:-th, :-tw]
    denom = np.sqrt(np.clip(s2 - s * s / area, 0.0, None)) * tn
    ok = denom > 1e-9
    out[ok] = num[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def _subpixel_peak(m: np.ndarray) -> tuple[float, float, float]:
    """(x, y, value) of the correlation peak with parabolic refinement."""
    iy, ix = np.unravel_index(int(np.argmax(m)), m.shape)
    best = float(m[iy, ix])
    x, y = float(ix), float(iy)
    if 0 < ix < m.shape[1] - 1:
        a, b, c = m[iy, ix - 1], m[iy, ix], m[iy, ix + 1]
        den = a - 2 * b + c
        if abs(den) > 1e-12:
            x += float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))
    if 0 < iy < m.shape[0] - 1:
        a, b, c = m[iy - 1, ix], m[iy, ix], m[iy + 1, ix]
        den = a - 2 * b + c
        if abs(den) > 1e-12:
            y += float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))
    return x, y, best


def fast_track(g: GridModel, f_prev: Frame, f: Frame, *,
               corr_floor: float = 0.6, max_probes: int = 32) -> GridModel:
    """Track the grid by template matching around lattice intersections.

    Intersection neighborhoods from the previous frame are searched in
    the new frame within one stone radius; the corner update is the
    median probe displacement.  Raises TrackingLostError (grid is still
    valid) when more than half the probes fall below the correlation
    floor — e.g. a bump larger than the search window.
    """
    prev_px = to_grayscale(f_prev).pixels
    cur_px = to_grayscale(f).pixels
    stone_r = 0.5 * g.spacing_px()
    half = max(3, int(round(0.45 * g.spacing_px())))
    search = max(2, int(np.ceil(stone_r)))
    pts = g.lattice_points().reshape(-1, 2)
    if len(pts) > max_probes:
        step = len(pts) / max_probes
        pts = pts[(np.arange(max_probes) * step).astype(int)]
    h, w = cur_px.shape
    shifts = []
    low = 0
    probes = 0
    for px, py in pts:
        cx, cy = int(round(px)), int(round(py))
        x0, x1 = cx - half, cx + half + 1
        y0, y1 = cy - half, cy + half + 1
        if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
            continue
        wx0, wx1 = x0 - search, x1 + search
        wy0, wy1 = y0 - search, y1 + search
        if wx0 < 0 or wy0 < 0 or wx1 > w or wy1 > h:
            continue
        probes += 1
        m = _ncc(prev_px[y0:y1, x0:x1], cur_px[wy0:wy1, wx0:wx1])
        mx, my, score = _subpixel_peak(m)
        if score < corr_floor:
            low += 1
            continue
        shifts.append((mx - search, my - search))
    if probes == 0 or low > 0.5 * probes:
        raise TrackingLostError(f"{low}/{probes} probes below correlation floor")
    if not shifts:
        raise TrackingLostError("no usable probes")
    shifts = np.asarray(shifts)
    d = np.median(shifts, axis=0)
    # a jump past the search window aliases probes onto unrelated grid
    # texture: correlations stay high but the estimates stop agreeing
    agree = np.linalg.norm(shifts - d, axis=1) <= 2.0
    if agree.sum() < 0.5 * probes:
        raise TrackingLostError("probe displacements inconsistent")
    d = shifts[agree].mean(axis=0)
    return GridModel(g.n, g.corners + d)


# ---------------------------------------------------------------------------
# circle confirmation across frames


def confirm_circles(prev: list[CandidateCircle],
                    fresh: list[Circle], frame: int = 0) -> list[CandidateCircle]:
    """Advance candidate streaks with the new frame's circles.

    A fresh circle within a previous candidate's own radius extends that
    candidate; two consecutive sightings confirm it.  Unmatched previous
    candidates are dropped, unmatched fresh circles start new candidates.
    """
    out: list[CandidateCircle] = []
    used = [False] * len(fresh)
    for cand in prev:
        best, best_d = None, None
        for i, c in enumerate(fresh):
            if used[i]:
                continue
            d = float(np.hypot(c.cx - cand.center[0], c.cy - cand.center[1]))
            if d <= cand.radius and (best_d is None or d < best_d):
                best, best_d = i, d
        if best is None:
            continue  # dropped
        used[best] = True
        c = fresh[best]
        streak = cand.streak + 1
        out.append(CandidateCircle(center=(c.cx, c.cy), radius=float(c.r),
                                   first_seen=cand.first_seen, streak=streak,
                                   confirmed=streak >= 2))
    for i, c in enumerate(fresh):
        if not used[i]:
            out.append(CandidateCircle(center=(c.cx, c.cy), radius=float(c.r),
                                       first_seen=frame))
    return out


def _refined_centre(edges, cand: CandidateCircle) -> np.ndarray:
    """Sub-pixel centre of one candidate via a cropped ring fit.

    Cropping to the circle's neighbourhood keeps the per-circle cost
    independent of the full edge count (relocation has a time budget).
    """
    from .frames import EdgeMap

    cx, cy, r = float(cand.center[0]), float(cand.center[1]), cand.radius
    b = int(np.ceil(r)) + 4
    h, w = edges.bits.shape
    x0, y0 = max(0, int(cx) - b), max(0, int(cy) - b)
    x1, y1 = min(w, int(cx) + b + 1), min(h, int(cy) + b + 1)
    sub = EdgeMap(edges.bits[y0:y1, x0:x1])
    fit = refine_circle(sub, Circle(cx=cx - x0, cy=cy - y0, r=r))
    return np.array([fit.cx + x0, fit.cy + y0])


# ---------------------------------------------------------------------------
# lattice matching


def match_centres_to_lattice(centres, state: BoardState):
    """Best integer lattice shift aligning detected centres with the board.

    `centres` are lattice-unit positions (rotation-corrected) of the
    confirmed circles.  Exhaustive search over |dx|, |dy| <= ceil(n/3);
    a shift qualifies when the overlapping board area is >= 4/9 of the
    board and at least half the known stones inside the overlap are
    matched.  Returns (offset, pairing) where pairing maps centre index
    -> (col, row) of the matched stone under the offset.
    """
    pts = np.asarray([np.asarray(c, dtype=np.float64) for c in centres])
    if len(pts) < 4:
        raise NoMatchError("need at least 4 confirmed centres")
    stones = state.stones()
    if len(stones) < 4:
        raise NoMatchError("board has fewer than 4 known stones")
    n = state.n
    max_shift = int(np.ceil(n / 3))
    quant = np.rint(pts).astype(int)
    resid = np.linalg.norm(pts - quant, axis=1)
    candidates = []
    for dx in range(-max_shift, max_shift + 1):
        for dy in range(-max_shift, max_shift + 1):
            # overlap of the board with itself shifted by (dx, dy)
            if (n - abs(dx)) * (n - abs(dy)) < (4.0 / 9.0) * n * n:
                continue
            in_overlap = sum(1 for (col, row) in stones
                             if 0 <= col - dx < n and 0 <= row - dy < n)
            if in_overlap == 0:
                continue
            rough = sum(1 for i in range(len(pts)) if resid[i] <= 0.5
                        and (int(quant[i, 0]) + dx, int(quant[i, 1]) + dy)
                        in stones)
            candidates.append((rough, (dx, dy), in_overlap))
    if not candidates:
        raise NoMatchError("no lattice shift meets the overlap thresholds")
    top = max(r for r, _, _ in candidates)
    results = []
    for rough, (dx, dy), in_overlap in candidates:
        if rough < max(top - 2, 4):
            continue  # drift-corrected pairing only for contenders
        pairing = _pair_centres(pts, quant, resid, stones, (dx, dy))
        if len(pairing) >= 0.5 * in_overlap and len(pairing) >= 4:
            results.append((len(pairing), (dx, dy), pairing))
    if not results:
        raise NoMatchError("no lattice shift meets the overlap thresholds")
    results.sort(key=lambda r: (-r[0], abs(r[1][0]) + abs(r[1][1])))
    best = results[0]
    rivals = [r for r in results[1:] if r[1] != best[1]
              and best[0] - r[0] <= 1]
    if rivals:
        raise AmbiguousMatchError(
            f"shifts {best[1]} and {rivals[0][1]} within one matched stone")
    return best[1], best[2]


def _pair_centres(pts, quant, resid, stones, offset, tol: float = 0.45):
    """Centre index -> stone pairing for one candidate lattice shift.

    Under perspective a frame translation is not a uniform lattice
    shift: rounded positions drift by up to half a unit across the
    board.  A first pairing from the well-quantized centres seeds a
    least-squares homography that removes the drift, then all centres
    are re-paired within the stone-radius tolerance.
    """
    dx, dy = offset
    rough = {}
    taken = set()
    for i in np.argsort(resid):
        if resid[i] > 0.5:
            break
        tgt = (int(quant[i, 0]) + dx, int(quant[i, 1]) + dy)
        if tgt in stones and tgt not in taken:
            rough[int(i)] = tgt
            taken.add(tgt)
    if len(rough) < 4:
        return rough
    src = pts[sorted(rough)]
    dst = np.array([rough[i] for i in sorted(rough)], dtype=np.float64)
    try:
        h = homography_lsq(src, dst)
    except DegenerateError:
        return rough
    mapped = h.apply(pts)
    pairing = {}
    taken = set()
    order = np.argsort(np.linalg.norm(mapped - np.rint(mapped), axis=1))
    for i in order:
        q = np.rint(mapped[i]).astype(int)
        if float(np.linalg.norm(mapped[i] - q)) > tol:
            break
        tgt = (int(q[0]), int(q[1]))
        if tgt in stones and tgt not in taken:
            pairing[int(i)] = tgt
            taken.add(tgt)
    return pairing if len(pairing) >= len(rough) else rough


# ---------------------------------------------------------------------------
# yose relocation (circular pipeline)


def _random_hull_quads(hull: np.ndarray, max_quad: np.ndarray,
                       rng: np.random.Generator, count: int = 7,
                       attempts: int = 50) -> list[np.ndarray]:
    """Up to `count` distinct random hull quadrilaterals.

    Vertices are drawn without replacement and kept in hull order, which
    guarantees a simple (non-self-intersecting) quadrilateral; draws
    with area below 20% of the max-area quad are rejected.
    """
    m = len(hull)
    if m < 4:
        return []
    floor = 0.2 * quad_area(max_quad)
    seen = {tuple(sorted(map(tuple, np.asarray(max_quad).tolist())))}
    out: list[np.ndarray] = []
    for _ in range(attempts):
        if len(out) >= count:
            break
        idx = np.sort(rng.choice(m, size=4, replace=False))
        quad = hull[idx]
        key = tuple(sorted(map(tuple, quad.tolist())))
        if key in seen:
            continue
        seen.add(key)
        if quad_area(quad) < floor:
            continue
        out.append(quad)
    return out


def _assign_lattice(centres_px, layout: RectLayout):
    """Centres confidently rounded onto lattice points (0.25-unit gate).

    Quantization drifts under perspective, so only these get a vote in
    rotation estimation."""
    centres_px = np.asarray(centres_px, dtype=np.float64)
    lat = layout.to_lattice(centres_px)
    keep = np.linalg.norm(lat - np.rint(lat), axis=1) <= 0.25
    return centres_px[keep], np.rint(lat[keep]).astype(int)


def estimate_board_rotation(centres_px, layout: RectLayout) -> float:
    """Apparent rotation (degrees) of stone centres in rectified space.

    Two stages.  A coarse pass takes the median angular deviation over
    lattice-adjacent pairs, which survives both mis-rounded assignments
    and stray circles.  After de-rotating by the coarse angle the
    assignments are trustworthy, so a fine pass averages the deviation
    over every co-row and co-column pair, weighted by baseline length:
    a long segment turns the same centre noise into far less angle
    noise.  Rotate by the negative of the result to correct.
    """
    n = layout.n
    pivot = layout.point_px((n - 1) / 2, (n - 1) / 2)
    pts, lat = _assign_lattice(centres_px, layout)
    pairs = [(p, (int(c), int(r))) for p, (c, r) in zip(pts, lat)]
    try:
        coarse = rotation_from_segments(pairs)
    except NoAdjacentPairsError:
        coarse = 0.0
    pts2, lat2 = _assign_lattice(
        rotate_points(np.asarray(centres_px, dtype=np.float64),
                      -coarse, pivot), layout)
    num = den = 0.0
    for i in range(len(pts2)):
        for j in range(i + 1, len(pts2)):
            dc, dr = lat2[j] - lat2[i]
            if dc != 0 and dr != 0:
                continue
            v = pts2[j] - pts2[i]
            ang = np.degrees(np.arctan2(v[1], v[0]))
            dev = (ang - (0.0 if dr == 0 else 90.0) + 45.0) % 90.0 - 45.0
            if abs(dev) > 1.0:
                continue  # residual mis-assignment
            w = float(np.hypot(*v))
            num += w * dev
            den += w
    return coarse + (num / den if den else 0.0)


def yose_relocate(f_prev: Frame | None, f_cur: Frame, g: GridModel,
                  state: BoardState, *, rng: np.random.Generator | None = None,
                  rect_size: int = 500, min_stones: int = 20,
                  min_votes: int = 20, frame: int = 0,
                  carry: list[CandidateCircle] | None = None) -> GridProposal:
    """Relocate the grid from the stones themselves (yose conditions).

    Rectify both frames through the last known grid, detect stone-sized
    circles, keep those confirmed across the two frames, correct the
    apparent rotation, match the centres to the known position, then
    blend homographies over the max-area and up to seven random hull
    quadrilaterals (area-weighted) and back-project the corners.

    In streaming use the engine passes the previous call's candidates as
    `carry` (the attribute `carry` on the returned proposal), so only
    the new frame is rectified and scanned; `f_prev` may then be None.
    """
    if state.stone_count() < min_stones:
        raise InsufficientStonesError(
            f"{state.stone_count()} stones < relocation floor {min_stones}")
    if rng is None:
        rng = np.random.default_rng(0)
    n = g.n
    layout = RectLayout(n, rect_size, margin=1.0)
    spacing = layout.spacing
    r_band = (0.35 * spacing, 0.65 * spacing)
    cands: list[CandidateCircle] = list(carry) if carry is not None else []
    frames = (f_cur,) if carry is not None else (f_prev, f_cur)
    for f in frames:
        px = rectify_pixels(to_grayscale(f).pixels, g, rect_size, layout.margin)
        edges = canny_edges(px)
        fresh = circular_hough(edges, r_min=r_band[0], r_max=r_band[1],
                               min_votes=min_votes, r_step=2.0)
        cands = confirm_circles(cands, fresh, frame)
    confirmed = [c for c in cands if c.confirmed]
    if len(confirmed) < 4:
        raise NoMatchError(f"only {len(confirmed)} confirmed circles")
    # the vote grid quantizes centres to whole pixels; a sub-pixel ring
    # fit against the newest edge map tightens the homography downstream
    centres_px = np.array([_refined_centre(edges, c) for c in confirmed])
    angle = estimate_board_rotation(centres_px, layout)
    pivot = layout.point_px((n - 1) / 2, (n - 1) / 2)
    corrected_px = rotate_points(centres_px, -angle, pivot)
    corrected_lat = layout.to_lattice(corrected_px)
    offset, pairing = match_centres_to_lattice(corrected_lat, state)
    # matched centre positions in the *current frame*, via the old grid
    to_frame = g.rect_transform(rect_size, layout.margin)
    matched_px = centres_px[sorted(pairing)]
    matched_frame = to_frame.apply(matched_px)
    matched_lat = np.array([pairing[i] for i in sorted(pairing)], dtype=np.float64)
    hull_idx_pts = {tuple(p): i for i, p in enumerate(map(tuple, matched_frame))}
    try:
        hull = convex_hull(matched_frame)
    except Exception as exc:
        raise DegenerateError(str(exc)) from exc
    if len(hull) < 4:
        raise DegenerateError("hull of matched centres has < 4 vertices")
    quads = [max_area_quadrilateral(hull)]
    quads += _random_hull_quads(hull, quads[0], rng)
    entries = []
    for qi, quad in enumerate(quads):
        try:
            src = np.array([matched_lat[hull_idx_pts[tuple(p)]] for p in quad])
        except KeyError:  # pragma: no cover - hull points come from input
            continue
        try:
            h = homography_from_pairs(src, quad)
        except DegenerateError:
            continue
        # a small or slivery quad can extrapolate wildly; check the
        # homography against every matched centre before blending it in
        reproj = np.linalg.norm(h.apply(matched_lat) - matched_frame, axis=1)
        if qi > 0 and float(np.median(reproj)) > 3.0:
            continue
        entries.append((h, quad_area(quad)))
    if not entries:
        raise DegenerateError("no usable quadrilateral homography")
    total = sum(a for _, a in entries)
    blended = weighted_mean_homography([(h, a / total) for h, a in entries])
    k = n - 1
    corner_lat = np.array([[0, 0], [k, 0], [k, k], [0, k]], dtype=np.float64)
    corners = blended.apply(corner_lat)
    grid = GridModel(n, order_quad(corners))
    return GridProposal(grid=grid, source="circular-async", frame=frame,
                        carry=tuple(cands))


# ---------------------------------------------------------------------------
# stability gate


def proposal_streak(history: list[GridProposal], tol: float = 3.0) -> int:
    """Length of the agreeing tail of same-source proposals."""
    if not history:
        return 0
    last = history[-1]
    streak = 1
    for p in reversed(history[:-1]):
        if p.source != last.source:
            break
        if float(np.linalg.norm(p.grid.corners - last.grid.corners,
                                axis=1).max()) > tol:
            break
        streak += 1
    return streak


def accept_grid(history: list[GridProposal], occupancy: float, *,
                tol: float = 3.0) -> str:
    """Stability gate: 'accept' or 'hold'.

    A new grid needs 2 consecutive agreeing proposals below 50% board
    occupancy and 3 at or above it; agreement means all corners within
    `tol` frame pixels.  A single frame's evidence is never accepted.
    """
    gate = 2 if occupancy < 0.5 else 3
    return "accept" if proposal_streak(history, tol) >= gate else "hold"
