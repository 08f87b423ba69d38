"""Initial grid location via a double application of the linear Hough transform.

First pass: cluster detected lines into two dominant near-perpendicular
families, trim goban-border artifacts, snap each family onto a uniform
spacing and intersect the outer lines into a coarse quadrilateral.
Second pass: rectify through the coarse quad and refine the outer line
positions on the rectified image before back-projecting the corners.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage as ndi

from .frames import Frame, canny_edges, to_grayscale
from .geometry import (GridModel, RectLayout, fit_line_tls,
                       homography_lsq, intersect_lines, order_quad,
                       rectify_pixels)
from .frames import EdgeMap
from .hough import Line, circular_hough, linear_hough


class GridNotFoundError(RuntimeError):
    pass


class AmbiguousGridError(RuntimeError):
    pass


class CannotResolveError(RuntimeError):
    pass


def _ang_diff(a: float, b: float) -> float:
    """Circular distance between line angles (period pi), radians."""
    d = abs(a - b) % np.pi
    return min(d, np.pi - d)


def theta_families(lines: list[Line], spread: float = np.radians(20.0)):
    """Split lines into the two dominant near-perpendicular families.

    Returns (family_a, family_b, support) sorted by descending family
    score; raises GridNotFoundError if no perpendicular pair dominates.
    """
    if not lines:
        raise GridNotFoundError("no lines")
    # score-weighted circular histogram over theta, 1 degree bins
    bins = 180
    hist = np.zeros(bins)
    for l in lines:
        hist[int(np.degrees(l.theta)) % bins] += l.score
    kernel = np.ones(9)  # +/- 4 degrees
    smooth = np.convolve(np.tile(hist, 3), kernel, mode="same")[bins:2 * bins]
    t1 = int(np.argmax(smooth))
    # best peak roughly perpendicular to t1
    cand = [(smooth[t], t) for t in range(bins)
            if abs(_ang_diff(np.radians(t), np.radians(t1 + 90))) < np.radians(20)]
    if not cand:
        raise GridNotFoundError("no perpendicular family")
    s2, t2 = max(cand)
    if s2 <= 0:
        raise GridNotFoundError("no perpendicular family")
    th1, th2 = np.radians(t1), np.radians(t2)
    fam_a = [l for l in lines if _ang_diff(l.theta, th1) < spread]
    fam_b = [l for l in lines if _ang_diff(l.theta, th2) < spread
             and l not in fam_a]
    if len(fam_a) < 4 or len(fam_b) < 4:
        raise GridNotFoundError("line families too small")
    return fam_a, fam_b, float(smooth[t1] + s2)


def reject_border_lines(lines: list[Line], n: int,
                        spacing: float | None = None,
                        tol: float = 0.35) -> list[Line]:
    """Trim outermost lines whose gap deviates from the median spacing.

    `lines` must be sorted by rho.  Raises CannotResolveError when the
    family cannot be reduced to exactly n lines.
    """
    lines = sorted(lines, key=lambda l: l.rho)
    if len(lines) < n:
        raise CannotResolveError(f"{len(lines)} lines < board size {n}")
    work = list(lines)
    while len(work) > n:
        gaps = np.diff([l.rho for l in work])
        med = spacing if spacing is not None else float(np.median(gaps))
        first_dev = abs(gaps[0] - med) / med
        last_dev = abs(gaps[-1] - med) / med
        if first_dev <= tol and last_dev <= tol:
            break
        if first_dev >= last_dev:
            work.pop(0)
        else:
            work.pop()
    if len(work) != n:
        raise CannotResolveError(f"{len(work)} lines after filtering, want {n}")
    return work


def canonicalize_family(lines: list[Line]) -> list[Line]:
    """Put every line of a family on the same side of the theta wrap.

    (theta, rho) and (theta + pi, -rho) name the same line; members of a
    near-vertical family straddle the wrap, so their raw rhos are not
    comparable until all thetas sit in one half-turn window.
    """
    # circular mean of theta with period pi (angle doubling)
    z = sum(l.score * np.exp(2j * l.theta) for l in lines)
    th_c = float(np.angle(z)) / 2.0 % np.pi
    out = []
    for l in lines:
        d = (l.theta - th_c) % np.pi
        if d > np.pi / 2:
            d -= np.pi
        out.append(Line(rho=l.rho, theta=th_c + d, score=l.score)
                   if abs(th_c + d - l.theta) < 1e-9 else
                   Line(rho=-l.rho, theta=th_c + d, score=l.score))
    return out


def _theta_model(fam: list[Line]):
    """Score-weighted linear model theta(rho) over a canonical family.

    Perspective turns each family into a pencil through a vanishing
    point, so theta drifts roughly linearly with rho across the family.
    """
    fam = canonicalize_family(fam)
    r = np.array([l.rho for l in fam])
    t = np.array([l.theta for l in fam])
    w = np.array([l.score for l in fam], dtype=float)
    if len(fam) < 2 or np.ptp(r) < 1e-6:
        return 0.0, float(np.average(t, weights=w))
    at, bt = np.polyfit(r, t, 1, w=w)
    return float(at), float(bt)


def _project_family(edges, theta_c: float, theta_model,
                    spread: float = np.radians(20.0)):
    """Signed rho of each family edge pixel, following the theta drift.

    Selects edge pixels whose gradient orientation matches the family
    normal, then solves rho = x cos(theta(rho)) + y sin(theta(rho)) by
    two fixed-point steps.  Returns (pts, rho).
    """
    pts = edges.pixels_xy()
    orient = edges.orientation[edges.bits].astype(np.float64)
    d = np.abs(orient - theta_c) % np.pi
    sel = np.minimum(d, np.pi - d) < spread
    pts = pts[sel]
    at, bt = theta_model
    rho = pts[:, 0] * np.cos(theta_c) + pts[:, 1] * np.sin(theta_c)
    for _ in range(2):
        t = at * rho + bt
        rho = pts[:, 0] * np.cos(t) + pts[:, 1] * np.sin(t)
    return pts, rho


def _profile_peaks(rho: np.ndarray, weights: np.ndarray | None = None,
                   sigma: float = 1.2, min_sep: float = 5.0,
                   rel_floor: float = 0.12):
    """Sub-pixel local maxima of the edge-count profile along rho."""
    if len(rho) == 0:
        return []
    lo = int(np.floor(rho.min())) - 3
    hist = np.bincount((rho - lo).astype(int), weights=weights,
                       minlength=int(rho.max() - lo) + 4).astype(float)
    k = np.arange(-4, 5)
    kern = np.exp(-0.5 * (k / sigma) ** 2)
    prof = np.convolve(hist, kern / kern.sum(), mode="same")
    floor = max(3.0, rel_floor * prof.max())
    half = max(1, int(round(min_sep)))
    peaks = []
    for i in range(1, len(prof) - 1):
        if prof[i] < floor:
            continue
        w0, w1 = max(0, i - half), i + half + 1
        if prof[i] < prof[w0:w1].max() or (prof[i] == prof[i - 1] and i > w0):
            continue
        # parabolic sub-bin interpolation
        a, b, c = prof[i - 1], prof[i], prof[i + 1]
        denom = a - 2 * b + c
        off = 0.5 * (a - c) / denom if abs(denom) > 1e-12 else 0.0
        peaks.append((lo + i + float(np.clip(off, -0.5, 0.5)), float(b)))
    return peaks


def _chain_peaks(peaks, n: int, ratio_lo: float = 0.82,
                 ratio_hi: float = 1.22):
    """Pick n profile peaks with smoothly varying gaps (DP over pairs).

    Perspective changes consecutive gaps by a few percent per step, so
    true grid lines form the heaviest smooth chain; tangent and border
    peaks break the gap-ratio corridor.  A single missing line may be
    skipped (one slot bridged by a double gap).  Returns peak positions
    by lattice slot (None where skipped) or raises GridNotFoundError.
    """
    peaks = sorted(peaks)
    m = len(peaks)
    if m < max(4, n - 2):
        raise GridNotFoundError("too few profile peaks")
    pos = [p for p, _ in peaks]
    wt = [w for _, w in peaks]
    gap_lo, gap_hi = 6.0, 80.0
    # a skipped slot must cost about one typical line, or a strong
    # artifact (goban border) can buy its way in by dropping a weak
    # stone-covered outer line
    skip_cost = 0.9 * float(np.median(wt))
    # dp[(j, k, s)] = {slot_of_k: (weight, parent)}; s = slots j -> k
    dp: dict = {}
    for j in range(m):
        for k in range(j + 1, m):
            g = pos[k] - pos[j]
            if g > gap_hi * 2:
                break
            for s in (1, 2):
                if gap_lo <= g / s <= gap_hi and s <= n - 1:
                    w0 = wt[j] + wt[k] - (s - 1) * skip_cost
                    dp.setdefault((j, k, s), {})[s] = (w0, None)
    order = sorted(dp, key=lambda key: key[1])
    best = None
    for key in order:
        j, k, s = key
        u = (pos[k] - pos[j]) / s
        for slot, (w, _) in list(dp[key].items()):
            if slot == n - 1:
                if best is None or w > best[0]:
                    best = (w, key, slot)
                continue
            for l in range(k + 1, m):
                g2 = pos[l] - pos[k]
                if g2 > 2 * gap_hi:
                    break
                for s2 in (1, 2):
                    if not gap_lo <= g2 / s2 <= gap_hi:
                        continue
                    if not ratio_lo <= (g2 / s2) / u <= ratio_hi:
                        continue
                    ns = slot + s2
                    if ns > n - 1:
                        continue
                    cell = dp.setdefault((k, l, s2), {})
                    nw = w + wt[l] - (s2 - 1) * skip_cost
                    if ns not in cell or nw > cell[ns][0]:
                        cell[ns] = (nw, (key, slot))
    if best is None:
        raise GridNotFoundError("no consistent n-line chain")
    # walk back
    slots: list[float | None] = [None] * n
    _, key, slot = best
    while key is not None:
        j, k, s = key
        slots[slot] = pos[k]
        parent = dp[key][slot][1]
        if parent is None:
            slots[slot - s] = pos[j]
            break
        key, slot = parent
    return slots


def _interior_luma(gray: np.ndarray, c) -> float:
    """Mean luma of the central half-radius disk of a circle."""
    h, w = gray.shape
    rad = max(1.5, 0.5 * c.r)
    x0, x1 = max(0, int(c.cx - rad)), min(w, int(c.cx + rad) + 2)
    y0, y1 = max(0, int(c.cy - rad)), min(h, int(c.cy + rad) + 2)
    if x0 >= x1 or y0 >= y1:
        return 128.0
    yy, xx = np.mgrid[y0:y1, x0:x1]
    m = (xx - c.cx) ** 2 + (yy - c.cy) ** 2 <= rad * rad
    if not m.any():
        return 128.0
    return float(gray[y0:y1, x0:x1][m].mean())


def _estimate_spacing(rho: np.ndarray, lo: float = 8.0,
                      hi: float = 60.0) -> float | None:
    """Dominant period of the rho profile via autocorrelation."""
    if len(rho) < 20:
        return None
    base = int(np.floor(rho.min()))
    prof = np.bincount((rho - base).astype(int)).astype(float)
    prof -= prof.mean()
    ac = np.correlate(prof, prof, mode="full")[len(prof) - 1:]
    span = ac[int(lo):int(min(hi, len(ac) - 1))]
    if len(span) == 0 or span.max() <= 0:
        return None
    return float(int(lo) + np.argmax(span))


def family_lines(edges, fam: list[Line], n: int,
                 centers: np.ndarray | None = None,
                 center_weight: float = 8.0) -> list[Line]:
    """The n grid lines of one family, refined from raw edge pixels.

    Projects family edge pixels onto the family normal, picks the n
    smooth profile peaks and TLS-refits each line from its own pixels.
    Detected stone centres may be passed in as extra on-lattice votes.
    """
    tm = _theta_model(fam)
    theta_c = float(np.median([l.theta for l in canonicalize_family(fam)]))
    pts, rho = _project_family(edges, theta_c, tm)
    vote_rho, weights = rho, None
    if centers is not None and len(centers):
        at, bt = tm
        crho = centers[:, 0] * np.cos(theta_c) + centers[:, 1] * np.sin(theta_c)
        for _ in range(2):
            t = at * crho + bt
            crho = centers[:, 0] * np.cos(t) + centers[:, 1] * np.sin(t)
        vote_rho = np.concatenate([rho, crho])
        weights = np.concatenate([np.ones(len(rho)),
                                  np.full(len(crho), center_weight)])
    slots = _chain_peaks(_profile_peaks(vote_rho, weights), n)
    # interpolate skipped slots from neighbours
    known = [(i, p) for i, p in enumerate(slots) if p is not None]
    ki = np.array([i for i, _ in known])
    kp = np.array([p for _, p in known])
    out = []
    for i in range(n):
        p = slots[i] if slots[i] is not None else float(np.interp(i, ki, kp))
        near = np.abs(rho - p) <= 2.5
        if near.sum() >= 8:
            r, t = fit_line_tls(pts[near])
            # keep the same canonical side as the family
            if _ang_diff(t, theta_c) > np.radians(45.0):
                pass  # degenerate fit; fall through to model line
            else:
                d = (t - theta_c) % np.pi
                if d > np.pi / 2:
                    d -= np.pi
                if abs(theta_c + d - t) > 1e-9:
                    r = -r
                if abs(r - p) < 2.0:
                    out.append(Line(rho=r, theta=theta_c + d,
                                    score=float(near.sum())))
                    continue
        out.append(Line(rho=p, theta=tm[0] * p + tm[1],
                        score=float(near.sum())))
    return out


def _family_outers(fam: list[Line]) -> tuple[Line, Line]:
    fam = sorted(fam, key=lambda l: l.rho)
    return fam[0], fam[-1]


def _coarse_corners(fam_a, fam_b) -> np.ndarray:
    a0, a1 = _family_outers(fam_a)
    b0, b1 = _family_outers(fam_b)
    pts = np.array([intersect_lines(a, b)
                    for a in (a0, a1) for b in (b0, b1)])
    return order_quad(pts)


def _valley_center(prof: np.ndarray, xs: np.ndarray) -> float | None:
    """Sub-pixel centre of the deepest dark valley in a profile.

    Centroid over the connected region around the deepest point only,
    so a second valley in a wide strip cannot drag the estimate.
    """
    base = max(prof[0], prof[-1])
    depth = np.clip(base - prof, 0.0, None)
    if depth.max() < 10.0:
        return None
    i = int(np.argmax(depth))
    cut = 0.3 * depth[i]
    a = i
    while a > 0 and depth[a - 1] >= cut:
        a -= 1
    b = i
    while b + 1 < len(depth) and depth[b + 1] >= cut:
        b += 1
    w = depth[a:b + 1]
    return float((w * xs[a:b + 1]).sum() / w.sum())


def _refine_families(rect: np.ndarray, layout: RectLayout, exclude=None,
                     band: int = 4, acc: float = 3.0, rho_guard: float = 4.0):
    """Intensity-valley refit of all n line positions per direction.

    Edge detection puts a ridge either side of a grid line and a fit can
    lock onto one of them, so lines are instead located as dark valleys
    of the rectified image: per-slab median profiles give sub-pixel
    valley centres, and a TLS fit through the slab centres recovers the
    small residual tilt.  Returns ({index: vertical Line}, {index:
    horizontal Line}) in rect coordinates, or None when too few lines
    are recovered.  `exclude` = (centers, radius) masks known stones.
    """
    n = layout.n
    n_slabs = 4
    lo = layout.point_px(0, 0)[0]
    hi = layout.point_px(n - 1, 0)[0]
    r0, r1 = int(np.floor(lo)), int(np.ceil(hi)) + 1
    img = rect.astype(np.float64)
    fams = []
    for axis, theta_exp in ((0, 0.0), (1, np.pi / 2)):
        # work on columns for vertical lines, rows for horizontal ones
        view = img if axis == 0 else img.T
        got: dict[int, Line] = {}
        for i in range(n):
            exp = layout.point_px(i, 0)[0]
            c0 = int(round(exp)) - band
            xs = np.arange(c0, c0 + 2 * band + 1, dtype=np.float64)
            strip = view[r0:r1, c0:c0 + 2 * band + 1]
            rows_clean = np.ones(strip.shape[0], dtype=bool)
            if exclude is not None and len(exclude[0]):
                centers, rad = exclude
                on_line = np.abs(centers[:, axis] - exp) <= rad
                for c in centers[on_line][:, 1 - axis]:
                    a = int(np.floor(c - rad)) - r0
                    b = int(np.ceil(c + rad)) + 1 - r0
                    rows_clean[max(0, a):max(0, b)] = False
            bounds = np.linspace(0, strip.shape[0], n_slabs + 1).astype(int)
            pts = []
            for s0, s1 in zip(bounds[:-1], bounds[1:]):
                keep = rows_clean[s0:s1]
                if keep.sum() < 12:
                    continue
                prof = np.median(strip[s0:s1][keep], axis=0)
                c = _valley_center(prof, xs)
                if c is not None and abs(c - exp) <= acc:
                    pts.append((c, r0 + 0.5 * (s0 + s1)))
            if len(pts) < 2:
                continue
            p = np.array(pts)
            if axis == 1:
                p = p[:, ::-1]  # back to (x, y)
            rho, theta = fit_line_tls(p)
            d = (theta - theta_exp + np.pi / 2) % np.pi - np.pi / 2
            if abs(theta_exp + d - theta) > 1e-9:
                rho = -rho  # theta wrapped across 0
            if abs(d) > np.radians(2.0) or abs(rho - exp) > rho_guard:
                continue  # deviation guard: occluder or bad valley
            got[i] = Line(rho=rho, theta=theta_exp + d, score=float(len(pts)))
        if len(got) < max(4, n // 2):
            return None
        fams.append(got)
    return fams[0], fams[1]


def _refine_corners(rect: np.ndarray, layout: RectLayout, exclude=None,
                    band: int = 4, acc: float = 3.0,
                    rho_guard: float = 4.0) -> np.ndarray | None:
    """Corner estimate pooling every confident line crossing via DLT."""
    fams = _refine_families(rect, layout, exclude, band, acc, rho_guard)
    if fams is None:
        return None
    vert, horz = fams
    src, dst = [], []
    for i, lv in vert.items():
        for j, lh in horz.items():
            src.append((i, j))
            dst.append(intersect_lines(lv, lh))
    h = homography_lsq(np.array(src, dtype=np.float64),
                       np.array(dst)).m
    n = layout.n
    cor = np.array([[0, 0], [n - 1, 0], [n - 1, n - 1], [0, n - 1]],
                   dtype=np.float64)
    ones = np.hstack([cor, np.ones((4, 1))])
    mapped = (h @ ones.T).T
    return mapped[:, :2] / mapped[:, 2:3]


def locate_grid(f: Frame, n: int, *, canny_low: float = 50.0,
                canny_high: float = 150.0, min_votes: int | None = None,
                refine_size: int = 500,
                ambiguity_ratio: float = 0.85) -> GridModel:
    """Locate the grid with no prior pose.

    Works when at least about half of the lattice points are empty and
    visible; raises GridNotFoundError otherwise, or AmbiguousGridError
    when a second grid-sized family pairing has comparable support.
    """
    gray = to_grayscale(f)
    # the coarse pass does not need full resolution: decimate large
    # frames (1080p) so the Hough stages stay within the time budget
    scale = max(1, int(np.ceil(min(f.width, f.height) / 620.0)))
    if scale > 1:
        sm = ndi.gaussian_filter(gray.pixels.astype(np.float64), 0.5 * scale)
        coarse_px = np.clip(np.rint(sm[::scale, ::scale]),
                            0, 255).astype(np.uint8)
    else:
        coarse_px = gray.pixels
    # the decimation blur spreads a one-pixel line over `scale` pixels,
    # cutting its gradient by the same factor; scale the gates to match
    edges = canny_edges(coarse_px, canny_low / scale, canny_high / scale)
    if min_votes is None:
        min_votes = max(40, int(0.12 * min(coarse_px.shape)))
    lines = linear_hough(edges, theta_step=np.radians(1.0), rho_step=1.0,
                         min_votes=min_votes, max_lines=120)
    if not lines:
        raise GridNotFoundError("no lines detected")
    # keep only peaks comparable to the strongest; grid lines dominate
    # noise and stone-tangent alignments by a wide margin
    floor = 0.35 * lines[0].score
    lines = [l for l in lines if l.score >= floor][:90]
    fam_a, fam_b, support = theta_families(lines)
    th_a = fam_a[0].theta
    th_b = fam_b[0].theta
    rest = [l for l in lines
            if min(_ang_diff(l.theta, th_a), _ang_diff(l.theta, th_b))
            > np.radians(25.0)]
    if len(rest) >= 8:
        try:
            ra, rb, rsupport = theta_families(rest)
            if rsupport >= ambiguity_ratio * support:
                raise AmbiguousGridError(
                    "two candidate grids with comparable support")
        except GridNotFoundError:
            pass
    # stone suppression: estimate the lattice period, detect stone-sized
    # circles, drop their edge pixels (tangent arcs mimic a shifted grid)
    # and feed their centres back in as on-lattice evidence
    spacings = []
    for fam in (fam_a, fam_b):
        tm = _theta_model(fam)
        thc = float(np.median([l.theta for l in canonicalize_family(fam)]))
        _, rho = _project_family(edges, thc, tm)
        s = _estimate_spacing(rho)
        if s is not None:
            spacings.append(s)
    centers = None
    raw_edges = edges
    if spacings:
        r_lo = max(4.0, 0.33 * min(spacings))
        r_hi = max(r_lo + 2.0, 0.62 * max(spacings))
        circles = circular_hough(edges, r_min=r_lo, r_max=r_hi,
                                 min_votes=max(18, int(1.5 * r_hi)))
        # vote pileups where a circle is tangent to two grid lines pass
        # the count gate; a stone interior is near-black or near-white
        circles = [c for c in circles
                   if not 100.0 <= _interior_luma(coarse_px, c) <= 200.0]
        if circles:
            centers = np.array([[c.cx, c.cy] for c in circles])
            bits = edges.bits.copy()
            h, w = bits.shape
            for c in circles:
                rad = c.r + 2.5
                x0, x1 = max(0, int(c.cx - rad)), min(w, int(c.cx + rad) + 2)
                y0, y1 = max(0, int(c.cy - rad)), min(h, int(c.cy + rad) + 2)
                yy, xx = np.mgrid[y0:y1, x0:x1]
                bits[y0:y1, x0:x1] &= ((xx - c.cx) ** 2 +
                                       (yy - c.cy) ** 2) > rad * rad
            edges = EdgeMap(bits=bits, orientation=edges.orientation,
                            magnitude=edges.magnitude)
    try:
        sel_a = family_lines(edges, fam_a, n, centers)
        sel_b = family_lines(edges, fam_b, n, centers)
    except (GridNotFoundError, CannotResolveError) as exc:
        if centers is None:
            raise GridNotFoundError(str(exc)) from exc
        try:  # suppression can over-trim; retry on the raw edge map
            sel_a = family_lines(raw_edges, fam_a, n)
            sel_b = family_lines(raw_edges, fam_b, n)
        except (GridNotFoundError, CannotResolveError) as exc2:
            raise GridNotFoundError(str(exc2)) from exc2

    corners = _coarse_corners(sel_a, sel_b)
    coarse = GridModel(n, corners * scale)

    # second pass on the rectified image, run twice so the residual
    # perspective of the coarse quad does not bias the line fits
    margin = 0.5
    layout = RectLayout(n, refine_size, margin)
    grid = coarse
    prev = None
    for it in range(5):
        rect = rectify_pixels(gray.pixels, grid, refine_size, margin)
        exclude = None
        if centers is not None and len(centers):
            to_rect = grid.rect_transform(refine_size, margin).inverse()
            exclude = (to_rect.apply(centers * scale),
                       0.55 * refine_size / (n - 1 + 2 * margin))
        rect_corners = _refine_corners(rect, layout, exclude)
        if rect_corners is None and it == 0:
            # the coarse quad can sit several rect-pixels off a busy
            # board; retry once with almost half a lattice step of slack
            wide = max(8, int(round(0.40 * refine_size / (n - 1 + 2 * margin))))
            rect_corners = _refine_corners(rect, layout, exclude, band=wide,
                                           acc=wide - 1.0, rho_guard=wide)
        if rect_corners is None:
            raise GridNotFoundError(
                "grid lines not recoverable on rectified image")
        to_frame = grid.rect_transform(refine_size, margin)
        grid = GridModel(n, order_quad(to_frame.apply(rect_corners)))
        if prev is not None and it >= 1:
            if float(np.linalg.norm(grid.corners - prev, axis=1).max()) < 0.2:
                break
        prev = grid.corners
    return grid
