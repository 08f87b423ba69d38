"""Projective machinery for board tracking.

Homographies, rectification, convex hulls, quadrilateral selection,
weighted homography blending, rotation estimation and robust line
regression.  Everything here is a pure function over numpy arrays;
points are float64 arrays of shape (..., 2) in (x, y) order.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class DegenerateError(ValueError):
    """Raised when input points are collinear / the fit is singular."""


class AtInfinityError(ValueError):
    """Raised when a projective division would blow up."""


class TooFewPointsError(ValueError):
    pass


class NoAdjacentPairsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# homographies


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, normalized so m[2, 2] == 1."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(m[2, 2]) < 1e-12:
            raise DegenerateError("m[2][2] ~ 0, cannot normalize")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-9:
            raise DegenerateError("homography not invertible")
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = dx
        m[1, 2] = dy
        return cls(m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.m @ other.m)

    def apply(self, pts) -> np.ndarray:
        """Apply to points of shape (..., 2); projective divide included."""
        pts = np.asarray(pts, dtype=np.float64)
        single = pts.ndim == 1
        p = np.atleast_2d(pts)
        w = self.m[2, 0] * p[:, 0] + self.m[2, 1] * p[:, 1] + self.m[2, 2]
        if np.any(np.abs(w) < 1e-12):
            raise AtInfinityError("point maps to infinity")
        x = (self.m[0, 0] * p[:, 0] + self.m[0, 1] * p[:, 1] + self.m[0, 2]) / w
        y = (self.m[1, 0] * p[:, 0] + self.m[1, 1] * p[:, 1] + self.m[1, 2]) / w
        out = np.stack([x, y], axis=-1)
        return out[0] if single else out


def _collinear_triple(pts: np.ndarray, tol: float) -> bool:
    for i, j, k in itertools.combinations(range(len(pts)), 3):
        a, b, c = pts[i], pts[j], pts[k]
        area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        scale = max(np.abs(pts).max(), 1.0)
        if area < tol * scale * scale:
            return True
    return False


def homography_from_pairs(src, dst) -> Homography:
    """Exact homography from 4 point correspondences (8x8 linear solve)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValueError("need exactly 4 source and 4 destination points")
    if _collinear_triple(src, 1e-9) or _collinear_triple(dst, 1e-9):
        raise DegenerateError("three correspondence points are collinear")
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        b[2 * i] = u
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i + 1] = v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateError(str(exc)) from exc
    return Homography(np.append(h, 1.0).reshape(3, 3))


def homography_lsq(src, dst) -> Homography:
    """Least-squares DLT homography from >= 4 correspondences.

    Hartley-normalized; exact on 4 points, least-squares beyond.
    """

    def normalize(p):
        c = p.mean(axis=0)
        s = np.sqrt(2.0) / max(np.mean(np.linalg.norm(p - c, axis=1)), 1e-12)
        t = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
        return (p - c) * s, t

    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 4 or len(src) != len(dst):
        raise DegenerateError("need >= 4 point correspondences")
    sp, ts = normalize(src)
    dp, td = normalize(dst)
    rows = []
    for (x, y), (u, v) in zip(sp, dp):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ h @ ts
    if abs(h[2, 2]) < 1e-12:
        raise DegenerateError("degenerate homography")
    return Homography(h / h[2, 2])


def back_project(h: Homography, p) -> np.ndarray:
    """Projective application of `h` to a single point."""
    return h.apply(np.asarray(p, dtype=np.float64))


def weighted_mean_homography(entries) -> Homography:
    """Elementwise weighted mean of normalized matrices, renormalized."""
    if not entries:
        raise ValueError("empty homography list")
    acc = np.zeros((3, 3))
    total = 0.0
    for h, w in entries:
        if w <= 0:
            raise ValueError("weights must be positive")
        acc += w * h.m
        total += w
    return Homography(acc / total)


# ---------------------------------------------------------------------------
# grid model and rectification


@dataclass(frozen=True)
class GridModel:
    """Board pose: four corners in frame coordinates plus the lattice map.

    Corner order is top-left, top-right, bottom-right, bottom-left as seen
    on the rectified board.
    """

    n: int
    corners: np.ndarray  # (4, 2) float64

    def __post_init__(self):
        if self.n not in (9, 13, 19):
            raise ValueError("board size must be 9, 13 or 19")
        c = np.asarray(self.corners, dtype=np.float64)
        if c.shape != (4, 2):
            raise ValueError("corners must be 4 points")
        if quad_area(c) <= 0 or not _strictly_convex(c):
            raise DegenerateError("corners must form a strictly convex quad")
        object.__setattr__(self, "corners", c)

    @cached_property
    def lattice_to_frame(self) -> Homography:
        k = self.n - 1
        src = np.array([[0, 0], [k, 0], [k, k], [0, k]], dtype=np.float64)
        return homography_from_pairs(src, self.corners)

    def lattice(self, col: float, row: float) -> np.ndarray:
        """Frame coordinates of intersection (col, row), 0-based."""
        return self.lattice_to_frame.apply(np.array([col, row], dtype=np.float64))

    def lattice_points(self) -> np.ndarray:
        """All n x n intersections in frame coordinates, shape (n, n, 2).

        Indexed [row, col].
        """
        cols, rows = np.meshgrid(np.arange(self.n), np.arange(self.n))
        pts = np.stack([cols.ravel(), rows.ravel()], axis=-1).astype(np.float64)
        return self.lattice_to_frame.apply(pts).reshape(self.n, self.n, 2)

    def spacing_px(self) -> float:
        """Median lattice spacing in frame pixels."""
        pts = self.lattice_points()
        dx = np.linalg.norm(np.diff(pts, axis=1), axis=-1)
        dy = np.linalg.norm(np.diff(pts, axis=0), axis=-1)
        return float(np.median(np.concatenate([dx.ravel(), dy.ravel()])))

    def rect_transform(self, size: int, margin: float = 1.0) -> Homography:
        """Homography mapping rectified pixel coords -> frame coords."""
        layout = RectLayout(self.n, size, margin)
        s = layout.units_per_px
        a = np.array([[s, 0.0, -margin], [0.0, s, -margin], [0.0, 0.0, 1.0]])
        return self.lattice_to_frame @ Homography(a)


def _strictly_convex(quad: np.ndarray) -> bool:
    crosses = []
    for i in range(4):
        a, b, c = quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4]
        crosses.append((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]))
    crosses = np.array(crosses)
    return bool(np.all(crosses > 0) or np.all(crosses < 0))


@dataclass(frozen=True)
class RectLayout:
    """Geometry of a rectified board image.

    The grid spans the square with `margin` extra lattice units on each
    side so outer stones stay fully visible.
    """

    n: int
    size: int
    margin: float = 1.0

    @property
    def units_per_px(self) -> float:
        return (self.n - 1 + 2 * self.margin) / (self.size - 1)

    @property
    def spacing(self) -> float:
        """Lattice spacing in rectified pixels."""
        return 1.0 / self.units_per_px

    def point_px(self, col: float, row: float) -> np.ndarray:
        s = self.spacing
        return np.array([(col + self.margin) * s, (row + self.margin) * s])

    def to_lattice(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts * self.units_per_px - self.margin


def bilinear_sample(img: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear sample of an image at float points; outside -> 0."""
    h, w = img.shape[:2]
    x = pts[..., 0]
    y = pts[..., 1]
    valid = (x >= 0) & (y >= 0) & (x < w - 1) & (y < h - 1)
    coords = [np.clip(y, 0, h - 1), np.clip(x, 0, w - 1)]
    from scipy import ndimage as ndi  # local: geometry is otherwise pure
    if img.ndim == 3:
        out = np.stack([ndi.map_coordinates(img[..., c].astype(np.float32),
                                            coords, order=1, mode="nearest")
                        for c in range(img.shape[2])], axis=-1)
        out[~valid] = 0.0
    else:
        out = ndi.map_coordinates(img.astype(np.float32), coords,
                                  order=1, mode="nearest")
        out[~valid] = 0.0
    return out


def rectify_pixels(pixels: np.ndarray, g: GridModel, size: int,
                   margin: float = 1.0) -> np.ndarray:
    """Warp the board region into a size x size raster (bilinear)."""
    if size < 4 * g.n:
        raise ValueError("rectified size too small for the board")
    h = g.rect_transform(size, margin)
    xs, ys = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64))
    src = h.apply(np.stack([xs.ravel(), ys.ravel()], axis=-1))
    shape = (size, size) if pixels.ndim == 2 else (size, size, pixels.shape[2])
    out = bilinear_sample(pixels, src.reshape(size, size, 2))
    return np.clip(np.rint(out), 0, 255).astype(np.uint8).reshape(shape)


# ---------------------------------------------------------------------------
# hulls and quadrilaterals


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Counterclockwise convex hull (monotone chain), no collinear vertices."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) < 3:
        raise TooFewPointsError("need at least 3 distinct points")
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise DegenerateError("all points are collinear")
    return hull


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counterclockwise order)."""
    x = poly[:, 0]
    y = poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def quad_area(quad: np.ndarray) -> float:
    return abs(polygon_area(np.asarray(quad, dtype=np.float64)))


def _tri_area(a, b, c) -> float:
    return 0.5 * abs(_cross(a, b, c))


def max_area_quadrilateral(hull: np.ndarray) -> np.ndarray:
    """The 4 hull vertices enclosing maximum area, in hull order.

    For each diagonal (i, j) the best third vertex on either side is
    found independently; ties go to the first quadruple in hull order.
    """
    hull = np.asarray(hull, dtype=np.float64)
    h = len(hull)
    if h < 4:
        raise TooFewPointsError("hull has fewer than 4 vertices")
    best = -1.0
    best_idx = None
    for i in range(h):
        for j in range(i + 2, h):
            if i == 0 and j == h - 1:
                continue
            left_best, left_k = -1.0, None
            for k in range(i + 1, j):
                a = _tri_area(hull[i], hull[k], hull[j])
                if a > left_best:
                    left_best, left_k = a, k
            right_best, right_l = -1.0, None
            for l in range(j + 1, i + h):
                a = _tri_area(hull[j], hull[l % h], hull[i])
                if a > right_best:
                    right_best, right_l = a, l % h
            if left_k is None or right_l is None:
                continue
            area = left_best + right_best
            if area > best + 1e-12:
                best = area
                best_idx = sorted([i, left_k, j, right_l])
    if best_idx is None:
        raise DegenerateError("no valid quadrilateral on hull")
    return hull[best_idx]


def order_quad(points: np.ndarray) -> np.ndarray:
    """Order 4 points as TL, TR, BR, BL (image coordinates, y down)."""
    pts = np.asarray(points, dtype=np.float64)
    s = pts.sum(axis=1)
    d = pts[:, 0] - pts[:, 1]
    tl = pts[np.argmin(s)]
    br = pts[np.argmax(s)]
    tr = pts[np.argmax(d)]
    bl = pts[np.argmin(d)]
    return np.array([tl, tr, br, bl])


# ---------------------------------------------------------------------------
# rotation from adjacent-stone segments


def _wrap_deg(a: np.ndarray) -> np.ndarray:
    """Wrap angles into (-45, 45] degrees (grid directions repeat every 90)."""
    return (np.asarray(a) + 45.0) % 90.0 - 45.0


def rotation_from_segments(centres) -> float:
    """Median angular deviation (degrees) of adjacent-stone segments.

    The median resists segments built on a mis-assigned lattice point,
    whose deviation is wild rather than merely noisy.

    `centres` is a sequence of (point_xy, (col, row)) with rectified
    coordinates.  Horizontal lattice pairs are compared against 0 deg,
    vertical pairs against 90 deg.  The returned angle is the apparent
    rotation of the centres; rotate by its negative to correct.
    """
    by_lattice = {}
    for p, (col, row) in centres:
        by_lattice[(int(col), int(row))] = np.asarray(p, dtype=np.float64)
    devs = []
    for (col, row), p in by_lattice.items():
        for dc, dr in ((1, 0), (0, 1)):
            q = by_lattice.get((col + dc, row + dr))
            if q is None:
                continue
            v = q - p
            ang = np.degrees(np.arctan2(v[1], v[0]))
            ideal = 0.0 if dr == 0 else 90.0
            devs.append(_wrap_deg(ang - ideal))
    if not devs:
        raise NoAdjacentPairsError("no lattice-adjacent centre pairs")
    return float(np.median(devs))


def rotate_points(pts: np.ndarray, angle_deg: float, about) -> np.ndarray:
    """Rotate points about a pivot; positive angle follows atan2(y, x)."""
    a = np.radians(angle_deg)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    about = np.asarray(about, dtype=np.float64)
    return (np.asarray(pts, dtype=np.float64) - about) @ rot.T + about


# ---------------------------------------------------------------------------
# robust outer-line regression


def fit_line_tls(pts: np.ndarray):
    """Total-least-squares line fit; returns (rho, theta) with theta in [0, pi)."""
    pts = np.asarray(pts, dtype=np.float64)
    centroid = pts.mean(axis=0)
    d = pts - centroid
    cov = d.T @ d
    evals, evecs = np.linalg.eigh(cov)
    normal = evecs[:, 0]  # smallest eigenvalue -> line normal
    theta = np.arctan2(normal[1], normal[0]) % np.pi
    rho = centroid[0] * np.cos(theta) + centroid[1] * np.sin(theta)
    return float(rho), float(theta)


def line_point_distance(rho: float, theta: float, pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    return pts[:, 0] * np.cos(theta) + pts[:, 1] * np.sin(theta) - rho


def outer_line_regression(edge_pixels, expected, free_mask=None, *,
                          band: float = 3.0, min_pixels: int = 8,
                          max_angle_dev: float = 2.0, max_shift: float = 4.0):
    """Least-squares refit of a grid line from nearby edge pixels.

    Returns (line, confident).  The expected line is kept (confident
    False) when there are too few band pixels or the fit drifts past the
    deviation guard, e.g. when a hand or an unrecognized stone crosses
    the band.
    """
    from .hough import Line  # local import; hough owns the Line type

    pts = np.asarray(edge_pixels, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        return expected, False
    sel = np.abs(line_point_distance(expected.rho, expected.theta, pts)) <= band
    if free_mask is not None:
        sel &= np.asarray(free_mask(pts), dtype=bool)
    pts = pts[sel]
    if len(pts) < min_pixels:
        return expected, False
    used = pts
    rho, theta = fit_line_tls(used)
    for _ in range(3):  # clip outliers from occluders crossing the band
        res = np.abs(line_point_distance(rho, theta, pts))
        keep = res <= 1.5
        if keep.sum() < min_pixels:
            break
        used = pts[keep]
        rho, theta = fit_line_tls(used)
    dtheta = abs(_wrap_deg(np.degrees(theta - expected.theta)))
    centroid = used.mean(axis=0)
    shift = abs(float(line_point_distance(expected.rho, expected.theta,
                                          centroid)[0]))
    if dtheta >= max_angle_dev or shift >= max_shift:
        return expected, False
    return Line(rho=rho, theta=theta, score=len(used)), True


def intersect_lines(l1, l2) -> np.ndarray:
    """Intersection point of two (rho, theta) lines."""
    a = np.array([[np.cos(l1.theta), np.sin(l1.theta)],
                  [np.cos(l2.theta), np.sin(l2.theta)]])
    b = np.array([l1.rho, l2.rho])
    det = np.linalg.det(a)
    if abs(det) < 1e-9:
        raise DegenerateError("lines are parallel")
    return np.linalg.solve(a, b)
