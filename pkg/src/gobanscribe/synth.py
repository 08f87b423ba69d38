"""Synthetic goban renderer and session scripting.

Renders frames with a fully known pose and board so every tracking and
detection path can be verified against ground truth.  Rendering is
deterministic per seed.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import game as game_mod
from . import sgf as sgf_mod
from .frames import Frame, RGB
from .geometry import GridModel, order_quad, rotate_points

BOARD_MARGIN = 0.55  # board wood extends this many lattice units past the grid

_WOOD_WARM = np.array([196.0, 154.0, 88.0])
_WOOD_PALE = np.array([152.0, 150.0, 146.0])
_LINE_COLOR = np.array([42.0, 32.0, 22.0])
_BACKGROUND = np.array([58.0, 60.0, 70.0])
_BLACK_STONE = np.array([36.0, 36.0, 38.0])
_WHITE_STONE = np.array([232.0, 230.0, 224.0])
_SKIN = np.array([208.0, 168.0, 138.0])

STONE_RADIUS = 0.48  # lattice units


class IllegalScriptError(ValueError):
    pass


def star_points(n: int) -> list[tuple[int, int]]:
    if n == 19:
        xs = (3, 9, 15)
    elif n == 13:
        return [(3, 3), (3, 9), (9, 3), (9, 9), (6, 6)]
    else:
        return [(2, 2), (2, 6), (6, 2), (6, 6), (4, 4)]
    return [(a, b) for a in xs for b in xs]


@dataclass
class SceneTruth:
    grid: GridModel
    stones: dict = field(default_factory=dict)  # (col, row) -> BLACK/WHITE
    lighting: str = "warm"  # or "pale-grey"
    noise_sigma: float = 1.5
    occluders: list = field(default_factory=list)  # polygons, frame coords


def default_pose(n: int, width: int, height: int) -> GridModel:
    """Mildly angled camera preset centred in the frame."""
    side = 0.66 * min(width, height)
    cx, cy = width / 2, height / 2
    h = side / 2
    corners = np.array([
        [cx - h * 0.88, cy - h * 0.92],
        [cx + h * 0.94, cy - h * 0.88],
        [cx + h * 1.04, cy + h * 0.98],
        [cx - h * 1.00, cy + h * 1.02],
    ])
    return GridModel(n, order_quad(corners))


def random_pose(n: int, width: int, height: int, rng: np.random.Generator,
                jitter: float = 0.08) -> GridModel:
    """Random convex board pose with bounded perspective distortion."""
    for _ in range(100):
        side = min(width, height) * rng.uniform(0.55, 0.72)
        cx = width / 2 + rng.uniform(-0.06, 0.06) * width
        cy = height / 2 + rng.uniform(-0.06, 0.06) * height
        h = side / 2
        base = np.array([[cx - h, cy - h], [cx + h, cy - h],
                         [cx + h, cy + h], [cx - h, cy + h]])
        pert = rng.uniform(-jitter, jitter, size=(4, 2)) * side
        corners = rotate_points(base + pert, rng.uniform(-8, 8), (cx, cy))
        # board wood must stay inside the frame (with its margin)
        m = BOARD_MARGIN * side / (n - 1) + 6
        if (corners[:, 0].min() > m and corners[:, 1].min() > m
                and corners[:, 0].max() < width - m
                and corners[:, 1].max() < height - m):
            try:
                return GridModel(n, order_quad(corners))
            except Exception:
                continue
    raise RuntimeError("could not sample a valid pose")


_UV_CACHE: dict = {}
_BASE_CACHE: dict = {}


def render_frame(truth: SceneTruth, width: int, height: int, seed: int = 0,
                 index: int = 0) -> Frame:
    """Render one frame; deterministic for a given (truth, seed, index)."""
    g = truth.grid
    n = g.n
    # the per-pixel lattice coordinates depend only on the pose; scripts
    # hold the pose for many frames, so memoize the inverse mapping
    key = (g.n, g.corners.tobytes(), width, height)
    cached = _UV_CACHE.get(key)
    if cached is None:
        inv = g.lattice_to_frame.inverse()
        xs, ys = np.meshgrid(np.arange(width, dtype=np.float64),
                             np.arange(height, dtype=np.float64))
        uv = inv.apply(np.stack([xs.ravel(), ys.ravel()], axis=-1))
        cached = (uv[:, 0].reshape(height, width),
                  uv[:, 1].reshape(height, width))
        if len(_UV_CACHE) > 8:
            _UV_CACHE.clear()
        _UV_CACHE[key] = cached
    u, v = cached

    # the bare board (wood, grid lines, star points) is also pose/
    # lighting-only; keep the composed base alongside the mapping
    base_key = key + (truth.lighting,)
    base = _BASE_CACHE.get(base_key)
    if base is None:
        wood = _WOOD_WARM if truth.lighting == "warm" else _WOOD_PALE
        base = np.empty((height, width, 3), dtype=np.float64)
        base[:] = _BACKGROUND
        m = BOARD_MARGIN
        board = (u >= -m) & (u <= n - 1 + m) & (v >= -m) & (v <= n - 1 + m)
        grain_amp = 9.0 if truth.lighting == "warm" else 3.0
        grain = grain_amp * np.sin(u * 7.3 + 0.9) * np.cos(v * 1.7)
        base[board] = wood + grain[board, None]

        lw = 0.035
        on_grid_u = (np.abs(u - np.rint(u)) < lw) & (np.rint(u) >= 0) & (np.rint(u) <= n - 1)
        on_grid_v = (np.abs(v - np.rint(v)) < lw) & (np.rint(v) >= 0) & (np.rint(v) <= n - 1)
        in_span_u = (u >= -lw) & (u <= n - 1 + lw)
        in_span_v = (v >= -lw) & (v <= n - 1 + lw)
        lines = (on_grid_u & in_span_v) | (on_grid_v & in_span_u)
        base[lines & board] = _LINE_COLOR

        for (sc, sr) in star_points(n):
            d2 = (u - sc) ** 2 + (v - sr) ** 2
            base[d2 < 0.10 ** 2] = _LINE_COLOR
        if len(_BASE_CACHE) > 8:
            _BASE_CACHE.clear()
        _BASE_CACHE[base_key] = base
    img = base.copy()

    # stones: sample lattice-space disks inside a frame-space bounding box
    for (col, row), color in truth.stones.items():
        c_frame = g.lattice(col, row)
        r_px = STONE_RADIUS * g.spacing_px() * 1.4 + 3
        x0 = max(0, int(c_frame[0] - r_px))
        x1 = min(width, int(c_frame[0] + r_px) + 1)
        y0 = max(0, int(c_frame[1] - r_px))
        y1 = min(height, int(c_frame[1] + r_px) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        du = u[y0:y1, x0:x1] - col
        dv = v[y0:y1, x0:x1] - row
        d2 = du ** 2 + dv ** 2
        mask = d2 <= STONE_RADIUS ** 2
        if not mask.any():
            continue
        base = _BLACK_STONE if color == game_mod.BLACK else _WHITE_STONE
        if truth.lighting != "warm":
            base = base * 0.96 + 8.0
        shade = 0.86 + 0.22 * np.clip(1.0 - ((du + 0.10) ** 2 + (dv + 0.10) ** 2)
                                      / STONE_RADIUS ** 2, 0, 1)
        patch = img[y0:y1, x0:x1]
        patch[mask] = np.clip(base[None, :] * shade[mask, None], 0, 255)
        if color == game_mod.BLACK:
            # faint specular reflection, as on polished slate
            spot = np.exp(-(((du - 0.12) ** 2 + (dv - 0.12) ** 2) / 0.012))
            patch[mask] += (55.0 * spot[mask])[:, None]
        img[y0:y1, x0:x1] = patch

    for poly in truth.occluders:
        poly = np.asarray(poly, dtype=np.float64)
        from matplotlib.path import Path
        x0 = max(0, int(poly[:, 0].min()))
        x1 = min(width, int(poly[:, 0].max()) + 1)
        y0 = max(0, int(poly[:, 1].min()))
        y1 = min(height, int(poly[:, 1].max()) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
        inside = Path(poly).contains_points(
            np.stack([gx.ravel(), gy.ravel()], axis=-1)).reshape(gy.shape)
        patch = img[y0:y1, x0:x1]
        patch[inside] = _SKIN + 10.0 * np.sin(gx[inside] * 0.2)[:, None]
        img[y0:y1, x0:x1] = patch

    if truth.lighting != "warm":
        # overcast light washes color out of the whole scene
        y = img @ np.array([0.299, 0.587, 0.114])
        img = y[..., None] + 0.04 * (img - y[..., None])

    if truth.noise_sigma > 0:
        rng = np.random.default_rng((seed * 1_000_003 + index) & 0xFFFFFFFF)
        img = img + rng.normal(0.0, truth.noise_sigma, img.shape)
    px = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Frame(px, index=index, timestamp_ms=index * 33, colorspace=RGB)


# ---------------------------------------------------------------------------
# session scripting


@dataclass(frozen=True)
class ScriptEvent:
    frame: int
    kind: str  # shift | rotate | occlude | lighting | hold-captures | pause
    args: dict = field(default_factory=dict)


@dataclass
class CameraScript:
    events: list = field(default_factory=list)

    def __post_init__(self):
        evs = [e if isinstance(e, ScriptEvent)
               else ScriptEvent(e["frame"], e["kind"],
                                {k: v for k, v in e.items()
                                 if k not in ("frame", "kind")})
               for e in self.events]
        self.events = sorted(evs, key=lambda e: e.frame)

    @classmethod
    def from_json(cls, text: str) -> "CameraScript":
        return cls(json.loads(text))


_COLOR_OF = {"B": game_mod.BLACK, "W": game_mod.WHITE}


def script_session(sgf_text: str, script: CameraScript | None = None, *,
                   seed: int = 0, width: int = 640, height: int = 480,
                   pose: GridModel | None = None, dwell: int = 4,
                   lead_in: int = 6, tail: int = 8):
    """Realize a game plus camera events as (frames, truth log).

    Returns a generator of Frames and a list of per-frame truth dicts
    (same length, aligned indices; the list fills as the generator is
    consumed).  Moves are placed every `dwell`
    frames after `lead_in` empty-board frames; captures leave the
    rendered board immediately unless a hold-captures window covers the
    move.
    """
    parsed = sgf_mod.parse_sgf(sgf_text)
    n = parsed.size
    script = script or CameraScript([])
    grid = pose or default_pose(n, width, height)

    board = game_mod.BoardState(n, parsed.setup_black, parsed.setup_white)
    timeline = []  # (frame, fn(truth-state) mutations) resolved below
    move_frames = {}
    f = lead_in
    pauses = [(e.frame, e.args.get("frames", dwell * 2))
              for e in script.events if e.kind == "pause"]
    for i, (color, pt, _c) in enumerate(parsed.moves):
        if pt is None:
            continue
        for pf, plen in pauses:
            if pf <= f < pf + plen:
                f = pf + plen
        move_frames[f] = (i, _COLOR_OF[color], pt)
        f += dwell
    total = f + tail

    holds = {}
    for e in script.events:
        if e.kind == "hold-captures":
            holds[e.args["move"]] = e.args.get("frames", dwell)

    truth = SceneTruth(grid=grid, stones={}, noise_sigma=1.5)
    pending_removals: list[tuple[int, list]] = []
    occlude_until = {}
    truth_log: list[dict] = []

    def frames():
        nonlocal truth, pending_removals
        move_no = 0
        for idx in range(total):
            for e in script.events:
                if e.frame != idx:
                    continue
                if e.kind == "shift":
                    truth.grid = GridModel(
                        n, truth.grid.corners
                        + np.array([e.args.get("dx", 0.0), e.args.get("dy", 0.0)]))
                elif e.kind == "rotate":
                    centre = truth.grid.corners.mean(axis=0)
                    truth.grid = GridModel(
                        n, rotate_points(truth.grid.corners,
                                         e.args["degrees"], centre))
                elif e.kind == "lighting":
                    truth.lighting = e.args.get("mode", "pale-grey")
                elif e.kind == "occlude":
                    poly = np.asarray(e.args["polygon"], dtype=np.float64)
                    truth.occluders.append(poly)
                    occlude_until[id(poly)] = idx + e.args.get("frames", dwell)
            truth.occluders = [p for p in truth.occluders
                               if occlude_until.get(id(p), 0) > idx]

            still_pending = []
            for due, pts in pending_removals:
                if due <= idx:
                    for p in pts:
                        truth.stones.pop(p, None)
                else:
                    still_pending.append((due, pts))
            pending_removals = still_pending

            event = None
            if idx in move_frames:
                i, color, pt = move_frames[idx]
                move_no = i + 1
                rec = board._place(color, pt, idx, set())
                truth.stones[pt] = color
                cap_pts = [p for p, _c in rec.captured]
                if cap_pts:
                    delay = holds.get(move_no, 0)
                    if delay:
                        pending_removals.append((idx + delay, cap_pts))
                    else:
                        for p in cap_pts:
                            truth.stones.pop(p, None)
                event = {"move": move_no, "color": color, "point": list(pt),
                         "captured": [list(p) for p in cap_pts]}

            truth_log.append({
                "frame": idx,
                "corners": truth.grid.corners.tolist(),
                "stones": {f"{c},{r}": int(v)
                           for (c, r), v in truth.stones.items()},
                "move_event": event,
                "lighting": truth.lighting,
            })
            yield render_frame(truth, width, height, seed=seed, index=idx)

    return frames(), truth_log


def save_sequence(frame_iter, out_dir: str, truth_log=None) -> int:
    """Write frames as numbered PNGs (plus truth.json when provided)."""
    from PIL import Image

    os.makedirs(out_dir, exist_ok=True)
    count = 0
    for fr in frame_iter:
        Image.fromarray(fr.pixels).save(
            os.path.join(out_dir, f"frame_{fr.index:06d}.png"))
        count += 1
    if truth_log is not None:
        with open(os.path.join(out_dir, "truth.json"), "w") as fh:
            json.dump(truth_log, fh)
    return count
