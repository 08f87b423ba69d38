"""Frame loading and the filtering primitives of the pipeline.

Image-sequence sources are the shipped backend; raw-video decoding is a
pluggable adapter registered via `register_decoder`.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from math import ceil

import numpy as np
from scipy import ndimage as ndi

RGB = "rgb"
GRAY = "gray"
YCBCR = "ycbcr"

_CHANNELS = {RGB: 3, GRAY: 1, YCBCR: 3}


class SourceNotFoundError(FileNotFoundError):
    pass


class SourceUnreadableError(IOError):
    pass


@dataclass(frozen=True)
class Frame:
    """Immutable raster plus stream bookkeeping."""

    pixels: np.ndarray  # (h, w) or (h, w, 3) uint8
    index: int = 0
    timestamp_ms: int = 0
    colorspace: str = RGB

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels)
        if px.dtype != np.uint8:
            raise ValueError("frame pixels must be uint8")
        ch = _CHANNELS[self.colorspace]
        if ch == 1 and px.ndim != 2:
            raise ValueError("grayscale frame must be 2-D")
        if ch == 3 and (px.ndim != 3 or px.shape[2] != 3):
            raise ValueError("color frame must be (h, w, 3)")
        if self.index < 0 or self.timestamp_ms < 0:
            raise ValueError("index and timestamp must be non-negative")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class EdgeMap:
    """Binary edge raster; `orientation` holds per-pixel gradient angles."""

    bits: np.ndarray  # (h, w) bool
    orientation: np.ndarray | None = None  # (h, w) float32, radians
    magnitude: np.ndarray | None = None

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def pixels_xy(self) -> np.ndarray:
        """Edge pixel coordinates as (n, 2) float (x, y)."""
        ys, xs = np.nonzero(self.bits)
        return np.stack([xs, ys], axis=-1).astype(np.float64)


@dataclass(frozen=True)
class SourceSpec:
    path: str
    kind: str = "image-sequence"
    stride: int = 1

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


_IMAGE_EXTS = (".png", ".ppm", ".pgm", ".bmp", ".jpg", ".jpeg")

_decoders: dict = {}


def register_decoder(kind: str, factory) -> None:
    """Register a frame decoder: factory(spec) -> iterable of Frame."""
    _decoders[kind] = factory


class FrameSource:
    """Single-consumer iterator over the frames of one source."""

    def __init__(self, frames_iter, count_hint=None):
        self._it = iter(frames_iter)
        self.count_hint = count_hint

    def __iter__(self):
        return self._it

    def __next__(self):
        return next(self._it)


def _load_image(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("L", "I;16"):
            return np.asarray(im.convert("L"), dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _sequence_frames(spec: SourceSpec):
    names = sorted(f for f in os.listdir(spec.path)
                   if f.lower().endswith(_IMAGE_EXTS))
    for pos, name in enumerate(names):
        if pos % spec.stride:
            continue
        px = _load_image(os.path.join(spec.path, name))
        cs = GRAY if px.ndim == 2 else RGB
        yield Frame(px, index=pos, timestamp_ms=pos * 33, colorspace=cs)


def open_source(spec: SourceSpec) -> FrameSource:
    """Open a frame source; yields frames at the configured stride."""
    if spec.kind == "image-sequence":
        if not os.path.isdir(spec.path):
            raise SourceNotFoundError(spec.path)
        names = sorted(f for f in os.listdir(spec.path)
                       if f.lower().endswith(_IMAGE_EXTS))
        if not names:
            raise SourceNotFoundError(f"no image files in {spec.path}")
        try:
            _load_image(os.path.join(spec.path, names[0]))
        except Exception as exc:
            raise SourceUnreadableError(str(exc)) from exc
        return FrameSource(_sequence_frames(spec),
                           count_hint=ceil(len(names) / spec.stride))
    if spec.kind in _decoders:
        return FrameSource(_decoders[spec.kind](spec))
    raise SourceUnreadableError(f"no decoder registered for kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# filters

# Rec. 601 luma weights; the upstream colorspace is unspecified so the
# standard definition is used.
_LUMA = np.array([0.299, 0.587, 0.114])


def to_grayscale(f: Frame) -> Frame:
    """Single-channel luminance frame; idempotent on grayscale input."""
    if f.colorspace == GRAY:
        return f
    luma = f.pixels.astype(np.float64) @ _LUMA
    return Frame(np.clip(np.rint(luma), 0, 255).astype(np.uint8),
                 index=f.index, timestamp_ms=f.timestamp_ms, colorspace=GRAY)


def rgb_to_ycbcr(pixels: np.ndarray) -> np.ndarray:
    """Rec. 601 full-range YCbCr as float64 (h, w, 3)."""
    p = pixels.astype(np.float64)
    y = p @ _LUMA
    cb = 128.0 + (p[..., 2] - y) * 0.564
    cr = 128.0 + (p[..., 0] - y) * 0.713
    return np.stack([y, cb, cr], axis=-1)


def unsharp_mask(f: Frame, sigma: float, amount: float) -> Frame:
    """Sharpen: f + amount * (f - gaussian_blur(f, sigma)), clamped."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if amount < 0:
        raise ValueError("amount must be non-negative")
    px = f.pixels.astype(np.float64)
    if px.ndim == 3:
        blur = np.stack([ndi.gaussian_filter(px[..., c], sigma)
                         for c in range(3)], axis=-1)
    else:
        blur = ndi.gaussian_filter(px, sigma)
    out = np.clip(np.rint(px + amount * (px - blur)), 0, 255).astype(np.uint8)
    return Frame(out, index=f.index, timestamp_ms=f.timestamp_ms,
                 colorspace=f.colorspace)


def canny_edges(f: Frame | np.ndarray, low: float = 50.0, high: float = 150.0,
                sigma: float = 1.0) -> EdgeMap:
    """Canny: gradient magnitude, non-maximum suppression, hysteresis.

    Gradient magnitudes are scaled so a full-contrast step edge reads
    about 255 ("8-bit gradients"); defaults (50, 150) come from config.
    """
    if not 0 <= low <= high:
        raise ValueError("need 0 <= low <= high")
    px = f.pixels if isinstance(f, Frame) else np.asarray(f)
    if px.ndim != 2:
        raise ValueError("canny expects a grayscale raster")
    # float32 keeps this hot path (called per frame) inside time budgets
    g = ndi.gaussian_filter(px.astype(np.float32), sigma)
    gx = ndi.sobel(g, axis=1)
    gy = ndi.sobel(g, axis=0)
    mag = np.hypot(gx, gy) / 2.0
    orient = np.arctan2(gy, gx)

    # non-maximum suppression in 4 quantized directions
    sector = np.rint(orient / (np.pi / 4)).astype(np.int64) % 4
    h, w = mag.shape
    pad = np.pad(mag, 1, mode="constant")
    offs = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    n1 = np.zeros_like(mag)
    n2 = np.zeros_like(mag)
    for s, (dy, dx) in offs.items():
        m = sector == s
        n1[m] = pad[1 + dy:1 + dy + h, 1 + dx:1 + dx + w][m]
        n2[m] = pad[1 - dy:1 - dy + h, 1 - dx:1 - dx + w][m]
    ridge = (mag >= n1) & (mag > n2) & (mag > 0)

    strong = ridge & (mag >= high)
    weak = ridge & (mag >= low)
    lab, nlab = ndi.label(weak, structure=np.ones((3, 3), dtype=int))
    if nlab == 0:
        bits = np.zeros_like(weak)
    else:
        keep = np.zeros(nlab + 1, dtype=bool)
        keep[np.unique(lab[strong])] = True
        keep[0] = False
        bits = keep[lab]
    return EdgeMap(bits=bits, orientation=orient, magnitude=mag)
