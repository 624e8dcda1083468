"""8-bit images: PGM/PPM codecs, geometric transforms and the filter bank.

An image is a ``uint8`` array, ``(H, W)`` for grayscale or ``(H, W, 3)``
for RGB.  Every transform is a pure function of its inputs; random ones
take an explicit :class:`~cadnn.tensor.RngState`.
"""

from __future__ import annotations

import re

import numpy as np

from .tensor import RngState


class ImageDecodeError(ValueError):
    pass


# --------------------------------------------------------------------- codecs

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header(data: bytes, count: int):
    values, pos = [], 0
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ImageDecodeError("malformed header")
        values.append(m.group(1))
        pos = m.end()
    return values, pos


def decode_image(data: bytes, hint: str | None = None) -> np.ndarray:
    """Decode a PGM (P2/P5) or PPM (P3/P6) stream with maxval 255."""
    if hint is not None and hint.lower().lstrip(".") not in ("pgm", "ppm", "pnm"):
        raise ImageDecodeError(f"unsupported image format {hint!r}")
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ImageDecodeError("not a PGM/PPM stream (bad magic)")
    try:
        (_, w, h, maxval), pos = _header(data, 4)
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ImageDecodeError("malformed header") from None
    if width < 1 or height < 1:
        raise ImageDecodeError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise ImageDecodeError(f"unsupported maxval {maxval} (only 255)")
    channels = 3 if magic in (b"P3", b"P6") else 1
    n = width * height * channels
    if magic in (b"P5", b"P6"):
        # Exactly one whitespace byte separates the header from raster data.
        raster = data[pos + 1:pos + 1 + n]
        if len(raster) < n:
            raise ImageDecodeError(f"truncated raster: {len(raster)} of {n} bytes")
        pixels = np.frombuffer(raster, dtype=np.uint8).copy()
    else:
        tokens = data[pos:].split()
        if len(tokens) < n:
            raise ImageDecodeError(f"truncated raster: {len(tokens)} of {n} samples")
        try:
            values = np.array([int(t) for t in tokens[:n]])
        except ValueError:
            raise ImageDecodeError("non-integer sample in ASCII raster") from None
        if values.min() < 0 or values.max() > 255:
            raise ImageDecodeError("sample outside 0..255")
        pixels = values.astype(np.uint8)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return pixels.reshape(shape)


def encode_image(img: np.ndarray) -> bytes:
    """Binary PGM (P5) for grayscale, PPM (P6) for RGB."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    magic = b"P6" if img.ndim == 3 else b"P5"
    return b"%s\n%d %d\n255\n" % (magic, img.shape[1], img.shape[0]) + img.tobytes()


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


# ----------------------------------------------------------------- transforms


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(x), 0, 255).astype(np.uint8)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma; grayscale input is returned unchanged."""
    if img.ndim == 2:
        return img
    rgb = img.astype(np.float64)
    return to_uint8(0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2])


def resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling."""
    if height < 1 or width < 1:
        raise ValueError("resize targets must be >= 1")
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()
    ys = np.linspace(0, h - 1, height) if height > 1 else np.array([(h - 1) / 2])
    xs = np.linspace(0, w - 1, width) if width > 1 else np.array([(w - 1) / 2])
    return to_uint8(_bilinear(img.astype(np.float64), ys[:, None], xs[None, :]))


def _bilinear(src: np.ndarray, ys: np.ndarray, xs: np.ndarray, fill=None) -> np.ndarray:
    """Sample ``src`` at (ys, xs); outside points get ``fill`` (clamped if None)."""
    h, w = src.shape[:2]
    ys, xs = np.broadcast_arrays(ys, xs)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy, fx = ys - y0, xs - x0
    if src.ndim == 3:
        fy, fx = fy[..., None], fx[..., None]

    def at(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        if fill is not None:
            mask = inside[..., None] if src.ndim == 3 else inside
            vals = np.where(mask, vals, fill)
        return vals

    # Exact sample positions must not read a neighbour that is out of range.
    x1 = np.where(fx.reshape(x0.shape) > 0, x0 + 1, x0)
    y1 = np.where(fy.reshape(y0.shape) > 0, y0 + 1, y0)
    top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx
    bottom = at(y1, x0) * (1 - fx) + at(y1, x1) * fx
    return top * (1 - fy) + bottom * fy


def flip_h(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1].copy()


def flip_v(img: np.ndarray) -> np.ndarray:
    return img[::-1].copy()


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Counter-clockwise rotation about the centre, same output size.

    Multiples of 90 degrees are exact permutations (square images only keep
    their shape; others swap height and width).  Other angles sample
    bilinearly with black fill outside the source.
    """
    quarter = degrees / 90.0
    if float(quarter).is_integer():
        return np.rot90(img, int(quarter) % 4).copy()
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    theta = np.deg2rad(degrees)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    # Inverse map: destination (row, col) -> source.  Rows grow downward, so
    # a counter-clockwise turn on screen is clockwise in (row, col) space.
    sx = cx + dx * np.cos(theta) - dy * np.sin(theta)
    sy = cy + dx * np.sin(theta) + dy * np.cos(theta)
    inside = (sy > -1) & (sy < h) & (sx > -1) & (sx < w)
    out = _bilinear(img.astype(np.float64), sy, sx, fill=0.0)
    mask = inside[..., None] if img.ndim == 3 else inside
    return to_uint8(np.where(mask, out, 0.0))


def random_crop(img: np.ndarray, height: int, width: int, rng: RngState) -> np.ndarray:
    h, w = img.shape[:2]
    if height > h or width > w or height < 1 or width < 1:
        raise ValueError(f"crop {height}x{width} does not fit image {h}x{w}")
    top = int(rng.integers(0, h - height + 1))
    left = int(rng.integers(0, w - width + 1))
    return img[top:top + height, left:left + width].copy()


# ---------------------------------------------------------------- filter bank

FILTER_BANK: dict[str, tuple[np.ndarray, int]] = {
    "identity": (np.array([[0, 0, 0], [0, 1, 0], [0, 0, 0]]), 1),
    "edge-1": (np.array([[1, 0, -1], [0, 0, 0], [-1, 0, 1]]), 1),
    "edge-2": (np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]]), 1),
    "edge-3": (np.array([[-1, -1, -1], [-1, 8, -1], [-1, -1, -1]]), 1),
    "sharpen": (np.array([[0, -1, 0], [-1, 5, -1], [0, -1, 0]]), 1),
    "box-blur": (np.ones((3, 3), dtype=int), 9),
    "gaussian-blur": (np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]), 16),
}


def filter_kernel(name: str) -> np.ndarray:
    try:
        coeffs, divisor = FILTER_BANK[name]
    except KeyError:
        raise KeyError(f"unknown filter {name!r}; expected one of {sorted(FILTER_BANK)}") from None
    return coeffs / divisor


def apply_filter(img: np.ndarray, name: str) -> np.ndarray:
    """Valid cross-correlation with a bank kernel, rounded and clamped to 0..255."""
    if name not in FILTER_BANK:
        raise KeyError(f"unknown filter {name!r}; expected one of {sorted(FILTER_BANK)}")
    coeffs, divisor = FILTER_BANK[name]
    gray = to_grayscale(img).astype(np.int64)
    kh, kw = coeffs.shape
    h, w = gray.shape
    if h < kh or w < kw:
        raise ValueError(f"image {h}x{w} smaller than {kh}x{kw} kernel")
    windows = np.lib.stride_tricks.sliding_window_view(gray, (kh, kw))
    # Integer accumulation, one division: constant images stay exact.
    acc = np.einsum("ijkl,kl->ij", windows, coeffs)
    return to_uint8(acc / divisor)
