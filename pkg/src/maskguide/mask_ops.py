"""Binary mask morphology, cubic resampling and the control-resolution mask pyramid.

Masks are numpy arrays of shape (H, W). Binary masks use ``uint8`` values in
{0, 1} with 1 marking the region to generate; soft masks are ``float32`` in
[0, 1]. Out-of-bounds pixels always read as 0 for both erosion and dilation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

# injection point -> pyramid level (4 taps at L, 3 at L/2, 3 at L/4, 3 at L/8)
INDEX_MAP: tuple[int, ...] = (0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3)
NUM_LEVELS = 4


@dataclass(frozen=True)
class StructuringElement:
    """Odd-sized binary footprint whose center element is set."""

    footprint: np.ndarray

    def __post_init__(self):
        fp = np.asarray(self.footprint)
        if fp.ndim != 2 or fp.shape[0] != fp.shape[1]:
            raise ValueError(f"structuring element must be square, got shape {fp.shape}")
        k = fp.shape[0]
        if k < 1 or k % 2 == 0:
            raise ValueError(f"structuring element size must be odd and >= 1, got {k}")
        if not np.isin(fp, (0, 1)).all():
            raise ValueError("structuring element must be binary")
        if fp[k // 2, k // 2] != 1:
            raise ValueError("structuring element center must be 1")
        object.__setattr__(self, "footprint", fp.astype(np.uint8))

    @property
    def size(self) -> int:
        return self.footprint.shape[0]

    def offsets(self) -> list[tuple[int, int]]:
        r = self.size // 2
        ys, xs = np.nonzero(self.footprint)
        return [(int(y) - r, int(x) - r) for y, x in zip(ys, xs)]

    def reflected(self) -> "StructuringElement":
        return StructuringElement(self.footprint[::-1, ::-1].copy())

    @classmethod
    def square(cls, k: int) -> "StructuringElement":
        return cls(np.ones((k, k), dtype=np.uint8))

    @classmethod
    def cross(cls, k: int) -> "StructuringElement":
        fp = np.zeros((k, k), dtype=np.uint8)
        fp[k // 2, :] = 1
        fp[:, k // 2] = 1
        return cls(fp)

    @classmethod
    def disk(cls, k: int) -> "StructuringElement":
        r = k // 2
        yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
        return cls((yy * yy + xx * xx <= r * r + r).astype(np.uint8))


def as_binary(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"mask must be a non-empty 2-D array, got shape {m.shape}")
    if m.dtype == np.bool_:
        return m.astype(np.uint8)
    if not np.isin(m, (0, 1)).all():
        raise ValueError("binary mask values must be 0 or 1")
    return m.astype(np.uint8)


def _shifted(padded: np.ndarray, r: int, dy: int, dx: int, h: int, w: int) -> np.ndarray:
    # view of the source array at offset (dy, dx) for every output pixel
    return padded[r + dy : r + dy + h, r + dx : r + dx + w]


def dilate(mask, se: StructuringElement) -> np.ndarray:
    """out[p] = 1 iff mask[p - o] = 1 for some offset o of the footprint."""
    m = as_binary(mask).astype(bool)
    h, w = m.shape
    r = se.size // 2
    padded = np.pad(m, r, constant_values=False)
    out = np.zeros_like(m)
    for dy, dx in se.offsets():
        out |= _shifted(padded, r, -dy, -dx, h, w)
    return out.astype(np.uint8)


def erode(mask, se: StructuringElement) -> np.ndarray:
    """out[p] = 1 iff mask[p + o] = 1 for every offset o of the footprint."""
    m = as_binary(mask).astype(bool)
    h, w = m.shape
    r = se.size // 2
    padded = np.pad(m, r, constant_values=False)
    out = np.ones_like(m)
    for dy, dx in se.offsets():
        out &= _shifted(padded, r, dy, dx, h, w)
    return out.astype(np.uint8)


def opening(mask, se: StructuringElement) -> np.ndarray:
    return dilate(erode(mask, se), se)


def closing(mask, se: StructuringElement) -> np.ndarray:
    return erode(dilate(mask, se), se)


# public names used by callers; ``open`` would shadow the builtin inside this module
open_ = opening
close = closing


@dataclass(frozen=True)
class RefineParams:
    """Structuring elements for the close -> open -> dilate refinement chain."""

    se_close: StructuringElement = field(default_factory=lambda: StructuringElement.square(3))
    se_open: StructuringElement = field(default_factory=lambda: StructuringElement.square(3))
    se_dilate: StructuringElement = field(default_factory=lambda: StructuringElement.square(5))

    @classmethod
    def from_sizes(cls, close_size: int = 3, open_size: int = 3, dilate_size: int = 5) -> "RefineParams":
        return cls(
            StructuringElement.square(close_size),
            StructuringElement.square(open_size),
            StructuringElement.square(dilate_size),
        )


def refine_mask(mask, params: RefineParams | None = None) -> np.ndarray:
    """Fill small holes, drop specks, then grow the edge."""
    params = params or RefineParams()
    m = closing(mask, params.se_close)
    m = opening(m, params.se_open)
    return dilate(m, params.se_dilate)


def cubic_kernel(x, a: float = -0.5):
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    near = x <= 1.0
    far = (x > 1.0) & (x < 2.0)
    xn = x[near]
    xf = x[far]
    out[near] = ((a + 2.0) * xn - (a + 3.0)) * xn * xn + 1.0
    out[far] = ((a * xf - 5.0 * a) * xf + 8.0 * a) * xf - 4.0 * a
    return out


@lru_cache(maxsize=64)
def _resample_weights(n_in: int, n_out: int, a: float = -0.5) -> np.ndarray:
    """(n_out, n_in) matrix of normalized cubic weights, kernel widened by the scale."""
    scale = n_in / n_out
    support_scale = max(scale, 1.0)
    support = 2.0 * support_scale
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) * scale
        lo = max(int(np.floor(center - support)), 0)
        hi = min(int(np.ceil(center + support)), n_in)
        j = np.arange(lo, hi)
        w = cubic_kernel((j + 0.5 - center) / support_scale, a)
        weights[i, lo:hi] = w / w.sum()
    weights.setflags(write=False)
    return weights


def downsample_cubic(mask, target_h: int, target_w: int) -> np.ndarray:
    """Separable Catmull-Rom (a=-0.5) resampling on pixel centers, clamped to [0, 1]."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target dims must be >= 1, got {target_h}x{target_w}")
    if target_h > m.shape[0] or target_w > m.shape[1]:
        raise ValueError(f"cannot upsample {m.shape} to {target_h}x{target_w}")
    wy = _resample_weights(m.shape[0], target_h)
    wx = _resample_weights(m.shape[1], target_w)
    out = wy @ m @ wx.T
    return np.clip(out, 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True)
class MaskPyramid:
    """Soft masks at L, L/2, L/4, L/8 plus the injection-point -> level map."""

    levels: tuple[np.ndarray, ...]
    index_map: tuple[int, ...] = INDEX_MAP

    def __post_init__(self):
        if len(self.levels) != NUM_LEVELS:
            raise ValueError(f"pyramid needs {NUM_LEVELS} levels, got {len(self.levels)}")
        sides = [lv.shape[0] for lv in self.levels]
        for a, b in zip(sides, sides[1:]):
            if a != 2 * b:
                raise ValueError(f"pyramid sides must halve, got {sides}")
        idx = list(self.index_map)
        if len(idx) != len(INDEX_MAP) or idx != sorted(idx) or set(idx) != set(range(NUM_LEVELS)):
            raise ValueError(f"invalid index_map {idx}")

    @property
    def sizes(self) -> list[int]:
        return [lv.shape[0] for lv in self.levels]

    def for_point(self, i: int) -> np.ndarray:
        return self.levels[self.index_map[i]]

    @classmethod
    def constant(cls, base_latent_size: int, value: float) -> "MaskPyramid":
        return cls(tuple(
            np.full((base_latent_size >> k, base_latent_size >> k), value, dtype=np.float32)
            for k in range(NUM_LEVELS)
        ))


def build_mask_pyramid(mask, base_latent_size: int) -> MaskPyramid:
    L = int(base_latent_size)
    if L < 8 or L % 8:
        raise ValueError(f"base latent size must be a positive multiple of 8, got {L}")
    m = np.asarray(mask, dtype=np.float32)
    return MaskPyramid(tuple(downsample_cubic(m, L >> k, L >> k) for k in range(NUM_LEVELS)))


def load_mask_png(path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img.convert("L"))
    return (arr >= 128).astype(np.uint8)


def load_soft_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr.astype(np.float32) / 255.0)


def save_mask_png(mask, path) -> None:
    """Binary masks save as 0/255; soft masks are quantized round-to-nearest."""
    m = np.asarray(mask)
    if m.dtype == np.uint8 and m.max(initial=0) <= 1:
        arr = m * 255
    else:
        arr = np.rint(np.clip(m.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr.astype(np.uint8), mode="L").save(Path(path))
