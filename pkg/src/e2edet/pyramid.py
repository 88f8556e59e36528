"""Feature pyramids, cross-scale bilinear gathering and 3D max filtering.

A level is a float array of shape (C, H, W). Level 0 is the finest grid
and strides double from one level to the next.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class FilterParams:
    """Scale span ``tau`` (even) and odd spatial window ``phi``."""

    tau: int = 2
    phi: int = 3

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 0 or self.tau % 2:
            raise ValueError(f"tau must be a non-negative even integer, got {self.tau}")
        if int(self.phi) != self.phi or self.phi < 1 or self.phi % 2 == 0:
            raise ValueError(f"phi must be a positive odd integer, got {self.phi}")


class FeaturePyramid:
    """Ordered per-level (C, H, W) grids with strictly doubling strides."""

    def __init__(self, levels: Sequence[np.ndarray], strides: Sequence[float]):
        levels = [np.asarray(x, dtype=np.float64) for x in levels]
        levels = [x[None] if x.ndim == 2 else x for x in levels]
        strides = [float(s) for s in strides]
        if not levels:
            raise ValueError("pyramid must have at least one level")
        if len(levels) != len(strides):
            raise ValueError(f"{len(levels)} levels but {len(strides)} strides")
        channels = levels[0].shape[0]
        for i, x in enumerate(levels):
            if x.ndim != 3:
                raise ValueError(f"level {i} must be (C, H, W), got shape {x.shape}")
            if x.shape[0] != channels:
                raise ValueError(f"level {i} has {x.shape[0]} channels, expected {channels}")
            if min(x.shape) < 1:
                raise ValueError(f"level {i} is empty")
            if not np.all(np.isfinite(x)):
                raise ValueError(f"level {i} has non-finite values")
        if strides[0] <= 0:
            raise ValueError("strides must be positive")
        for a, b in zip(strides, strides[1:]):
            if b != 2 * a:
                raise ValueError(f"strides must double level to level, got {strides}")
        self.levels: List[np.ndarray] = levels
        self.strides: List[float] = strides

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i) -> np.ndarray:
        return self.levels[i]

    def __repr__(self):
        shapes = ", ".join("x".join(map(str, x.shape)) for x in self.levels)
        return f"FeaturePyramid([{shapes}], strides={self.strides})"

    @property
    def channels(self) -> int:
        return self.levels[0].shape[0]

    @property
    def shapes(self) -> List[Tuple[int, int, int]]:
        return [x.shape for x in self.levels]

    def map(self, fn) -> "FeaturePyramid":
        return FeaturePyramid([fn(x) for x in self.levels], self.strides)

    def allclose(self, other: "FeaturePyramid", **kw) -> bool:
        return (self.strides == other.strides and self.shapes == other.shapes
                and all(np.allclose(a, b, **kw) for a, b in zip(self.levels, other.levels)))

    def array_equal(self, other: "FeaturePyramid") -> bool:
        return (self.strides == other.strides and self.shapes == other.shapes
                and all(np.array_equal(a, b) for a, b in zip(self.levels, other.levels)))


# ---------------------------------------------------------------------------
# bilinear resizing

def _taps(src: int, dst: int):
    """Per output sample: lower/upper source index and the upper weight.

    Sample ``d`` reads source coordinate ``(d + 0.5) * src / dst - 0.5``,
    clamped to ``[0, src - 1]``.
    """
    if src < 1 or dst < 1:
        raise ValueError("sizes must be >= 1")
    lo = np.zeros(dst, dtype=np.int64)
    hi = np.zeros(dst, dtype=np.int64)
    frac = np.zeros(dst)
    for d in range(dst):
        s = min(max((d + 0.5) * src / dst - 0.5, 0.0), src - 1.0)
        lo[d] = int(np.floor(s))
        hi[d] = min(lo[d] + 1, src - 1)
        frac[d] = s - lo[d]
    return lo, hi, frac


def interpolation_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) linear-interpolation weights, half-pixel centres."""
    lo, hi, frac = _taps(src, dst)
    m = np.zeros((dst, src))
    np.add.at(m, (np.arange(dst), lo), 1.0 - frac)
    np.add.at(m, (np.arange(dst), hi), frac)
    return m


def bilinear_resize(src: np.ndarray, dst_h: int, dst_w: int) -> np.ndarray:
    """Resize a (C, H, W) or (H, W) grid with half-pixel-centre bilinear sampling.

    Rows are blended first, then columns, as explicit two-tap sums so the
    rounding does not depend on the BLAS build.
    """
    src = np.asarray(src, dtype=np.float64)
    if src.size == 0:
        raise ValueError("cannot resize an empty grid")
    if dst_h < 1 or dst_w < 1:
        raise ValueError(f"target size must be >= 1, got {dst_h}x{dst_w}")
    h, w = src.shape[-2:]
    if (h, w) == (dst_h, dst_w):
        return src.copy()
    y0, y1, fy = _taps(h, dst_h)
    x0, x1, fx = _taps(w, dst_w)
    rows = (1.0 - fy)[:, None] * src[..., y0, :] + fy[:, None] * src[..., y1, :]
    return (1.0 - fx) * rows[..., x0] + fx * rows[..., x1]


def bilinear_resize_backward(grad: np.ndarray, src_h: int, src_w: int) -> np.ndarray:
    """Adjoint of :func:`bilinear_resize`: maps an output gradient to the source grid."""
    dst_h, dst_w = grad.shape[-2:]
    if (src_h, src_w) == (dst_h, dst_w):
        return grad.copy()
    rh = interpolation_matrix(src_h, dst_h)
    rw = interpolation_matrix(src_w, dst_w)
    return rh.T @ grad @ rw


# ---------------------------------------------------------------------------
# 3D max filtering

def tube_levels(s: int, num_levels: int, tau: int) -> range:
    half = tau // 2
    return range(max(0, s - half), min(num_levels, s + half + 1))


def _gather(p: FeaturePyramid, s: int, tau: int) -> Tuple[List[int], np.ndarray]:
    """Levels of the tube around ``s`` resized onto level ``s``: (T, C, H, W)."""
    _, h, w = p.levels[s].shape
    ks = list(tube_levels(s, len(p), tau))
    stacked = np.stack([p.levels[s] if k == s else bilinear_resize(p.levels[k], h, w) for k in ks])
    return ks, stacked


def _window_max(stacked: np.ndarray, phi: int, with_argmax: bool):
    """Max over (tube level, dy, dx) with zero padding.

    Scan order is tube level, then window row, then window column; the first
    maximum in that order wins ties.
    """
    t, c, h, w = stacked.shape
    r = phi // 2
    padded = np.pad(stacked, ((0, 0), (0, 0), (r, r), (r, r)))
    best = np.full((c, h, w), -np.inf)
    arg = np.zeros((c, h, w), dtype=np.int64) if with_argmax else None
    pos = 0
    for k in range(t):
        for dy in range(phi):
            for dx in range(phi):
                cand = padded[k, :, dy:dy + h, dx:dx + w]
                better = cand > best
                best = np.where(better, cand, best)
                if with_argmax:
                    arg[better] = pos
                pos += 1
    return best, arg


def max_filter_3d(p: FeaturePyramid, params: FilterParams = FilterParams()) -> FeaturePyramid:
    """Max over the scale/space tube of every cell, per channel.

    For level ``s`` the tube spans levels ``s - tau/2 .. s + tau/2`` (clamped
    to existing levels), each bilinearly resized to level ``s``, and a
    ``phi x phi`` zero-padded spatial window.
    """
    out = []
    for s in range(len(p)):
        _, stacked = _gather(p, s, params.tau)
        best, _ = _window_max(stacked, params.phi, with_argmax=False)
        out.append(best)
    return FeaturePyramid(out, p.strides)


def max_filter_3d_with_argmax(p: FeaturePyramid, params: FilterParams):
    """Filtered pyramid plus per-level argmax records for the backward pass."""
    out, records = [], []
    for s in range(len(p)):
        ks, stacked = _gather(p, s, params.tau)
        best, arg = _window_max(stacked, params.phi, with_argmax=True)
        out.append(best)
        records.append((ks, arg))
    return FeaturePyramid(out, p.strides), records


def max_filter_3d_backward(p: FeaturePyramid, params: FilterParams, records,
                           grad_out: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Route each output gradient to its argmax, then back through the resize."""
    r = params.phi // 2
    phi = params.phi
    grads = [np.zeros_like(x) for x in p.levels]
    for s, (ks, arg) in enumerate(records):
        c, h, w = p.levels[s].shape
        g = np.asarray(grad_out[s], dtype=np.float64)
        k_idx, rem = np.divmod(arg, phi * phi)
        dy, dx = np.divmod(rem, phi)
        cc, yy, xx = np.indices((c, h, w))
        # source coordinates in the padded frame, then unpad
        sy = yy + dy - r
        sx = xx + dx - r
        valid = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
        routed = np.zeros((len(ks), c, h, w))
        np.add.at(routed, (k_idx[valid], cc[valid], sy[valid], sx[valid]), g[valid])
        for t, k in enumerate(ks):
            _, hk, wk = p.levels[k].shape
            grads[k] += bilinear_resize_backward(routed[t], hk, wk)
    return grads


def hard_3dmf(p: FeaturePyramid, params: FilterParams = FilterParams()) -> FeaturePyramid:
    """Keep values equal to their tube maximum and zero the rest."""
    filtered = max_filter_3d(p, params)
    return FeaturePyramid([np.where(x == m, x, 0.0) for x, m in zip(p.levels, filtered.levels)],
                          p.strides)


def peak_mask(p: FeaturePyramid, params: FilterParams = FilterParams()) -> List[np.ndarray]:
    """Boolean per-level masks of cells that equal their tube maximum."""
    filtered = max_filter_3d(p, params)
    return [x == m for x, m in zip(p.levels, filtered.levels)]


# ---------------------------------------------------------------------------
# dump format: "DFP1 L\n", L lines "C H W stride\n", then float32 LE payload

class PyramidFormatError(ValueError):
    pass


def _fmt_stride(s: float) -> str:
    return str(int(s)) if float(s).is_integer() else repr(float(s))


def dumps_pyramid(p: FeaturePyramid) -> bytes:
    buf = io.BytesIO()
    buf.write(f"DFP1 {len(p)}\n".encode("ascii"))
    for x, s in zip(p.levels, p.strides):
        c, h, w = x.shape
        buf.write(f"{c} {h} {w} {_fmt_stride(s)}\n".encode("ascii"))
    for x in p.levels:
        buf.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
    return buf.getvalue()


def loads_pyramid(data: bytes) -> FeaturePyramid:
    offset = 0

    def line():
        nonlocal offset
        end = data.find(b"\n", offset)
        if end < 0:
            raise PyramidFormatError(f"unterminated header line at byte offset {offset}")
        start, offset = offset, end + 1
        try:
            return start, data[start:end].decode("ascii").split()
        except UnicodeDecodeError:
            raise PyramidFormatError(f"non-ASCII header at byte offset {start}") from None

    start, head = line()
    if len(head) != 2 or head[0] != "DFP1":
        raise PyramidFormatError(f"bad magic at byte offset {start}: expected 'DFP1 <levels>'")
    try:
        num = int(head[1])
    except ValueError:
        raise PyramidFormatError(f"bad level count at byte offset {start}") from None
    if num < 1:
        raise PyramidFormatError(f"level count must be >= 1 at byte offset {start}")
    dims = []
    for _ in range(num):
        start, fields = line()
        try:
            c, h, w = (int(v) for v in fields[:3])
            stride = float(fields[3])
            if len(fields) != 4 or min(c, h, w) < 1:
                raise ValueError
        except (ValueError, IndexError):
            raise PyramidFormatError(f"bad level header at byte offset {start}: "
                                     f"expected 'C H W stride'") from None
        dims.append((c, h, w, stride))
    levels = []
    for c, h, w, _ in dims:
        n = c * h * w
        end = offset + 4 * n
        if end > len(data):
            raise PyramidFormatError(f"truncated payload at byte offset {offset}: "
                                     f"need {4 * n} bytes, have {len(data) - offset}")
        levels.append(np.frombuffer(data, dtype="<f4", count=n, offset=offset)
                      .reshape(c, h, w).astype(np.float64))
        offset = end
    if offset != len(data):
        raise PyramidFormatError(f"trailing bytes at byte offset {offset}")
    try:
        return FeaturePyramid(levels, [d[3] for d in dims])
    except ValueError as e:
        raise PyramidFormatError(str(e)) from None


def write_pyramid(path, p: FeaturePyramid) -> None:
    with open(path, "wb") as f:
        f.write(dumps_pyramid(p))


def read_pyramid(path) -> FeaturePyramid:
    with open(path, "rb") as f:
        return loads_pyramid(f.read())

