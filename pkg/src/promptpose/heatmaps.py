"""Gaussian target heatmap encoding and argmax decoding.

Heatmaps are stored channel-last, shape (h, w, N), together with the
stride (input pixels per map cell). The same container carries Gaussian
training targets, predicted heatmaps, and keypoint presence score maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class HeatmapStack:
    """N-channel spatial map with stride metadata.

    Attributes:
        values: Array of shape (h, w, N).
        stride: Input pixels per map cell. Integer in normal use; upsampling
            a map can produce a fractional stride, so any positive value is
            accepted.
    """

    values: np.ndarray
    stride: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ValueError(f"heatmap values must be (h, w, N), got shape {v.shape}")
        if min(v.shape) < 1:
            raise ValueError(f"heatmap dimensions must be >= 1, got {v.shape}")
        if self.stride <= 0:
            raise ValueError(f"stride must be positive, got {self.stride}")
        object.__setattr__(self, "values", v)

    @property
    def map_size(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]

    @property
    def num_channels(self) -> int:
        return self.values.shape[2]


def encode_gaussian(
    keypoints: np.ndarray,
    visibility: np.ndarray,
    map_size: tuple[int, int],
    stride: int = 4,
    sigma: float = 2.0,
) -> tuple[HeatmapStack, np.ndarray]:
    """Encode keypoints into per-channel 2D Gaussian targets.

    Each visible keypoint produces exp(-((i-cy)^2 + (j-cx)^2) / (2 sigma^2))
    around the cell (cx, cy) = round(keypoint / stride), truncated to zero
    outside a 3-sigma radius, so the peak cell is exactly 1. Keypoints that
    are invisible or round outside the map give an all-zero channel with
    weight 0.

    Args:
        keypoints: (N, 2) keypoint (x, y) in input pixels.
        visibility: (N,) flags; a channel is encoded iff v > 0.
        map_size: (h, w) of the target map.
        stride: Input pixels per map cell.
        sigma: Gaussian standard deviation in map cells.

    Returns:
        (target stack, weight mask of shape (N,)).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    keypoints = np.asarray(keypoints, dtype=np.float64)
    visibility = np.asarray(visibility)
    h, w = map_size
    n = keypoints.shape[0]
    target = np.zeros((h, w, n), dtype=np.float64)
    mask = np.zeros(n, dtype=np.float64)

    ii = np.arange(h, dtype=np.float64)[:, None]
    jj = np.arange(w, dtype=np.float64)[None, :]
    radius_sq = (3.0 * sigma) ** 2

    for k in range(n):
        if visibility[k] <= 0:
            continue
        cx = int(np.floor(keypoints[k, 0] / stride + 0.5))
        cy = int(np.floor(keypoints[k, 1] / stride + 0.5))
        if not (0 <= cx < w and 0 <= cy < h):
            continue
        d_sq = (ii - cy) ** 2 + (jj - cx) ** 2
        channel = np.exp(-d_sq / (2.0 * sigma**2))
        channel[d_sq > radius_sq] = 0.0
        target[:, :, k] = channel
        mask[k] = 1.0

    return HeatmapStack(target, float(stride)), mask


def decode_argmax(heatmap: HeatmapStack, quarter_offset: bool = False) -> np.ndarray:
    """Decode per-channel argmax cells back to input-pixel coordinates.

    Ties are broken by first occurrence in a row-major scan, so an all-zero
    channel decodes to (0, 0).

    Args:
        heatmap: Stack of shape (h, w, N).
        quarter_offset: Shift the argmax a quarter cell towards the
            second-highest neighbour before scaling (off by default; plain
            argmax is the reference behaviour).

    Returns:
        (N, 2) array of (x, y) = stride * (j*, i*).
    """
    values = heatmap.values
    h, w, n = values.shape
    coords = np.zeros((n, 2), dtype=np.float64)
    for k in range(n):
        flat = int(np.argmax(values[:, :, k]))
        i, j = divmod(flat, w)
        x, y = float(j), float(i)
        if quarter_offset:
            ch = values[:, :, k]
            if 0 < j < w - 1:
                x += 0.25 * np.sign(ch[i, j + 1] - ch[i, j - 1])
            if 0 < i < h - 1:
                y += 0.25 * np.sign(ch[i + 1, j] - ch[i - 1, j])
        coords[k] = (x * heatmap.stride, y * heatmap.stride)
    return coords


def peak_values(heatmap: HeatmapStack) -> np.ndarray:
    """Per-channel maximum value, the confidence companion of decode_argmax."""
    return heatmap.values.max(axis=(0, 1))


def bilinear_resize(values: np.ndarray, out_size: tuple[int, int]) -> np.ndarray:
    """Channel-wise bilinear interpolation with pixel-center alignment.

    Source coordinates are ``(out + 0.5) * (src / out) - 0.5``, clamped at
    the borders; the convention every resize in this package follows.

    Args:
        values: (h, w, N) array.
        out_size: Target (h, w).

    Returns:
        (out_h, out_w, N) array of the same dtype kind.
    """
    src_h, src_w = values.shape[:2]
    out_h, out_w = out_size

    def axis_coords(out_len: int, src_len: int) -> np.ndarray:
        out = np.arange(out_len, dtype=np.float64)
        src = (out + 0.5) * (src_len / out_len) - 0.5
        return np.clip(src, 0.0, src_len - 1.0)

    ys = axis_coords(out_h, src_h)
    xs = axis_coords(out_w, src_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]

    v00 = values[np.ix_(y0, x0)]
    v01 = values[np.ix_(y0, x1)]
    v10 = values[np.ix_(y1, x0)]
    v11 = values[np.ix_(y1, x1)]
    top = v00 * (1 - wx) + v01 * wx
    bot = v10 * (1 - wx) + v11 * wx
    return top * (1 - wy) + bot * wy


def upsample_map(heatmap: HeatmapStack, target_size: tuple[int, int]) -> HeatmapStack:
    """Bilinearly upsample a stack to ``target_size``.

    The stride is rescaled by the height ratio. Downsampling requests are
    rejected.
    """
    src_h, src_w = heatmap.map_size
    out_h, out_w = target_size
    if out_h < src_h or out_w < src_w:
        raise ValueError(
            f"upsample target {target_size} smaller than source {(src_h, src_w)}"
        )
    if (out_h, out_w) == (src_h, src_w):
        return heatmap
    resized = bilinear_resize(heatmap.values, (out_h, out_w))
    return HeatmapStack(resized, heatmap.stride * src_h / out_h)
