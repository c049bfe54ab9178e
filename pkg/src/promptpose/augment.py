"""Instance cropping and train-time augmentation.

Each instance is cut out of its image by an affine transform that maps the
(optionally scale-jittered and rotated) bounding box onto the output
window, padding the shorter box side so the aspect ratio is preserved.
Keypoints ride along the same affine; a horizontal flip mirrors the window
and permutes the left/right keypoint channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .schema import InstanceRecord, KeypointSchema


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation parameters; defaults are the training settings.

    Attributes:
        flip_prob: Probability of a horizontal flip.
        max_rotation_deg: Rotation drawn uniformly from +- this bound.
        scale_jitter: (low, high) multiplicative box scale range.
        seed: Seed for the generator when none is passed explicitly.
    """

    flip_prob: float = 0.5
    max_rotation_deg: float = 40.0
    scale_jitter: tuple[float, float] = (0.5, 1.5)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        lo, hi = self.scale_jitter
        if lo <= 0 or hi < lo:
            raise ValueError(f"bad scale_jitter range {self.scale_jitter}")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        return cls(flip_prob=0.0, max_rotation_deg=0.0, scale_jitter=(1.0, 1.0), seed=seed)


@dataclass(frozen=True)
class CropResult:
    """Cropped patch with transformed annotations.

    ``transform`` is the full 2x3 image-to-window affine (flip included),
    so predictions in window space map back via its inverse.
    """

    patch: np.ndarray
    keypoints: np.ndarray  # (N, 2) window pixels
    visibility: np.ndarray  # (N,)
    transform: np.ndarray  # (2, 3)

    def __iter__(self):
        return iter((self.patch, self.keypoints, self.visibility))


def _third_point(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return b + np.array([-d[1], d[0]], dtype=np.float64)


def box_to_window_affine(
    bbox: tuple[float, float, float, float],
    out_size: tuple[int, int],
    rotation_deg: float = 0.0,
    scale: float = 1.0,
) -> np.ndarray:
    """2x3 affine mapping the (scaled, rotated) box onto the output window.

    The box is first padded on its shorter side to the window aspect ratio,
    so content is never stretched anisotropically.
    """
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate bbox {bbox}")
    out_h, out_w = out_size
    center = np.array([x + w / 2.0, y + h / 2.0], dtype=np.float64)

    aspect = out_w / out_h
    if w / h > aspect:
        h = w / aspect
    else:
        w = h * aspect
    w *= scale
    h *= scale

    rot = np.deg2rad(rotation_deg)
    src_dir = np.array([np.sin(rot) * w / 2.0, -np.cos(rot) * w / 2.0])
    dst_dir = np.array([0.0, -out_w / 2.0])

    src = np.zeros((3, 2), dtype=np.float32)
    dst = np.zeros((3, 2), dtype=np.float32)
    src[0] = center
    src[1] = center + src_dir
    src[2] = _third_point(src[0].astype(np.float64), src[1].astype(np.float64))
    dst[0] = (out_w / 2.0, out_h / 2.0)
    dst[1] = dst[0] + dst_dir
    dst[2] = _third_point(dst[0].astype(np.float64), dst[1].astype(np.float64))
    return cv2.getAffineTransform(src, dst)


def apply_affine(points: np.ndarray, transform: np.ndarray) -> np.ndarray:
    """Apply a 2x3 affine to (N, 2) points."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ transform[:, :2].T + transform[:, 2]


def invert_affine(transform: np.ndarray) -> np.ndarray:
    """Inverse of a 2x3 affine as another 2x3 matrix."""
    full = np.vstack([transform, [0.0, 0.0, 1.0]])
    return np.linalg.inv(full)[:2]


def crop_instance(
    record: InstanceRecord,
    image: np.ndarray,
    schema: KeypointSchema,
    out_size: tuple[int, int] = (256, 256),
    augment: AugmentConfig | None = None,
    rng: np.random.Generator | None = None,
) -> CropResult:
    """Crop one instance to the output window, applying augmentation.

    Draws, in order: scale jitter, rotation, flip. Keypoints mapped outside
    the window get visibility 0. Pass an explicit generator to keep the
    call pure; otherwise one is derived from ``augment.seed``.

    Args:
        record: The instance to crop.
        image: Source image array (h, w, 3).
        schema: Supplies flip pairs for channel permutation.
        out_size: Output window (h, w).
        augment: Augmentation config; identity when None.
        rng: Explicit RNG state.

    Returns:
        CropResult with the warped patch, mapped keypoints, visibility, and
        the applied affine.
    """
    if augment is None:
        augment = AugmentConfig.identity()
    if rng is None:
        rng = np.random.default_rng(augment.seed)

    lo, hi = augment.scale_jitter
    scale = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    rotation = 0.0
    if augment.max_rotation_deg > 0:
        rotation = float(rng.uniform(-augment.max_rotation_deg, augment.max_rotation_deg))
    flip = bool(rng.random() < augment.flip_prob) if augment.flip_prob > 0 else False

    out_h, out_w = out_size
    transform = box_to_window_affine(record.bbox, out_size, rotation, scale)
    if flip:
        flip_mat = np.array([[-1.0, 0.0, out_w - 1.0], [0.0, 1.0, 0.0]])
        transform = flip_mat @ np.vstack([transform, [0.0, 0.0, 1.0]])

    patch = cv2.warpAffine(image, transform, (out_w, out_h), flags=cv2.INTER_LINEAR)

    keypoints, visibility = record.keypoint_array()
    keypoints = apply_affine(keypoints, transform)
    if flip:
        for a, b in schema.flip_pairs:
            keypoints[[a, b]] = keypoints[[b, a]]
            visibility[[a, b]] = visibility[[b, a]]

    inside = (
        (keypoints[:, 0] >= 0) & (keypoints[:, 0] < out_w)
        & (keypoints[:, 1] >= 0) & (keypoints[:, 1] < out_h)
    )
    visibility = np.where(inside, visibility, 0)
    keypoints = np.where(visibility[:, None] > 0, keypoints, 0.0)

    return CropResult(patch, keypoints, visibility, transform)


def flip_back(
    keypoints: np.ndarray, visibility: np.ndarray, schema: KeypointSchema, width: int
) -> tuple[np.ndarray, np.ndarray]:
    """Mirror window keypoints horizontally, permuting flip-pair channels."""
    kp = keypoints.copy()
    vis = visibility.copy()
    kp[:, 0] = (width - 1) - kp[:, 0]
    for a, b in schema.flip_pairs:
        kp[[a, b]] = kp[[b, a]]
        vis[[a, b]] = vis[[b, a]]
    return kp, vis
