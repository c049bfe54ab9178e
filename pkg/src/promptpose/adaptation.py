"""Spatial and feature level adaptation between prompts and image features.

All operations are pure tensor functions, channel-last, and accept either a
single instance or an extra leading batch dimension:

    presence_scores   (H, W, C) x (N, C)   -> (H, W, N)
    sample at keypoints (H, W, C) x (N, 2) -> (N, C)
    match_matrix      (N, C) x (N, C)      -> (N, N)

The two contrastive losses supervise them: the spatial loss is a masked MSE
between the upsampled presence score map and the Gaussian target heatmap,
and the feature loss is a symmetric softmax cross entropy over the keypoint
by prompt matching matrix with a diagonal target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

NORM_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total objective: pred + alpha1 * spatial + alpha2 * feature."""

    alpha1: float = 1.0
    alpha2: float = 1.0
    logit_scale: float = 1.0

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "logit_scale"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha weights must be >= 0")
        if self.logit_scale <= 0:
            raise ValueError(f"logit_scale must be > 0, got {self.logit_scale}")


def l2_normalize(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Row-wise L2 normalization; rows with norm < 1e-12 map to zero vectors."""
    return x / x.norm(dim=dim, keepdim=True).clamp_min(NORM_EPS)


def presence_scores(features: torch.Tensor, prompts: torch.Tensor) -> torch.Tensor:
    """Cosine similarity between every feature cell and every prompt.

    Args:
        features: (H, W, C) or (B, H, W, C) projected image features.
        prompts: (N, C) or (B, N, C) prompt embeddings.

    Returns:
        Score map (H, W, N) or (B, H, W, N) with entries in [-1, 1].
    """
    if features.shape[-1] != prompts.shape[-1]:
        raise ValueError(
            f"feature width {features.shape[-1]} != prompt width {prompts.shape[-1]}"
        )
    f = l2_normalize(features)
    e = l2_normalize(prompts)
    if features.dim() == 3 and prompts.dim() == 2:
        return torch.einsum("hwc,nc->hwn", f, e)
    if features.dim() == 4 and prompts.dim() == 3:
        return torch.einsum("bhwc,bnc->bhwn", f, e)
    raise ValueError(f"unsupported shapes {tuple(features.shape)} / {tuple(prompts.shape)}")


def masked_heatmap_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error over the cells of channels with mask 1.

    The mean runs over all (i, j, n) elements whose channel is masked in,
    pooled across the batch when one is present; returns 0 when every
    channel is masked out.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    mask = mask.to(pred.dtype)
    visible = mask.sum()
    if visible == 0:
        return pred.new_zeros(())
    h, w = pred.shape[-3], pred.shape[-2]
    sq = (pred - target) ** 2
    # mask broadcasts over the two spatial dims
    sq = sq * mask.reshape(*mask.shape[:-1], 1, 1, mask.shape[-1])
    return sq.sum() / (visible * h * w)


def spatial_loss(scores: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked MSE between the upsampled score map and the Gaussian target.

    Args:
        scores: (H, W, N) or (B, H, W, N) presence scores at feature stride.
        target: (h1, w1, N) or (B, h1, w1, N) Gaussian targets.
        mask: (N,) or (B, N) per-channel weights.

    Returns:
        Scalar loss; 0 when every channel is masked out.
    """
    if scores.dim() != target.dim():
        raise ValueError("scores and target must both be batched or both single")
    up = upsample_scores(scores, (target.shape[-3], target.shape[-2]))
    if up.shape != target.shape:
        raise ValueError(f"upsampled scores {tuple(up.shape)} vs target {tuple(target.shape)}")
    return masked_heatmap_mse(up, target, mask)


def upsample_scores(scores: torch.Tensor, target_size: tuple[int, int]) -> torch.Tensor:
    """Differentiable bilinear upsample of a channel-last score map."""
    single = scores.dim() == 3
    x = scores.unsqueeze(0) if single else scores
    src = x.shape[1:3]
    if target_size[0] < src[0] or target_size[1] < src[1]:
        raise ValueError(f"cannot upsample {tuple(src)} down to {target_size}")
    if tuple(src) != tuple(target_size):
        x = x.permute(0, 3, 1, 2)
        x = F.interpolate(x, size=target_size, mode="bilinear", align_corners=False)
        x = x.permute(0, 2, 3, 1)
    return x.squeeze(0) if single else x


def sample_keypoint_features(
    features: torch.Tensor,
    keypoints: torch.Tensor,
    visibility: torch.Tensor,
    stride: float,
) -> torch.Tensor:
    """Bilinearly sample feature vectors at ground-truth keypoint locations.

    A keypoint at input pixel (x, y) lands at feature-grid coordinate
    ((x + 0.5) / stride - 0.5, (y + 0.5) / stride - 0.5) and is interpolated
    from its four neighbours with border clamping. Rows of invisible
    keypoints are zero.

    Args:
        features: (H, W, C) or (B, H, W, C).
        keypoints: (N, 2) or (B, N, 2) in input pixels.
        visibility: (N,) or (B, N).
        stride: Input pixels per feature cell.

    Returns:
        (N, C) or (B, N, C) sampled features.
    """
    single = features.dim() == 3
    f = features.unsqueeze(0) if single else features
    kp = keypoints.unsqueeze(0) if single else keypoints
    vis = visibility.unsqueeze(0) if single else visibility
    b, h, w, c = f.shape
    n = kp.shape[1]

    grid_xy = (kp.to(f.dtype) + 0.5) / stride - 0.5
    # to grid_sample's normalized coordinates (align_corners=False)
    gx = (2.0 * grid_xy[..., 0] + 1.0) / w - 1.0
    gy = (2.0 * grid_xy[..., 1] + 1.0) / h - 1.0
    grid = torch.stack([gx, gy], dim=-1).reshape(b, 1, n, 2)

    sampled = F.grid_sample(
        f.permute(0, 3, 1, 2), grid,
        mode="bilinear", padding_mode="border", align_corners=False,
    )
    sampled = sampled.reshape(b, c, n).permute(0, 2, 1)
    sampled = sampled * (vis > 0).to(f.dtype).unsqueeze(-1)
    return sampled.squeeze(0) if single else sampled


def match_matrix(
    keypoint_features: torch.Tensor,
    prompts: torch.Tensor,
    logit_scale: float | torch.Tensor = 1.0,
) -> torch.Tensor:
    """Scaled cosine similarities between sampled keypoint features and prompts.

    Rows index keypoint features, columns index prompt embeddings; entries
    lie in [-scale, scale]; zero feature rows (invisible keypoints) give a
    zero row.
    """
    if keypoint_features.shape[-1] != prompts.shape[-1]:
        raise ValueError(
            f"feature width {keypoint_features.shape[-1]} != prompt width {prompts.shape[-1]}"
        )
    fk = l2_normalize(keypoint_features)
    e = l2_normalize(prompts)
    return logit_scale * (fk @ e.transpose(-1, -2))


def feature_loss(match: torch.Tensor, visibility: torch.Tensor) -> torch.Tensor:
    """Symmetric cross entropy on the matching matrix with a diagonal target.

    Rows and columns of invisible keypoints are excluded from both
    orientations; with no visible keypoint the loss is 0.

    Args:
        match: (N, N) or (B, N, N) matching scores.
        visibility: (N,) or (B, N) flags.

    Returns:
        Scalar loss (mean over batch when batched).
    """
    single = match.dim() == 2
    m = match.unsqueeze(0) if single else match
    vis = visibility.unsqueeze(0) if single else visibility

    losses = []
    for i in range(m.shape[0]):
        keep = (vis[i] > 0).nonzero(as_tuple=True)[0]
        if keep.numel() == 0:
            continue
        sub = m[i].index_select(0, keep).index_select(1, keep)
        labels = torch.arange(keep.numel(), device=sub.device)
        ce_rows = F.cross_entropy(sub, labels)
        ce_cols = F.cross_entropy(sub.transpose(0, 1), labels)
        losses.append(0.5 * (ce_rows + ce_cols))
    if not losses:
        return m.new_zeros(())
    return torch.stack(losses).mean()


def fuse(features: torch.Tensor, scores: torch.Tensor) -> torch.Tensor:
    """Concatenate backbone features and presence scores along channels.

    Args:
        features: (H, W, C) or (B, H, W, C) original image features.
        scores: (H, W, N) or (B, H, W, N) presence score map.

    Returns:
        (..., H, W, C + N) fused features.
    """
    if features.shape[:-1] != scores.shape[:-1]:
        raise ValueError(
            f"spatial mismatch {tuple(features.shape[:-1])} vs {tuple(scores.shape[:-1])}"
        )
    return torch.cat([features, scores.to(features.dtype)], dim=-1)


def total_loss(
    l_pred: torch.Tensor,
    l_spatial: torch.Tensor,
    l_feature: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted sum of the three loss components; NaN components are rejected."""
    for name, value in (("pred", l_pred), ("spatial", l_spatial), ("feature", l_feature)):
        v = float(value)
        if math.isnan(v) or math.isinf(v):
            raise ValueError(f"non-finite {name} loss: {v}")
    return l_pred + weights.alpha1 * l_spatial + weights.alpha2 * l_feature
