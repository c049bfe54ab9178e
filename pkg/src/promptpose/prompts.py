"""Pose-specific prompts: learnable prefix, encoding, and image-aware refinement.

Every keypoint gets one prompt made of k learnable prefix vectors (shared
across keypoints) followed by the tokenized keypoint name. A frozen text
encoder embeds the prompts once per optimization step; a lightweight
refiner (one self-attention layer over the N prompt rows, then gated
cross-attention against the image feature cells) produces the per-image
enhanced embedding.
"""

from __future__ import annotations

import torch
from torch import nn

from .schema import KeypointSchema
from .text import TextEncoder, pack_token_sequences


class PromptTemplate(nn.Module):
    """k learnable prefix vectors plus per-keypoint token sequences."""

    def __init__(
        self,
        keypoint_token_ids: list[list[int]],
        k: int,
        d_text: int,
        context_length: int,
        sot_id: int,
        eot_id: int,
        pad_id: int = 0,
        init_std: float = 0.02,
        seed: int | None = None,
    ):
        super().__init__()
        if k < 1:
            raise ValueError(f"need at least one prefix token, got k={k}")
        self.k = k
        self.keypoint_token_ids = tuple(tuple(ids) for ids in keypoint_token_ids)
        generator = None
        if seed is not None:
            generator = torch.Generator().manual_seed(seed)
        self.prefix = nn.Parameter(
            torch.normal(0.0, init_std, (k, d_text), generator=generator)
        )
        token_ids = pack_token_sequences(
            self.keypoint_token_ids, k, context_length, sot_id, eot_id, pad_id
        )
        self.register_buffer("token_ids", token_ids)

    @property
    def num_prompts(self) -> int:
        return len(self.keypoint_token_ids)


def build_prompts(
    schema: KeypointSchema,
    tokenizer,
    k: int = 8,
    d_text: int = 512,
    context_length: int = 77,
    init_std: float = 0.02,
    seed: int | None = None,
) -> PromptTemplate:
    """Build one prompt per schema keypoint: [prefix]*k + tokenized name.

    Raises if a keypoint name produces no tokens, naming the keypoint.
    """
    token_ids = []
    for name, phrase in zip(schema.keypoint_names, schema.keypoint_phrases()):
        ids = tokenizer.encode(phrase)
        if not ids:
            raise ValueError(f"keypoint {name!r} is not tokenizable")
        token_ids.append(ids)
    return PromptTemplate(
        token_ids, k, d_text, context_length,
        sot_id=tokenizer.sot_id, eot_id=tokenizer.eot_id, pad_id=tokenizer.pad_id,
        init_std=init_std, seed=seed,
    )


def encode_prompts(encoder: TextEncoder, template: PromptTemplate) -> torch.Tensor:
    """Embed the template's prompts, (N, embed_dim).

    The encoder is frozen, so gradients flow only into the prefix vectors.
    """
    if template.prefix.shape[1] != encoder.d_text:
        raise ValueError(
            f"prefix width {template.prefix.shape[1]} != encoder width {encoder.d_text}"
        )
    return encoder.encode(template.token_ids, template.prefix)


class PromptEmbeddingCache:
    """Reuse the encoded prompts while the prefix vectors are unchanged.

    The origin embedding depends only on (prefix values, token ids), so in
    an optimization loop it needs recomputing once per step, not once per
    image.
    """

    def __init__(self):
        self._prefix_snapshot: torch.Tensor | None = None
        self._value: torch.Tensor | None = None

    def get(self, encoder: TextEncoder, template: PromptTemplate) -> torch.Tensor:
        prefix = template.prefix.detach()
        if self._value is None or self._prefix_snapshot is None or \
                not torch.equal(self._prefix_snapshot, prefix):
            self._value = encode_prompts(encoder, template)
            self._prefix_snapshot = prefix.clone()
        return self._value


class PromptRefiner(nn.Module):
    """Relate prompts to each other, then to the image.

    Step 1 is a single pre-norm transformer layer (self-attention and a
    feed-forward, both residual) over the N prompt rows; no positional
    encoding, so the module is permutation-equivariant over keypoints.
    Step 2 attends from the prompts to the flattened image feature cells
    and adds the result through a learnable gate:

        out = step1(prompts) + gate * cross_attention(step1(prompts), image)

    The gate starts near zero so refinement begins as an identity map.

    Args:
        embed_dim: Prompt/image feature width.
        num_heads: Attention heads for both attention layers.
        gate_init: Initial value of the cross-attention gate.
        identity_init: Zero the self-attention and feed-forward output
            projections so step 1 starts as an exact identity.
    """

    def __init__(
        self,
        embed_dim: int,
        num_heads: int = 8,
        gate_init: float = 1e-4,
        identity_init: bool = False,
    ):
        super().__init__()
        self.embed_dim = embed_dim
        self.ln_1 = nn.LayerNorm(embed_dim)
        self.self_attn = nn.MultiheadAttention(embed_dim, num_heads, batch_first=True)
        self.ln_2 = nn.LayerNorm(embed_dim)
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, embed_dim * 4),
            nn.GELU(),
            nn.Linear(embed_dim * 4, embed_dim),
        )
        self.cross_attn = nn.MultiheadAttention(embed_dim, num_heads, batch_first=True)
        self.gate = nn.Parameter(torch.tensor(float(gate_init)))
        if identity_init:
            nn.init.zeros_(self.self_attn.out_proj.weight)
            nn.init.zeros_(self.self_attn.out_proj.bias)
            nn.init.zeros_(self.mlp[2].weight)
            nn.init.zeros_(self.mlp[2].bias)

    def forward(self, prompts: torch.Tensor, image_feature: torch.Tensor) -> torch.Tensor:
        """Enhance prompt embeddings with image context.

        Args:
            prompts: (N, C) or (B, N, C) origin prompt embeddings.
            image_feature: (H, W, C), (B, H, W, C) or (B, L, C) image
                features in the joint embedding space.

        Returns:
            Enhanced embeddings with the same shape as ``prompts``.
        """
        single = prompts.dim() == 2
        x = prompts.unsqueeze(0) if single else prompts
        img = image_feature
        if img.dim() == 3 and single:
            img = img.reshape(1, -1, img.shape[-1])
        elif img.dim() == 4:
            img = img.reshape(img.shape[0], -1, img.shape[-1])
        if img.shape[-1] != self.embed_dim:
            raise ValueError(f"image width {img.shape[-1]} != embed dim {self.embed_dim}")
        if img.shape[0] != x.shape[0]:
            raise ValueError(f"batch mismatch: {x.shape[0]} prompts vs {img.shape[0]} images")

        x = x + self.self_attn(self.ln_1(x), self.ln_1(x), self.ln_1(x), need_weights=False)[0]
        x = x + self.mlp(self.ln_2(x))
        enhanced = x + self.gate * self.cross_attn(x, img, img, need_weights=False)[0]
        return enhanced.squeeze(0) if single else enhanced
