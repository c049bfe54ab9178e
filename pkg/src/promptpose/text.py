"""Tokenizers and frozen text encoders.

The text encoder is an injected component: anything exposing the
:class:`TextEncoder` interface works. Two implementations are provided, a
causal transformer mirroring the released contrastive vision-language
architecture (so its published weights can be loaded, see
``clip_weights``), and a cheap hash-based random encoder for desk-scale
experiments where no pretrained weights are available.
"""

from __future__ import annotations

import gzip
import hashlib
import html
import re
from functools import lru_cache
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import torch
from torch import nn


def _stable_hash(data: str | bytes) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


class HashWordTokenizer:
    """Whitespace tokenizer with hash-derived, vocabulary-free token ids.

    A word always maps to the same id no matter which schema it appears in.
    Id 0 is padding and the two top ids are the start/end tokens (the end
    token must carry the largest id, which is how encoders locate it);
    words hash into the remaining range. A hash collision between two
    distinct words raises.
    """

    def __init__(self, vocab_size: int = 4096):
        if vocab_size < 16:
            raise ValueError("vocab_size too small")
        self.vocab_size = vocab_size
        self.pad_id = 0
        self.sot_id = vocab_size - 2
        self.eot_id = vocab_size - 1
        self._seen: dict[int, str] = {}

    def encode(self, text: str) -> list[int]:
        words = text.lower().split()
        ids = []
        for w in words:
            tid = 1 + _stable_hash(w) % (self.vocab_size - 3)
            claimed = self._seen.setdefault(tid, w)
            if claimed != w:
                raise ValueError(f"token id collision between {claimed!r} and {w!r}")
            ids.append(tid)
        return ids


@lru_cache()
def _bytes_to_unicode() -> dict[int, str]:
    """Reversible byte -> printable unicode map used by byte-level BPE."""
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + \
        list(range(ord("®"), ord("ÿ") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, [chr(c) for c in cs]))


_WORD_PATTERN = re.compile(
    r"<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[^\W\d_]+|\d|[^\s\w]+",
    re.IGNORECASE,
)


class BpeTokenizer:
    """Byte-level BPE tokenizer reading a standard merges file.

    The merges file (plain text or gzip, one merge per line, optional
    ``#version`` header) defines the vocabulary: 256 byte symbols, their
    end-of-word variants, one entry per merge, then the two specials.
    """

    def __init__(self, merges_path: str):
        opener = gzip.open if str(merges_path).endswith(".gz") else open
        with opener(merges_path, "rt", encoding="utf-8") as f:
            lines = f.read().split("\n")
        if lines and lines[0].startswith("#"):
            lines = lines[1:]
        merges = [tuple(line.split()) for line in lines if line.strip()]

        self.byte_encoder = _bytes_to_unicode()
        vocab = list(self.byte_encoder.values())
        vocab += [v + "</w>" for v in vocab]
        for merge in merges:
            vocab.append("".join(merge))
        vocab += ["<|startoftext|>", "<|endoftext|>"]
        self.encoder = {tok: i for i, tok in enumerate(vocab)}
        self.bpe_ranks = {m: i for i, m in enumerate(merges)}
        self.vocab_size = len(vocab)
        self.sot_id = self.encoder["<|startoftext|>"]
        self.eot_id = self.encoder["<|endoftext|>"]
        self.pad_id = 0
        self._cache: dict[str, list[str]] = {}

    def _bpe(self, token: str) -> list[str]:
        if token in self._cache:
            return self._cache[token]
        word = tuple(token[:-1]) + (token[-1] + "</w>",)
        while len(word) > 1:
            pairs = {(word[i], word[i + 1]) for i in range(len(word) - 1)}
            best = min(pairs, key=lambda p: self.bpe_ranks.get(p, float("inf")))
            if best not in self.bpe_ranks:
                break
            first, second = best
            merged = []
            i = 0
            while i < len(word):
                if i < len(word) - 1 and word[i] == first and word[i + 1] == second:
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(word[i])
                    i += 1
            word = tuple(merged)
        self._cache[token] = list(word)
        return self._cache[token]

    def encode(self, text: str) -> list[int]:
        text = html.unescape(html.unescape(text)).strip().lower()
        text = re.sub(r"\s+", " ", text)
        ids = []
        for token in _WORD_PATTERN.findall(text):
            token = "".join(self.byte_encoder[b] for b in token.encode("utf-8"))
            ids.extend(self.encoder[t] for t in self._bpe(token))
        return ids


@runtime_checkable
class TextEncoder(Protocol):
    """Frozen map from prompt token sequences to the joint embedding space."""

    d_text: int
    embed_dim: int
    context_length: int
    frozen: bool

    def encode(self, token_ids: torch.Tensor, prefix: torch.Tensor) -> torch.Tensor:
        """Embed N prompts.

        Args:
            token_ids: (N, context_length) int tensor; position 0 is the
                start token, positions 1..k are placeholders overwritten by
                the prefix vectors, the end token closes each sequence.
            prefix: (k, d_text) learnable prefix vectors, shared across the
                N prompts.

        Returns:
            (N, embed_dim) prompt embeddings.
        """
        ...


class QuickGELU(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * torch.sigmoid(1.702 * x)


class ResidualAttentionBlock(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(width, heads)
        self.ln_1 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, width * 4),
            QuickGELU(),
            nn.Linear(width * 4, width),
        )
        self.ln_2 = nn.LayerNorm(width)

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor | None = None) -> torch.Tensor:
        y = self.ln_1(x)
        y = self.attn(y, y, y, need_weights=False, attn_mask=attn_mask)[0]
        x = x + y
        x = x + self.mlp(self.ln_2(x))
        return x


class CausalTextTransformer(nn.Module):
    """Causal transformer text encoder with learnable-prefix injection.

    Architecture (token embedding, positional embedding, pre-norm residual
    blocks, final layer norm, linear projection into the joint space)
    matches the released contrastive language-image encoder so that its
    checkpoints can be mapped on. All parameters are frozen by default; the
    prefix vectors are inputs, so gradients still reach them.
    """

    def __init__(
        self,
        vocab_size: int,
        context_length: int = 77,
        width: int = 512,
        heads: int = 8,
        layers: int = 12,
        embed_dim: int = 512,
        frozen: bool = True,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.context_length = context_length
        self.d_text = width
        self.embed_dim = embed_dim
        self.token_embedding = nn.Embedding(vocab_size, width)
        self.positional_embedding = nn.Parameter(torch.empty(context_length, width))
        self.blocks = nn.ModuleList([ResidualAttentionBlock(width, heads) for _ in range(layers)])
        self.ln_final = nn.LayerNorm(width)
        self.text_projection = nn.Parameter(torch.empty(width, embed_dim))

        nn.init.normal_(self.token_embedding.weight, std=0.02)
        nn.init.normal_(self.positional_embedding, std=0.01)
        nn.init.normal_(self.text_projection, std=width**-0.5)

        self.frozen = frozen
        if frozen:
            self.freeze()

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.frozen = True

    def encode(self, token_ids: torch.Tensor, prefix: torch.Tensor) -> torch.Tensor:
        n, length = token_ids.shape
        if length != self.context_length:
            raise ValueError(f"token sequences of length {length}, expected {self.context_length}")
        k, d = prefix.shape
        if d != self.d_text:
            raise ValueError(f"prefix width {d} != text width {self.d_text}")
        if k + 2 > self.context_length:
            raise ValueError("prefix does not fit in the context window")

        dtype = self.text_projection.dtype
        prefix = prefix.to(dtype)
        x = self.token_embedding(token_ids)
        x = torch.cat(
            [x[:, :1], prefix.unsqueeze(0).expand(n, -1, -1), x[:, 1 + k:]], dim=1
        )
        x = x + self.positional_embedding

        mask = torch.full((length, length), float("-inf"), dtype=dtype)
        mask.triu_(1)
        x = x.permute(1, 0, 2)  # (L, N, D)
        for block in self.blocks:
            x = block(x, attn_mask=mask)
        x = x.permute(1, 0, 2)
        x = self.ln_final(x)

        # read out at each sequence's end token
        eot_pos = self._eot_positions(token_ids)
        x = x[torch.arange(n), eot_pos]
        return x @ self.text_projection

    @staticmethod
    def _eot_positions(token_ids: torch.Tensor) -> torch.Tensor:
        # conventionally the end token carries the largest id in the vocab
        return token_ids.argmax(dim=-1)


class RandomTextEncoder:
    """Deterministic random embeddings, for runs without pretrained text weights.

    Each distinct token sequence hashes to a fixed unit-scale embedding; the
    learnable prefix has no effect. Useful as the frozen text component in
    toy and overfit experiments.
    """

    def __init__(self, embed_dim: int = 32, d_text: int = 32, context_length: int = 16, seed: int = 0):
        self.embed_dim = embed_dim
        self.d_text = d_text
        self.context_length = context_length
        self.seed = seed
        self.frozen = True

    def encode(self, token_ids: torch.Tensor, prefix: torch.Tensor) -> torch.Tensor:
        rows = []
        for seq in token_ids.tolist():
            rng = np.random.default_rng((self.seed, _stable_hash(repr(seq))))
            rows.append(rng.standard_normal(self.embed_dim))
        values = np.stack(rows) / np.sqrt(self.embed_dim)
        return torch.as_tensor(values, dtype=prefix.dtype)


def pack_token_sequences(
    name_token_ids: Sequence[Sequence[int]],
    k: int,
    context_length: int,
    sot_id: int,
    eot_id: int,
    pad_id: int = 0,
) -> torch.Tensor:
    """Lay out [start, k prefix slots, name tokens, end, padding] sequences.

    The prefix slots are filled with the pad id; the encoder overwrites
    their embeddings with the learnable prefix vectors.
    """
    n = len(name_token_ids)
    out = torch.full((n, context_length), pad_id, dtype=torch.long)
    for i, ids in enumerate(name_token_ids):
        seq = [sot_id] + [pad_id] * k + list(ids) + [eot_id]
        if len(seq) > context_length:
            raise ValueError(
                f"prompt {i} needs {len(seq)} tokens, context is {context_length}"
            )
        out[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
    return out
