"""Closed-vocabulary action text encoding.

Sentences are lowercased, whitespace-tokenized, mapped through a fixed
vocabulary (unknown words become UNK), and terminated with EOS. A small
transformer encoder aggregates each sentence; the feature at the EOS
position is the sentence embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as N
from .layers import (
    encoder_block,
    init_encoder_block,
    init_layernorm,
    init_linear,
    init_normal,
    layer_norm,
    linear,
    sinusoidal_embedding,
)
from .numerics import Tensor
from .stateseq import ActionTrack

PAD_ID = 0
UNK_ID = 1
EOS_ID = 2
_RESERVED = 3


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise ValueError("vocabulary: duplicate words")
        for w in self.words:
            if not w or any(ch.isspace() for ch in w) or w != w.lower():
                raise ValueError(f"vocabulary: invalid word {w!r}")

    @property
    def size(self) -> int:
        return _RESERVED + len(self.words)

    def id_of(self, word: str) -> int:
        try:
            return _RESERVED + self.words.index(word)
        except ValueError:
            return UNK_ID

    @classmethod
    def from_corpus(cls, sentences) -> "Vocabulary":
        seen = set()
        for s in sentences:
            seen.update(s.lower().split())
        return cls(words=tuple(sorted(seen)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.words) + ("\n" if self.words else ""))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln]
        return cls(words=tuple(lines))


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Lowercase, split on whitespace, map through vocab, append EOS."""
    ids = [vocab.id_of(w) for w in text.lower().split()]
    ids.append(EOS_ID)
    return ids


@dataclass(frozen=True)
class AggregatorConfig:
    layers: int = 2
    heads: int = 4
    width: int = 128
    out_dim: int = 128
    max_tokens: int = 32


def init_aggregator(vocab_size: int, cfg: AggregatorConfig, rng) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    init_normal(params, "agg.embed", (vocab_size, cfg.width), rng)
    params["agg.embed"].data[PAD_ID] = 0.0
    for i in range(cfg.layers):
        init_encoder_block(params, f"agg.blk{i}", cfg.width, rng)
    init_layernorm(params, "agg.ln_f", cfg.width)
    init_linear(params, "agg.out", cfg.width, cfg.out_dim, rng)
    return params


def freeze_pad_row(grads: dict[str, np.ndarray]) -> None:
    """Zero the PAD row's gradient so its embedding stays at zero."""
    g = grads.get("agg.embed")
    if g is not None:
        g[PAD_ID] = 0.0


def encode_sentences(
    token_lists: list[list[int]],
    params: dict[str, Tensor],
    cfg: AggregatorConfig,
) -> Tensor:
    """Embed a list of token id sentences; returns (n, out_dim).

    Sentences are grouped by length so each group runs as one batch; outputs
    are reassembled in input order, so per-sentence results do not depend on
    what else is in the list.
    """
    by_len: dict[int, list[int]] = {}
    for i, toks in enumerate(token_lists):
        by_len.setdefault(len(toks), []).append(i)
    pieces: list[Tensor] = []
    order: list[int] = []
    for length in sorted(by_len):
        idxs = by_len[length]
        ids = np.array([token_lists[i] for i in idxs], dtype=np.int64)  # (G, L)
        x = N.gather(params["agg.embed"], ids)  # (G, L, width)
        pos = sinusoidal_embedding(np.arange(length), cfg.width)
        x = N.add(x, pos)
        for b in range(cfg.layers):
            x = encoder_block(params, f"agg.blk{b}", x, cfg.heads)
        x = layer_norm(params, "agg.ln_f", x)
        eos_feat = x[:, length - 1, :]  # EOS is always the final token
        pieces.append(linear(params, "agg.out", eos_feat))
        order.extend(idxs)
    stacked = N.concat(pieces, axis=0) if len(pieces) > 1 else pieces[0]
    inverse = np.argsort(np.array(order))
    return N.gather(stacked, inverse)


def encode_action_batch(
    tracks: list[ActionTrack],
    m_action: np.ndarray,
    params: dict[str, Tensor],
    cfg: AggregatorConfig,
    vocab: Vocabulary,
) -> Tensor:
    """Encode a batch of action tracks into (B, A, T, out_dim).

    Cells with m_a = 0 come out as zero vectors. Identical sentences anywhere
    in the batch are encoded once and shared.
    """
    m = np.asarray(m_action, dtype=np.float32)
    bsz = len(tracks)
    if m.ndim != 3 or m.shape[0] != bsz:
        raise ValueError(f"encode_action_batch: mask shape {m.shape} does not match batch {bsz}")
    a, t = m.shape[1], m.shape[2]
    unique: dict[tuple[int, ...], int] = {}
    token_lists: list[list[int]] = []
    cell_index = np.full((bsz, a, t), -1, dtype=np.int64)
    for bi, track in enumerate(tracks):
        if track.layout.num_actionable != a or track.num_timesteps != t:
            raise ValueError("encode_action_batch: track shape does not match mask")
        for ai in range(a):
            for ti in range(t):
                if m[bi, ai, ti] != 1.0:
                    continue
                toks = tokenize(track.labels[ai][ti], vocab)
                if len(toks) > cfg.max_tokens:
                    raise ValueError(
                        f"action sentence too long at cell (batch {bi}, agent {ai}, t {ti}): "
                        f"{len(toks)} tokens > max {cfg.max_tokens}"
                    )
                key = tuple(toks)
                if key not in unique:
                    unique[key] = len(token_lists)
                    token_lists.append(toks)
                cell_index[bi, ai, ti] = unique[key]
    zero_row = Tensor(np.zeros((1, cfg.out_dim), dtype=np.float32))
    if token_lists:
        table = N.concat([encode_sentences(token_lists, params, cfg), zero_row], axis=0)
    else:
        table = zero_row
    idx = np.where(cell_index >= 0, cell_index, len(token_lists))
    return N.gather(table, idx)  # (B, A, T, out_dim)


def encode_actions(
    track: ActionTrack,
    m_action: np.ndarray,
    params: dict[str, Tensor],
    cfg: AggregatorConfig,
    vocab: Vocabulary,
) -> Tensor:
    """Single-track convenience wrapper; returns (A, T, out_dim)."""
    m = np.asarray(m_action, dtype=np.float32)
    out = encode_action_batch([track], m[None], params, cfg, vocab)
    return out[0]
