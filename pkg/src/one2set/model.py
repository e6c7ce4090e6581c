"""Control-code transformer that decodes N keyphrase slots in parallel.

The decoder input at step t for code n is the sum of the previous token's
word embedding, the sinusoidal position embedding for t and the learned
code embedding (one vector per slot).  Codes are folded onto the batch
axis, so a slot's distributions depend only on the source memory, its own
prefix and its own code vector; slots never attend to each other.  The
output distribution mixes a generation softmax over the fixed vocabulary
with a copy distribution scattered from the last decoder layer's cross
attention onto per-document extended ids, through a learned gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import BOS_ID, PAD_ID, Document


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    feedforward_dim: int = 128
    embed_dim: int = 64
    num_codes: int = 8
    max_phrase_len: int = 8
    dropout: float = 0.1
    max_source_len: int = 512

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must be divisible by heads")
        if self.num_codes % 2 != 0:
            raise ValueError("num_codes must be even (half present, half absent)")
        if self.max_phrase_len < 2:
            raise ValueError("max_phrase_len must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def sinusoidal_table(max_len: int, dim: int) -> torch.Tensor:
    position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim)
    )
    table = torch.zeros(max_len, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: (dim + 1) // 2])
    return table.to(torch.float32)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query, key, value, key_mask=None, causal=False):
        """key_mask: bool (B, S), True for real positions.  Returns the
        attended values and the head-averaged attention weights."""
        b, tq, d = query.shape
        tk = key.shape[1]
        q = self.q_proj(query).view(b, tq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(key).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(value).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if causal:
            future = torch.triu(
                torch.ones(tq, tk, dtype=torch.bool, device=scores.device), 1
            )
            scores = scores.masked_fill(future, float("-inf"))
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        weights = self.dropout(weights)
        out = (weights @ v).transpose(1, 2).reshape(b, tq, d)
        return self.out_proj(out), weights.mean(dim=1)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float):
        super().__init__()
        self.lin1 = nn.Linear(dim, hidden)
        self.lin2 = nn.Linear(hidden, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.lin2(self.dropout(F.relu(self.lin1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.model_dim, cfg.heads, cfg.dropout)
        self.ff = FeedForward(cfg.model_dim, cfg.feedforward_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.model_dim)
        self.norm2 = nn.LayerNorm(cfg.model_dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, key_mask):
        h = self.norm1(x)
        attended, _ = self.self_attn(h, h, h, key_mask=key_mask)
        x = x + self.dropout(attended)
        x = x + self.dropout(self.ff(self.norm2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.model_dim, cfg.heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.model_dim, cfg.heads, cfg.dropout)
        self.ff = FeedForward(cfg.model_dim, cfg.feedforward_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.model_dim)
        self.norm2 = nn.LayerNorm(cfg.model_dim)
        self.norm3 = nn.LayerNorm(cfg.model_dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, src_mask):
        h = self.norm1(x)
        attended, _ = self.self_attn(h, h, h, causal=True)
        x = x + self.dropout(attended)
        attended, cross_weights = self.cross_attn(
            self.norm2(x), memory, memory, key_mask=src_mask
        )
        x = x + self.dropout(attended)
        x = x + self.dropout(self.ff(self.norm3(x)))
        return x, cross_weights


class SetTransformer(nn.Module):
    """Encoder-decoder over N learned control codes with a copy path."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.word_emb = nn.Embedding(cfg.vocab_size, cfg.embed_dim, padding_idx=PAD_ID)
        self.code_emb = nn.Embedding(cfg.num_codes, cfg.embed_dim)
        self.in_proj = (
            nn.Linear(cfg.embed_dim, cfg.model_dim, bias=False)
            if cfg.embed_dim != cfg.model_dim
            else None
        )
        table_len = max(cfg.max_source_len, cfg.max_phrase_len) + 2
        self.register_buffer("pos_table", sinusoidal_table(table_len, cfg.embed_dim))
        self.encoder_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.enc_norm = nn.LayerNorm(cfg.model_dim)
        self.decoder_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.layers))
        self.dec_norm = nn.LayerNorm(cfg.model_dim)
        self.out_proj = nn.Linear(cfg.model_dim, cfg.vocab_size)
        self.gate = nn.Linear(3 * cfg.model_dim, 1)
        self.emb_dropout = nn.Dropout(cfg.dropout)
        self._init_embeddings()

    def _init_embeddings(self):
        bound = 1.0 / math.sqrt(self.cfg.embed_dim)
        nn.init.uniform_(self.word_emb.weight, -bound, bound)
        nn.init.uniform_(self.code_emb.weight, -bound, bound)
        with torch.no_grad():
            self.word_emb.weight[PAD_ID].zero_()

    # ------------------------------------------------------------------
    # encoder
    # ------------------------------------------------------------------

    def encode_batch(self, docs: Sequence[Document], counters=None):
        """Pad, truncate to the configured max source length and encode.

        Returns (memory (B,S,D), extended_ids (B,S), src_mask (B,S))."""
        cfg = self.cfg
        truncated = [d.source_ids[: cfg.max_source_len] for d in docs]
        if counters is not None:
            for d in docs:
                if len(d.source_ids) > cfg.max_source_len:
                    counters["truncated_sources"] += 1
        max_len = max(len(t) for t in truncated)
        device = self.word_emb.weight.device
        src = torch.full((len(docs), max_len), PAD_ID, dtype=torch.long, device=device)
        ext = torch.full((len(docs), max_len), PAD_ID, dtype=torch.long, device=device)
        mask = torch.zeros(len(docs), max_len, dtype=torch.bool, device=device)
        for i, (d, ids) in enumerate(zip(docs, truncated)):
            n = len(ids)
            src[i, :n] = torch.tensor(ids, dtype=torch.long)
            ext[i, :n] = torch.tensor(d.extended_ids[: cfg.max_source_len], dtype=torch.long)
            mask[i, :n] = True
        memory = self._encode_ids(src, mask)
        return memory, ext, mask

    def _encode_ids(self, src: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.word_emb(src) + self.pos_table[: src.shape[1]].to(self.word_emb.weight.dtype)
        if self.in_proj is not None:
            x = self.in_proj(x)
        x = self.emb_dropout(x)
        for layer in self.encoder_layers:
            x = layer(x, mask)
        return self.enc_norm(x)

    def encode(self, doc: Document, counters=None) -> torch.Tensor:
        """Single-document encoder surface: one hidden row per source token."""
        memory, _, _ = self.encode_batch([doc], counters)
        return memory[0]

    # ------------------------------------------------------------------
    # decoder
    # ------------------------------------------------------------------

    def decoder_input(self, prev_token: int, step: int, code: int) -> torch.Tensor:
        """Input vector for one code at one step: word embedding of the
        previous token, plus the sinusoidal embedding of the step, plus the
        code embedding (steps are 1-based, y_0 is BOS)."""
        if step < 1:
            raise ValueError("steps are 1-based")
        if not 0 <= code < self.cfg.num_codes:
            raise ValueError("code index out of range")
        device = self.word_emb.weight.device
        word = self.word_emb(torch.tensor(prev_token, device=device))
        pos = self.pos_table[step - 1].to(word.dtype)
        return word + pos + self.code_emb(torch.tensor(code, device=device))

    def _code_indices(self, n: int, codes) -> torch.Tensor:
        device = self.word_emb.weight.device
        if codes is None:
            if n != self.cfg.num_codes:
                raise ValueError("prefix row count must equal the code count")
            return torch.arange(n, device=device)
        codes = torch.as_tensor(codes, dtype=torch.long, device=device)
        if codes.numel() != n:
            raise ValueError("need exactly one code index per prefix row")
        return codes

    def _prefix_embeddings(self, prefix: torch.Tensor, codes) -> torch.Tensor:
        """prefix: (B, N, T) previous tokens (BOS first).  Output (B*N, T, D)."""
        b, n, t = prefix.shape
        flat = prefix.reshape(b * n, t)
        x = self.word_emb(flat) + self.pos_table[:t].to(self.word_emb.weight.dtype)
        x = x + self.code_emb(codes).repeat(b, 1).unsqueeze(1)
        if self.in_proj is not None:
            x = self.in_proj(x)
        return self.emb_dropout(x)

    def decode_prefixes(self, memory, src_extended, src_mask, prefix,
                        gate_override: float | None = None,
                        codes=None) -> torch.Tensor:
        """Distributions for every code and step given per-code prefixes.

        prefix: (B, N, T) token ids fed to the decoder (prefix[:, :, 0] is
        BOS).  Returns (B, N, T, extended_vocab) where extended_vocab is
        vocab_size plus the batch-wide maximum OOV count; slots beyond a
        document's own OOV words always carry exactly zero mass.
        """
        b, n, t = prefix.shape
        inp = self._prefix_embeddings(prefix, self._code_indices(n, codes))
        mem = memory.repeat_interleave(n, dim=0)
        mask = src_mask.repeat_interleave(n, dim=0)
        x, cross = inp, None
        for layer in self.decoder_layers:
            x, cross = layer(x, mem, mask)
        h = self.dec_norm(x)

        gen = torch.softmax(self.out_proj(h), dim=-1)
        context = cross @ mem
        g = torch.sigmoid(self.gate(torch.cat([h, context, inp], dim=-1)))
        if gate_override is not None:
            g = torch.full_like(g, gate_override)

        max_oov = int(src_extended.max().item()) + 1 - self.cfg.vocab_size
        extended = self.cfg.vocab_size + max(max_oov, 0)
        dist = torch.zeros(b * n, t, extended, dtype=gen.dtype, device=gen.device)
        dist[:, :, : self.cfg.vocab_size] = g * gen
        copy_index = src_extended.repeat_interleave(n, dim=0)
        copy_index = copy_index.unsqueeze(1).expand(b * n, t, copy_index.shape[-1])
        copy_weights = cross * mask.unsqueeze(1).to(cross.dtype)
        dist.scatter_add_(2, copy_index, (1 - g) * copy_weights)
        return dist.view(b, n, t, extended)

    def decode_step(self, memory, src_extended, src_mask, prefix,
                    gate_override: float | None = None,
                    codes=None) -> torch.Tensor:
        """Distribution at the latest step only: (B, N, extended_vocab)."""
        dists = self.decode_prefixes(memory, src_extended, src_mask, prefix,
                                     gate_override=gate_override, codes=codes)
        return dists[:, :, -1]

    def free_run(self, memory, src_extended, src_mask, steps: int,
                 gate_override: float | None = None, codes=None):
        """Greedy self-feeding decode for a fixed number of steps.

        Returns (dists (B, N, steps, extended_vocab), tokens (B, N, steps)).
        Ties in the argmax resolve to the lowest token id.
        """
        b = memory.shape[0]
        n = self.cfg.num_codes if codes is None else len(codes)
        prefix = torch.full((b, n, 1), BOS_ID, dtype=torch.long, device=memory.device)
        all_dists, all_tokens = [], []
        for _ in range(steps):
            dist = self.decode_step(memory, src_extended, src_mask, prefix,
                                    gate_override=gate_override, codes=codes)
            token = dist.argmax(dim=-1)
            all_dists.append(dist)
            all_tokens.append(token)
            prefix = torch.cat([prefix, token.unsqueeze(-1)], dim=-1)
        return torch.stack(all_dists, dim=2), torch.stack(all_tokens, dim=2)

    def step_distributions(self, doc: Document, prefixes: Sequence[Sequence[int]],
                           gate_override: float | None = None) -> torch.Tensor:
        """Single-document surface for one decoding step: each code's prefix
        is the tokens generated so far (without BOS); all prefixes must have
        equal length.  Returns (N, extended_vocab)."""
        if len(prefixes) != self.cfg.num_codes:
            raise ValueError("need one prefix per code")
        lengths = {len(p) for p in prefixes}
        if len(lengths) != 1:
            raise ValueError("prefixes must share a common length")
        memory, ext, mask = self.encode_batch([doc])
        prefix = torch.tensor(
            [[BOS_ID] + list(p) for p in prefixes], dtype=torch.long
        ).unsqueeze(0)
        return self.decode_step(memory, ext, mask, prefix, gate_override=gate_override)[0]
