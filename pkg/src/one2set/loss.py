"""Teacher-forced set losses with null-target down-weighting.

After assignment, every code owns exactly one target (possibly the null
placeholder).  The loss re-decodes each code with teacher forcing on its
assigned target and sums weighted negative log-likelihoods, where a null
token's term is scaled by the half's lambda factor to counter the class
imbalance between real phrases and padding slots.  The assignment itself
is a constant of the forward pass; no gradient reaches the rollout or the
matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .corpus import BOS_ID, NULL_ID, PAD_ID
from .model import SetTransformer


@dataclass
class LossConfig:
    lambda_pre: float = 0.2
    lambda_abs: float = 0.1
    mode: str = "separate"      # separate | single
    forcing: str = "teacher"    # teacher | student

    def __post_init__(self):
        if not 0.0 <= self.lambda_pre <= 1.0 or not 0.0 <= self.lambda_abs <= 1.0:
            raise ValueError("lambda factors must lie in [0, 1]")
        if self.mode not in ("separate", "single"):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.forcing not in ("teacher", "student"):
            raise ValueError(f"unknown forcing scheme {self.forcing!r}")


@dataclass
class LossBreakdown:
    total: torch.Tensor
    present_half: torch.Tensor
    absent_half: torch.Tensor
    null_ratio_present: float
    null_ratio_absent: float


def pack_targets(assigned_per_example, device=None):
    """Stack per-code targets into (B, N, T) ids padded with PAD."""
    batch = [a.per_code for a in assigned_per_example]
    n = len(batch[0])
    t_max = max(len(t.ids) for codes in batch for t in codes)
    out = torch.full((len(batch), n, t_max), PAD_ID, dtype=torch.long, device=device)
    for b, codes in enumerate(batch):
        for c, target in enumerate(codes):
            out[b, c, : len(target.ids)] = torch.tensor(target.ids, dtype=torch.long)
    return out


def step_weights(targets: torch.Tensor, half: int, lambda_pre: float,
                 lambda_abs: float, single: bool = False) -> torch.Tensor:
    """Per-token weights: 0 on padding, the half's lambda on null tokens,
    1 elsewhere.  In single mode one lambda applies to every code."""
    weights = torch.ones_like(targets, dtype=torch.get_default_dtype())
    weights[targets == PAD_ID] = 0.0
    is_null = targets == NULL_ID
    if single:
        weights[is_null] = lambda_pre
    else:
        weights[:, :half][is_null[:, :half]] = lambda_pre
        weights[:, half:][is_null[:, half:]] = lambda_abs
    return weights


def weighted_nll(dists: torch.Tensor, targets: torch.Tensor,
                 weights: torch.Tensor) -> torch.Tensor:
    """-sum_t w_t * log p_t(y_t) per code, summed over codes and steps and
    averaged over examples.  dists: (B, N, T, V); targets, weights: (B, N, T)."""
    probs = dists.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    nll = -probs.clamp_min(1e-12).log() * weights
    return nll.sum(dim=(1, 2)).mean()


def _teacher_forced_dists(model: SetTransformer, docs, targets: torch.Tensor,
                          codes=None) -> torch.Tensor:
    memory, ext, mask = model.encode_batch(docs)
    b, n, t = targets.shape
    bos = torch.full((b, n, 1), BOS_ID, dtype=torch.long, device=targets.device)
    prefix = torch.cat([bos, targets[:, :, :-1]], dim=-1)
    return model.decode_prefixes(memory, ext, mask, prefix, codes=codes)


def _student_forced_dists(model: SetTransformer, docs, steps: int,
                          codes=None) -> torch.Tensor:
    memory, ext, mask = model.encode_batch(docs)
    dists, _ = model.free_run(memory, ext, mask, steps, codes=codes)
    return dists


def set_loss(model: SetTransformer, docs, assigned_per_example,
             cfg: LossConfig) -> LossBreakdown:
    """Loss over all codes for a batch of documents with fixed assignments."""
    targets = pack_targets(assigned_per_example)
    half = model.cfg.num_codes // 2
    weights = step_weights(targets, half, cfg.lambda_pre, cfg.lambda_abs,
                           single=cfg.mode == "single")
    if cfg.forcing == "teacher":
        dists = _teacher_forced_dists(model, docs, targets)
    else:
        dists = _student_forced_dists(model, docs, targets.shape[-1])

    probs = dists.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    nll = -probs.clamp_min(1e-12).log() * weights
    present = nll[:, :half].sum(dim=(1, 2)).mean()
    absent = nll[:, half:].sum(dim=(1, 2)).mean()

    null_first = (targets[:, :half, 0] == NULL_ID).float().mean().item()
    null_second = (targets[:, half:, 0] == NULL_ID).float().mean().item()
    return LossBreakdown(
        total=present + absent,
        present_half=present,
        absent_half=absent,
        null_ratio_present=null_first,
        null_ratio_absent=null_second,
    )


def one2seq_loss(model: SetTransformer, docs, sequences) -> torch.Tensor:
    """Token-level NLL of the concatenated-keyphrase sequences, decoded
    with the single zeroed code of the baseline mode."""
    t_max = max(len(s) for s in sequences)
    targets = torch.full((len(docs), 1, t_max), PAD_ID, dtype=torch.long)
    for i, seq in enumerate(sequences):
        targets[i, 0, : len(seq)] = torch.tensor(seq, dtype=torch.long)
    dists = _teacher_forced_dists(model, docs, targets, codes=[0])
    weights = torch.ones_like(targets, dtype=dists.dtype)
    weights[targets == PAD_ID] = 0.0
    return weighted_nll(dists, targets, weights)
