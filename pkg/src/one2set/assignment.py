"""Free-running rollout, matching costs and optimal target assignment.

Training never knows up front which keyphrase a given control code should
produce.  Each step we let every code free-run for K tokens, price each
(target, code) pair by how much probability the code already puts on the
target prefix, and solve a min-cost bipartite assignment per half so every
code ends up with exactly one target (possibly the null placeholder).
Gradients never flow through any of this; it only fixes the teacher-forcing
targets for the loss.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .corpus import NULL_ID, KeyphraseTarget, TargetSet, pad_target_set


@dataclass(frozen=True)
class RolloutDistributions:
    """Per-code step distributions and greedily chosen tokens.

    ``dists`` has shape (N, K, extended_vocab); ``tokens`` (N, K) holds the
    argmax choices that were fed back during the rollout.
    """

    dists: torch.Tensor
    tokens: torch.Tensor

    def __post_init__(self):
        if self.dists.dim() != 3 or self.tokens.shape != self.dists.shape[:2]:
            raise ValueError("rollout shapes are inconsistent")

    @property
    def num_codes(self) -> int:
        return self.dists.shape[0]

    @property
    def steps(self) -> int:
        return self.dists.shape[1]


def rollout(model, doc, k_steps: int) -> RolloutDistributions:
    """Greedy self-feeding decode for exactly ``k_steps`` per code, no
    teacher signal and no gradient tracking."""
    if k_steps < 1:
        raise ValueError("k_steps must be >= 1")
    with torch.no_grad():
        memory, src_extended, src_mask = model.encode_batch([doc])
        dists, tokens = model.free_run(memory, src_extended, src_mask, k_steps)
    return RolloutDistributions(dists=dists[0], tokens=tokens[0])


def matching_cost(target: KeyphraseTarget, dists) -> float:
    """Negative summed probability of the target prefix under one code's
    free-running distributions; null targets cost exactly zero."""
    if target.is_null:
        return 0.0
    k = len(dists)
    vocab_size = len(dists[0])
    s = min(len(target.ids), k)
    total = 0.0
    for t in range(s):
        token = target.ids[t]
        if token == NULL_ID:
            continue
        if token >= vocab_size:
            raise ValueError(
                f"target id {token} outside extended vocabulary of size {vocab_size}"
            )
        total += float(dists[t][token])
    return -total


def build_cost_matrix(targets: Sequence[KeyphraseTarget], dists: torch.Tensor) -> np.ndarray:
    """Rows are target slots, columns are codes of one half."""
    n = len(targets)
    if dists.shape[0] != n:
        raise ValueError("cost matrix must be square: one code per target slot")
    costs = np.zeros((n, n), dtype=np.float64)
    for r, target in enumerate(targets):
        if target.is_null:
            continue  # all-zero row
        for c in range(n):
            costs[r, c] = matching_cost(target, dists[c])
    return costs


@dataclass(frozen=True)
class Assignment:
    """Minimum-cost bijection between target slots and codes of one half."""

    code_for_slot: tuple[int, ...]
    total_cost: float

    def __post_init__(self):
        if sorted(self.code_for_slot) != list(range(len(self.code_for_slot))):
            raise ValueError("assignment is not a permutation")


def hungarian(costs: np.ndarray) -> Assignment:
    """Exact min-cost assignment via shortest augmenting paths with row and
    column potentials, O(n^3).  Scanning order is stable, so ties resolve
    deterministically for a given matrix."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2 or costs.shape[0] != costs.shape[1]:
        raise ValueError("cost matrix must be square")
    if not np.isfinite(costs).all():
        raise ValueError("cost matrix contains non-finite entries")
    n = costs.shape[0]
    if n == 0:
        return Assignment(code_for_slot=(), total_cost=0.0)

    INF = float("inf")
    u = [0.0] * (n + 1)          # row potentials
    v = [0.0] * (n + 1)          # column potentials
    row_for_col = [0] * (n + 1)  # 1-based; 0 means free
    way = [0] * (n + 1)

    for i in range(1, n + 1):
        row_for_col[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = row_for_col[j0]
            delta = INF
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = costs[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[row_for_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_for_col[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            row_for_col[j0] = row_for_col[j1]
            j0 = j1

    code_for_slot = [0] * n
    for j in range(1, n + 1):
        code_for_slot[row_for_col[j] - 1] = j - 1
    total = float(sum(costs[r, c] for r, c in enumerate(code_for_slot)))
    return Assignment(code_for_slot=tuple(code_for_slot), total_cost=total)


def brute_force_assignment(costs: np.ndarray) -> float:
    """Exhaustive minimum over all permutations; oracle for the solver."""
    import itertools

    costs = np.asarray(costs, dtype=np.float64)
    n = costs.shape[0]
    best = float("inf")
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        best = min(best, float(costs[rows, list(perm)].sum()))
    return best


@dataclass(frozen=True)
class AssignedTargets:
    """One target per code, code-indexed over the full set of N codes."""

    per_code: tuple[KeyphraseTarget, ...]
    present_assignment: Assignment
    absent_assignment: Assignment


def assign_targets(ts: TargetSet, roll: RolloutDistributions, num_codes: int,
                   counters=None) -> AssignedTargets:
    """Match padded present targets against the first half of the codes and
    padded absent targets against the second half, independently."""
    if num_codes % 2 != 0:
        raise ValueError("number of codes must be even")
    if roll.num_codes != num_codes:
        raise ValueError("rollout does not cover all codes")
    half = num_codes // 2
    present = pad_target_set(list(ts.present), half, counters)
    absent = pad_target_set(list(ts.absent), half, counters)

    pre_assign = hungarian(build_cost_matrix(present, roll.dists[:half]))
    abs_assign = hungarian(build_cost_matrix(absent, roll.dists[half:]))

    per_code: list[KeyphraseTarget | None] = [None] * num_codes
    for slot, code in enumerate(pre_assign.code_for_slot):
        per_code[code] = present[slot]
    for slot, code in enumerate(abs_assign.code_for_slot):
        per_code[half + code] = absent[slot]
    return AssignedTargets(
        per_code=tuple(per_code),
        present_assignment=pre_assign,
        absent_assignment=abs_assign,
    )


def assign_single_set(ts: TargetSet, roll: RolloutDistributions,
                      num_codes: int, counters=None) -> AssignedTargets:
    """Ablation: one joint matching over all codes and the union target set."""
    union = list(ts.present) + list(ts.absent)
    padded = pad_target_set(union, num_codes, counters)
    joint = hungarian(build_cost_matrix(padded, roll.dists))
    per_code: list[KeyphraseTarget | None] = [None] * num_codes
    for slot, code in enumerate(joint.code_for_slot):
        per_code[code] = padded[slot]
    return AssignedTargets(
        per_code=tuple(per_code),
        present_assignment=joint,
        absent_assignment=Assignment(code_for_slot=(), total_cost=0.0),
    )


def assign_sequential(ts: TargetSet, num_codes: int, counters=None) -> AssignedTargets:
    """Ablation: fixed sequential matching, target i goes to code i within
    each half (document order), no rollout involved."""
    half = num_codes // 2
    present = pad_target_set(list(ts.present), half, counters)
    absent = pad_target_set(list(ts.absent), half, counters)
    identity = Assignment(code_for_slot=tuple(range(half)), total_cost=0.0)
    return AssignedTargets(
        per_code=tuple(present + absent),
        present_assignment=identity,
        absent_assignment=identity,
    )


def assign_random(ts: TargetSet, num_codes: int, rng: random.Random,
                  counters=None) -> AssignedTargets:
    """Ablation: a uniformly random permutation per half."""
    half = num_codes // 2
    present = pad_target_set(list(ts.present), half, counters)
    absent = pad_target_set(list(ts.absent), half, counters)
    pre_perm = list(range(half))
    abs_perm = list(range(half))
    rng.shuffle(pre_perm)
    rng.shuffle(abs_perm)
    per_code: list[KeyphraseTarget | None] = [None] * num_codes
    for slot, code in enumerate(pre_perm):
        per_code[code] = present[slot]
    for slot, code in enumerate(abs_perm):
        per_code[half + code] = absent[slot]
    return AssignedTargets(
        per_code=tuple(per_code),
        present_assignment=Assignment(code_for_slot=tuple(pre_perm), total_cost=0.0),
        absent_assignment=Assignment(code_for_slot=tuple(abs_perm), total_cost=0.0),
    )


def dump_assignment_csv(path, rows):
    """Write the per-example debug view: code index, rolled-out tokens,
    assigned target, matching cost."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["example", "code", "rolled_out", "assigned_target", "cost"])
        writer.writerows(rows)
