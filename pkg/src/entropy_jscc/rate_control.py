"""Feature-map selection (P1), pruning-ratio choice (P2), l1 pruning and
receiver-side restoration.

P1 outputs a categorical choice over how many of the ``C`` concatenated
maps to activate; the ``k`` maps with the highest pairwise normalised
entropy are switched on. P2 picks one pruning ratio for all activated
maps. Ties are broken toward the lowest index everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import SNR_SCALE

DEFAULT_RATIOS = (0.0, 0.2, 0.25, 0.3, 0.35)


class FramingError(ValueError):
    """Index matrix rows disagree with the received kept length."""


def pruned_count(ratio: float, length: int) -> int:
    """Entries removed per row: ``ratio * length`` rounded half-up."""
    return int(math.floor(ratio * length + 0.5))


def kept_length(ratio: float, length: int) -> int:
    return length - pruned_count(ratio, length)


# ----------------------------------------------------------------------
# data records


@dataclass
class ActivationMask:
    m: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.int8)
        if self.m.ndim != 1 or not np.all((self.m == 0) | (self.m == 1)):
            raise ValueError("mask must be a binary vector")

    @property
    def c_hat(self) -> int:
        return int(self.m.sum())

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.m)


@dataclass
class PruneRecord:
    z2: np.ndarray
    ratio: float
    index_matrix: np.ndarray  # 1 marks a pruned position

    @property
    def kept_length(self) -> int:
        return self.z2.shape[1]


@dataclass
class PolicyChoice:
    logits: torch.Tensor
    onehot: torch.Tensor
    sampled: bool

    @property
    def index(self) -> torch.Tensor:
        return self.onehot.detach().argmax(dim=-1)


# ----------------------------------------------------------------------
# categorical decisions


def hard_onehot(scores: torch.Tensor) -> torch.Tensor:
    """One-hot of the argmax, first maximum wins."""
    idx = scores.argmax(dim=-1, keepdim=True)
    return torch.zeros_like(scores).scatter_(-1, idx, 1.0)


def gumbel_softmax_st(
    logits: torch.Tensor, temperature: float, generator: torch.Generator | None = None
) -> torch.Tensor:
    """Straight-through Gumbel-Softmax: exact one-hot forward, soft gradient backward."""
    u = torch.rand(logits.shape, generator=generator, dtype=logits.dtype, device=logits.device)
    u = u.clamp(torch.finfo(logits.dtype).tiny, 1.0 - torch.finfo(logits.dtype).eps)
    gumbel = -torch.log(-torch.log(u))
    soft = torch.softmax((logits + gumbel) / temperature, dim=-1)
    return hard_onehot(soft) - soft.detach() + soft


def argmax_st(probs: torch.Tensor) -> torch.Tensor:
    """Straight-through argmax on probabilities."""
    return hard_onehot(probs) - probs.detach() + probs


def pair_entropies(h_norm: torch.Tensor) -> torch.Tensor:
    """Sum of the two constituent maps' normalised entropies, ``(..., 2C) -> (..., C)``."""
    return h_norm.reshape(*h_norm.shape[:-1], -1, 2).sum(dim=-1)


def entropy_ranks(pair_h: torch.Tensor) -> torch.Tensor:
    """Rank 0 = highest pairwise entropy; equal values rank by lower index."""
    order = torch.sort(-pair_h.detach(), dim=-1, stable=True).indices
    ranks = torch.empty_like(order)
    ranks.scatter_(-1, order, torch.arange(order.shape[-1], device=order.device).expand_as(order))
    return ranks


def mask_from_count(count_onehot: torch.Tensor, ranks: torch.Tensor) -> torch.Tensor:
    """Activation mask from a one-hot over counts ``0..C``.

    ``mask[i] = sum_{k > rank[i]} onehot[k]``, so the forward value is binary
    and gradients reach every count option that would switch map ``i`` on.
    """
    at_least = torch.flip(torch.cumsum(torch.flip(count_onehot, [-1]), dim=-1), [-1])
    return torch.gather(at_least, -1, ranks + 1)


def top_k_mask(pair_h, k: int) -> np.ndarray:
    """Activate the ``k`` concatenated maps with the highest pairwise entropy."""
    pair_h = torch.as_tensor(np.asarray(pair_h, dtype=np.float64))
    n = pair_h.shape[-1]
    if not 0 <= k <= n:
        raise ValueError(f"k must be in [0, {n}]")
    ranks = entropy_ranks(pair_h)
    return (ranks < k).to(torch.int8).numpy()


# ----------------------------------------------------------------------
# policy networks


class PolicyP1(nn.Module):
    """Chooses how many concatenated maps to activate."""

    def __init__(self, num_maps: int = 16, hidden: int = 64):
        super().__init__()
        self.num_maps = num_maps
        self.mlp = nn.Sequential(
            nn.Linear(num_maps + 1, hidden),
            nn.ReLU(),
            nn.Linear(hidden, num_maps // 2 + 1),
        )

    def features(self, z: torch.Tensor, h_norm: torch.Tensor, snr_db: torch.Tensor) -> torch.Tensor:
        # row mean of [z_i, h_i]: one scalar per map
        rows = torch.cat([z, h_norm.unsqueeze(-1)], dim=-1).mean(dim=-1)
        return torch.cat([rows, (snr_db / SNR_SCALE).reshape(-1, 1).to(rows.dtype)], dim=-1)

    def forward(self, z, h_norm, snr_db):
        return self.mlp(self.features(z, h_norm, snr_db))


class PolicyP2(nn.Module):
    """Chooses the pruning ratio for the activated maps."""

    def __init__(self, num_pairs: int = 8, num_ratios: int = 5, hidden: int = 64):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(num_pairs + 1, hidden),
            nn.ReLU(),
            nn.Linear(hidden, num_ratios),
        )

    def forward(self, z1: torch.Tensor, snr_db: torch.Tensor) -> torch.Tensor:
        """Logits over ratios. ``z1`` is ``(B, C, L)`` with inactive rows zeroed."""
        rows = z1.mean(dim=-1)
        x = torch.cat([rows, (snr_db / SNR_SCALE).reshape(-1, 1).to(rows.dtype)], dim=-1)
        return self.mlp(x)


def choose(logits: torch.Tensor, mode: str, temperature: float = 1.0, generator=None) -> PolicyChoice:
    """P1 decision: Gumbel sample in ``"sample"`` mode, argmax in ``"argmax"`` mode."""
    if mode == "sample":
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        return PolicyChoice(logits, gumbel_softmax_st(logits, temperature, generator), True)
    if mode == "argmax":
        return PolicyChoice(logits, hard_onehot(logits), False)
    raise ValueError(f"unknown mode {mode!r}")


def choose_ratio(logits: torch.Tensor, mode: str) -> PolicyChoice:
    """P2 decision on softmax probabilities (straight-through when training)."""
    probs = torch.softmax(logits, dim=-1)
    if mode == "sample":
        return PolicyChoice(logits, argmax_st(probs), True)
    if mode == "argmax":
        return PolicyChoice(logits, hard_onehot(probs), False)
    raise ValueError(f"unknown mode {mode!r}")


def p1_forward(p1: PolicyP1, z, h_norm, snr_db, mode="argmax", temperature=1.0, generator=None):
    """Single-image convenience wrapper returning an :class:`ActivationMask`."""
    z = torch.as_tensor(z, dtype=torch.float32).reshape(1, *np.shape(z))
    h = torch.as_tensor(h_norm, dtype=torch.float32).reshape(1, -1)
    if h.shape[-1] != z.shape[1]:
        raise ValueError("h_norm length must equal the number of feature maps")
    snr = torch.tensor([float(snr_db)])
    with torch.no_grad():
        choice = choose(p1(z, h, snr), mode, temperature, generator)
    k = int(choice.index[0])
    return ActivationMask(top_k_mask(pair_entropies(h)[0], k))


def p2_forward(p2: PolicyP2, z1, snr_db, mode="argmax", ratios=DEFAULT_RATIOS, c_hat=None) -> float:
    """Single-image ratio choice. ``z1`` is ``(C, L)`` with inactive rows zeroed.

    With ``c_hat == 0`` (or, if ``c_hat`` is not given, an all-zero ``z1``)
    the policy is skipped and 0 is returned.
    """
    z1 = torch.as_tensor(np.asarray(z1), dtype=torch.float32)
    empty = c_hat == 0 if c_hat is not None else not torch.any(z1 != 0)
    if empty:
        return 0.0
    with torch.no_grad():
        choice = choose_ratio(p2(z1.unsqueeze(0), torch.tensor([float(snr_db)])), mode)
    return float(ratios[int(choice.index[0])])


# ----------------------------------------------------------------------
# pruning and restoration (per image, numpy)


def prune(z1, ratio: float) -> PruneRecord:
    """Drop the ``round(ratio * L)`` smallest-magnitude entries of every row."""
    z1 = np.atleast_2d(np.asarray(z1))
    rows, length = z1.shape
    n_prune = pruned_count(ratio, length)
    order = np.argsort(np.abs(z1), axis=1, kind="stable")
    index = np.zeros((rows, length), dtype=np.int8)
    np.put_along_axis(index, order[:, :n_prune], 1, axis=1)
    kept = z1[index == 0].reshape(rows, length - n_prune)
    return PruneRecord(kept, float(ratio), index)


def reinsert(z2_hat, index_matrix, strict: bool = True) -> np.ndarray:
    """Put received values back at the unflagged positions of each row.

    With ``strict=False`` a corrupted index row is tolerated: values fill the
    unflagged positions in order and any surplus on either side is dropped
    (missing values stay zero).
    """
    z2_hat = np.atleast_2d(np.asarray(z2_hat, dtype=np.float64))
    index_matrix = np.atleast_2d(np.asarray(index_matrix))
    rows, length = index_matrix.shape
    l_hat = z2_hat.shape[1]
    out = np.zeros((rows, length))
    for r in range(rows):
        slots = np.flatnonzero(index_matrix[r] == 0)
        if slots.size != l_hat:
            if strict:
                raise FramingError(
                    f"row {r}: {length - slots.size} flagged positions, expected {length - l_hat}"
                )
        n = min(slots.size, l_hat)
        out[r, slots[:n]] = z2_hat[r, :n]
    return out


def split_pairs(z_prime: np.ndarray) -> np.ndarray:
    """``(C, L) -> (2C, L/2)``: row ``i`` becomes maps ``2i`` and ``2i+1``."""
    c, length = z_prime.shape[-2:]
    return z_prime.reshape(*z_prime.shape[:-2], 2 * c, length // 2)


def concat_pairs(z: np.ndarray) -> np.ndarray:
    """``(2C, L/2) -> (C, L)``."""
    two_c, half = z.shape[-2:]
    return z.reshape(*z.shape[:-2], two_c // 2, 2 * half)


def restore(z2_hat, index_matrix, mask: ActivationMask, strict: bool = True) -> np.ndarray:
    """Rebuild the full ``(2C, L/2)`` block from received activated rows."""
    length = np.shape(index_matrix)[-1]
    full = np.zeros((mask.m.size, length))
    if mask.c_hat:
        full[mask.active] = reinsert(z2_hat, index_matrix, strict=strict)
    return split_pairs(full)


# ----------------------------------------------------------------------
# batched torch counterparts used during training


def prune_keep_masks(z_prime: torch.Tensor, ratios) -> torch.Tensor:
    """Keep masks for every ratio, shape ``(T, B, C, L)``; 1 keeps the entry."""
    length = z_prime.shape[-1]
    order = torch.sort(z_prime.detach().abs(), dim=-1, stable=True).indices
    ranks = torch.empty_like(order)
    ranks.scatter_(-1, order, torch.arange(length, device=order.device).expand_as(order))
    counts = torch.tensor([pruned_count(a, length) for a in ratios], device=z_prime.device)
    return (ranks.unsqueeze(0) >= counts.reshape(-1, 1, 1, 1)).to(z_prime.dtype)


def reinsert_batch(values: torch.Tensor, sent_index: torch.Tensor, recv_index: torch.Tensor) -> torch.Tensor:
    """Torch version of lenient :func:`reinsert` on full-length rows.

    ``values`` holds the received entries at their transmit positions;
    ``sent_index``/``recv_index`` are 0/1 tensors of the same shape. The
    ``j``-th kept entry on the sender side lands on the ``j``-th unflagged
    slot on the receiver side.
    """
    src = torch.sort(sent_index, dim=-1, stable=True).indices
    dst = torch.sort(recv_index, dim=-1, stable=True).indices
    n_src = (sent_index == 0).sum(dim=-1, keepdim=True)
    n_dst = (recv_index == 0).sum(dim=-1, keepdim=True)
    j = torch.arange(values.shape[-1], device=values.device).expand_as(values)
    valid = (j < torch.minimum(n_src, n_dst)).to(values.dtype)
    moved = torch.gather(values, -1, src) * valid
    return torch.zeros_like(values).scatter(-1, dst, moved)
