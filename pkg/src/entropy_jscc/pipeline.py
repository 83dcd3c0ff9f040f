"""End-to-end transmission: encode, select, prune, channel, restore, decode.

Two paths share the same semantics:

* :func:`run_batch` works on whole batches in torch and is differentiable
  (straight-through policy decisions, soft power normalisation gradients).
  Training uses it.
* :func:`transmit_image` pushes one image's feature block through real
  :class:`~entropy_jscc.phy.SymbolFrame` objects in numpy. Evaluation uses it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import phy
from .entropy import EstimatorConfig, map_entropies, normalize_entropies
from .models import JSCCModel
from .rate_control import (
    ActivationMask,
    choose,
    choose_ratio,
    entropy_ranks,
    mask_from_count,
    pair_entropies,
    prune,
    prune_keep_masks,
    pruned_count,
    reinsert_batch,
    restore,
)


@dataclass
class BatchResult:
    x_hat: torch.Tensor
    z: torch.Tensor  # (B, 2C, L/2)
    raw_entropy: torch.Tensor  # (B, 2C)
    h_norm: torch.Tensor
    mask: torch.Tensor  # (B, C), straight-through
    ratio_onehot: torch.Tensor  # (B, T), straight-through
    length_ratio: torch.Tensor  # (B,), L_hat / L, straight-through
    c_hat: torch.Tensor  # (B,), straight-through

    @property
    def ratio_index(self) -> torch.Tensor:
        return self.ratio_onehot.detach().argmax(dim=-1)


def concat_pairs_t(z: torch.Tensor) -> torch.Tensor:
    b, two_c, half = z.shape
    return z.reshape(b, two_c // 2, 2 * half)


def split_pairs_t(zp: torch.Tensor) -> torch.Tensor:
    b, c, length = zp.shape
    return zp.reshape(b, 2 * c, length // 2)


def _onehot(index, size, like: torch.Tensor) -> torch.Tensor:
    idx = torch.as_tensor(index, device=like.device).reshape(-1, 1).expand(like.shape[0], 1)
    return torch.zeros(like.shape[0], size, dtype=like.dtype, device=like.device).scatter_(-1, idx, 1.0)


def policy_decisions(
    model: JSCCModel,
    z: torch.Tensor,
    snr_db: torch.Tensor,
    mode: str = "argmax",
    generator: torch.Generator | None = None,
    force_k: int | None = None,
    force_ratio: float | None = None,
):
    """Entropies, P1 mask and P2 ratio choice for a batch of feature blocks.

    Returns ``(raw, h_norm, mask, ratio_onehot, keep_all)`` where ``keep_all``
    holds the keep masks of every ratio option, shape ``(T, B, C, L)``.
    """
    cfg = model.config
    est = EstimatorConfig.from_config(cfg)
    raw = map_entropies(z, est)
    h_norm = normalize_entropies(raw)
    n_pairs = z.shape[1] // 2
    ratios = model.ratios

    if force_k is None:
        count = choose(model.p1(z, h_norm, snr_db), mode, cfg["rate.gumbel_temperature"], generator).onehot
    else:
        count = _onehot(force_k, n_pairs + 1, z)
    ranks = entropy_ranks(pair_entropies(h_norm))
    mask = mask_from_count(count, ranks)

    zp = concat_pairs_t(z)
    z1 = zp * mask.unsqueeze(-1)
    if force_ratio is None:
        v = choose_ratio(model.p2(z1, snr_db), mode).onehot
    else:
        v = _onehot(ratios.index(force_ratio), len(ratios), z)
    # nothing activated: report "no pruning"
    empty = mask.detach().sum(dim=-1) == 0
    if empty.any():
        v = torch.where(empty.unsqueeze(-1), _onehot(0, len(ratios), z), v)
    keep_all = prune_keep_masks(zp, ratios)
    return raw, h_norm, mask, v, keep_all


def run_batch(
    model: JSCCModel,
    x: torch.Tensor,
    snr_db,
    mode: str = "sample",
    generator: torch.Generator | None = None,
    index_rng: np.random.Generator | None = None,
    channel: bool = True,
    force_k: int | None = None,
    force_ratio: float | None = None,
) -> BatchResult:
    """Differentiable forward pass of the whole system on a batch."""
    b = x.shape[0]
    snr_db = torch.as_tensor(snr_db, dtype=x.dtype).reshape(-1).expand(b).contiguous()
    ratios = model.ratios

    z = model.encode(x, snr_db)
    raw, h_norm, mask, v, keep_all = policy_decisions(model, z, snr_db, mode, generator, force_k, force_ratio)
    zp = concat_pairs_t(z)
    length = zp.shape[-1]

    keep_st = torch.einsum("bt,tbcl->bcl", v, keep_all)
    idx = v.detach().argmax(dim=-1)
    keep_hard = keep_all[idx, torch.arange(b)]
    x_tx = zp * mask.unsqueeze(-1) * keep_st

    if channel:
        z_rx = _batch_channel(x_tx, mask, v, keep_hard, idx, ratios, snr_db, generator, index_rng)
    else:
        z_rx = x_tx
    x_hat = model.decode(split_pairs_t(z_rx), snr_db)

    kept_frac = torch.tensor([1.0 - pruned_count(a, length) / length for a in ratios], dtype=x.dtype)
    length_ratio = v @ kept_frac
    c_hat = mask.sum(dim=-1)
    return BatchResult(x_hat, z, raw, h_norm, mask, v, length_ratio, c_hat)


def _batch_channel(x_tx, mask, v, keep_hard, idx, ratios, snr_db, generator, index_rng):
    """Power-normalise each image's frame, add AWGN, detect the index matrix
    and reinsert the received values.

    The symbol count and index-symbol energy are built from the
    straight-through ``mask`` and ``v`` so their forward values are exact
    while gradients see that extra maps also add symbols to normalise over.
    """
    b, c, length = x_tx.shape
    dtype = x_tx.dtype
    index_rng = index_rng if index_rng is not None else np.random.default_rng()
    active = mask.detach().unsqueeze(-1)
    pruned = torch.tensor([ratios[i] > 0 for i in idx.tolist()])
    n_idx_sym = phy.index_symbol_count(length)
    row_symbols = torch.tensor(
        [math.ceil((length - pruned_count(a, length)) / 2) + (n_idx_sym if a > 0 else 0) for a in ratios],
        dtype=dtype,
    )
    n_sym = mask.sum(dim=-1) * (v @ row_symbols)

    sent_index = (1 - keep_hard) * active
    idx_bits = sent_index.detach().cpu().numpy().astype(np.int64)
    idx_sym = phy.qam64_modulate_rows(idx_bits)  # (B, C, L')
    row_power = torch.as_tensor((np.abs(idx_sym) ** 2).sum(axis=-1), dtype=dtype)
    uses_index = v @ torch.tensor([float(a > 0) for a in ratios], dtype=dtype)
    idx_energy = (mask * row_power).sum(dim=-1) * uses_index
    energy = (x_tx**2).sum(dim=(1, 2)) + idx_energy
    sendable = (active.squeeze(-1).sum(dim=-1) > 0) & (energy.detach() > 0)
    # keep both where() branches finite so empty frames give zero gradient, not NaN
    one = torch.ones_like(energy)
    gain = torch.sqrt(torch.where(sendable, n_sym, one) / torch.where(sendable, energy, one))

    var = 10.0 ** (-snr_db / 10.0)
    std = torch.sqrt(var / 2).reshape(b, 1, 1)
    noise = torch.randn(x_tx.shape, generator=generator, dtype=dtype) * std / gain.reshape(b, 1, 1)
    rx = x_tx + noise * keep_hard * active * sendable.reshape(b, 1, 1)

    recv_index = sent_index.detach().clone()
    corrupted = torch.zeros(b, c, dtype=torch.bool)
    rows = np.flatnonzero(pruned.numpy() & sendable.numpy())
    if rows.size:
        g = gain.detach().numpy()[rows][:, None, None]
        s = idx_sym[rows]
        sig = np.sqrt(var.numpy()[rows] / 2)[:, None, None]
        noisy = s * g + sig * (index_rng.standard_normal(s.shape) + 1j * index_rng.standard_normal(s.shape))
        bits = phy.qam64_demodulate_rows(noisy / g, length)
        bits = bits * active.squeeze(-1).numpy()[rows][..., None].astype(np.uint8)
        recv = torch.as_tensor(bits, dtype=dtype)
        recv_index[rows] = recv
        corrupted[rows] = (recv != sent_index.detach()[rows]).any(dim=-1)
    if corrupted.any():
        moved = reinsert_batch(rx, sent_index.detach(), recv_index)
        rx = torch.where(corrupted.unsqueeze(-1), moved, rx)
    # inactive rows are already exactly zero; no extra masking so their
    # straight-through gradient still reaches the mask
    return rx


# ----------------------------------------------------------------------
# per-image numpy path


@dataclass
class Transmission:
    z_hat: np.ndarray  # (2C, L/2)
    c_hat: int
    ratio: float
    kept_length: int
    l_prime: int
    cpp: float
    index_errors: int


def transmit_image(
    z: np.ndarray,
    mask: ActivationMask,
    ratio: float,
    snr_db: float | None,
    rng: np.random.Generator | None = None,
    image_hw: tuple[int, int] = (32, 32),
) -> Transmission:
    """Send one ``(2C, L/2)`` feature block through the channel.

    ``snr_db=None`` gives a noiseless channel (the gain is still applied and
    removed).
    """
    z = np.asarray(z, dtype=np.float64)
    two_c, half = z.shape
    length = 2 * half
    zp = z.reshape(two_c // 2, length)
    h, w = image_hw
    if mask.c_hat == 0:
        return Transmission(np.zeros_like(z), 0, 0.0, length, 0, 0.0, 0)

    record = prune(zp[mask.active], ratio)
    frame = phy.build_frame(record.z2, record.index_matrix if ratio > 0 else None)
    l_prime = frame.index_symbols.shape[-1]
    if frame.mean_power() > 0:
        frame = phy.power_normalize(frame)
        if snr_db is not None:
            frame = phy.awgn(frame, phy.ChannelConfig(float(snr_db)), rng)
    z2_hat, idx_hat = phy.receive_frame(frame)
    if idx_hat is None:
        idx_hat = record.index_matrix
    errors = int(np.sum(idx_hat != record.index_matrix))
    z_hat = restore(z2_hat, idx_hat, mask, strict=False)
    cpp = phy.compute_cpp(mask.c_hat, record.kept_length, l_prime, h, w)
    return Transmission(z_hat, mask.c_hat, float(ratio), record.kept_length, l_prime, cpp, errors)


def image_rng(seed: int, image_index: int, snr_db: float) -> np.random.Generator:
    """Noise generator keyed on ``(seed, image, snr)`` so any evaluation order
    gives the same realisations."""
    snr_key = int(round(snr_db * 1000)) + 1_000_000
    return np.random.default_rng([int(seed), int(image_index), snr_key])


def expected_l_prime(ratio: float, length: int) -> int:
    return phy.index_symbol_count(length) if ratio > 0 else 0


def cpp_for(c_hat: float, ratio: float, length: int = 128, hw=(32, 32)) -> float:
    l_hat = length - pruned_count(ratio, length)
    return phy.compute_cpp(c_hat, l_hat, expected_l_prime(ratio, length), *hw)

