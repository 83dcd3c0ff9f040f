"""Semantic encoder (S1, S2), semantic decoder and checkpoint I/O."""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .config import SNR_SCALE, Config
from .rate_control import PolicyP1, PolicyP2

CHECKPOINT_VERSION = 1
IMAGE_SHAPE = (3, 32, 32)
GRID = 8  # spatial size after S1


class ShapeError(ValueError):
    """Input tensor does not have the expected shape."""


class CheckpointError(RuntimeError):
    """Checkpoint is unreadable or does not match the requested config."""


def _check_snr_range(snr_db: torch.Tensor) -> None:
    if torch.any(snr_db < 0) or torch.any(snr_db > 15):
        warnings.warn("snr_db outside the [0, 15] dB training range", RuntimeWarning, stacklevel=3)


class SNRAdapt(nn.Module):
    """Channel gating conditioned on the channel SNR.

    The gate is a two-layer perceptron on ``[global-average-pool(x), snr]``
    ending in a sigmoid; every channel of ``x`` is multiplied by its gate.
    """

    def __init__(self, channels: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or channels
        self.mlp = nn.Sequential(
            nn.Linear(channels + 1, hidden),
            nn.PReLU(),
            nn.Linear(hidden, channels),
            nn.Sigmoid(),
        )

    def gate(self, x: torch.Tensor, snr_db: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(2, 3))
        snr = (snr_db.reshape(-1, 1) / SNR_SCALE).to(x.dtype).expand(x.shape[0], 1)
        return self.mlp(torch.cat([pooled, snr], dim=1))

    def forward(self, x, snr_db):
        return x * self.gate(x, snr_db)[:, :, None, None]


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.PReLU(channels),
            nn.Conv2d(channels, channels, 3, padding=1),
        )
        self.act = nn.PReLU(channels)

    def forward(self, x):
        return self.act(x + self.body(x))


class EncoderS1(nn.Module):
    """Three convolutions, 32x32 -> 8x8."""

    def __init__(self, width: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=1, padding=1),
            nn.PReLU(32),
            nn.Conv2d(32, width, 3, stride=2, padding=1),
            nn.PReLU(width),
            nn.Conv2d(width, width, 3, stride=2, padding=1),
            nn.PReLU(width),
        )

    def forward(self, x):
        if x.dim() != 4 or tuple(x.shape[1:]) != IMAGE_SHAPE:
            raise ShapeError(f"expected images (B, 3, 32, 32), got {tuple(x.shape)}")
        return self.net(x)


class EncoderS2(nn.Module):
    """Two residual blocks, each followed by SNR gating, then a 1x1 projection
    to ``num_maps`` maps flattened to length 64."""

    def __init__(self, width: int = 64, num_maps: int = 16):
        super().__init__()
        self.res1 = ResBlock(width)
        self.adapt1 = SNRAdapt(width)
        self.res2 = ResBlock(width)
        self.adapt2 = SNRAdapt(width)
        self.proj = nn.Conv2d(width, num_maps, 1)

    def forward(self, h, snr_db):
        snr_db = torch.as_tensor(snr_db, dtype=h.dtype).reshape(-1)
        _check_snr_range(snr_db)
        h = self.adapt1(self.res1(h), snr_db)
        h = self.adapt2(self.res2(h), snr_db)
        return self.proj(h).flatten(2)


class Decoder(nn.Module):
    """Mirror of the encoder with transposed convolutions for upsampling."""

    def __init__(self, width: int = 64, num_maps: int = 16):
        super().__init__()
        self.num_maps = num_maps
        self.proj = nn.Conv2d(num_maps, width, 1)
        self.adapt1 = SNRAdapt(width)
        self.res1 = ResBlock(width)
        self.adapt2 = SNRAdapt(width)
        self.res2 = ResBlock(width)
        self.up = nn.Sequential(
            nn.ConvTranspose2d(width, width, 4, stride=2, padding=1),
            nn.PReLU(width),
            nn.ConvTranspose2d(width, 32, 4, stride=2, padding=1),
            nn.PReLU(32),
            nn.Conv2d(32, 3, 3, padding=1),
            nn.Sigmoid(),
        )

    def forward(self, z_hat, snr_db):
        if z_hat.dim() != 3 or tuple(z_hat.shape[1:]) != (self.num_maps, GRID * GRID):
            raise ShapeError(f"expected (B, {self.num_maps}, {GRID * GRID}), got {tuple(z_hat.shape)}")
        snr_db = torch.as_tensor(snr_db, dtype=z_hat.dtype).reshape(-1)
        h = self.proj(z_hat.reshape(-1, self.num_maps, GRID, GRID))
        h = self.res1(self.adapt1(h, snr_db))
        h = self.res2(self.adapt2(h, snr_db))
        return self.up(h)


class JSCCModel(nn.Module):
    """Every trainable part of the system in one module."""

    def __init__(self, config: Config | None = None):
        super().__init__()
        self.config = config or Config()
        cfg = self.config
        width, maps = cfg["model.width"], cfg["model.num_maps"]
        torch.manual_seed(cfg["model.seed"])
        self.s1 = EncoderS1(width)
        self.s2 = EncoderS2(width, maps)
        self.decoder = Decoder(width, maps)
        self.p1 = PolicyP1(maps, cfg["model.policy_hidden"])
        self.p2 = PolicyP2(maps // 2, len(cfg["rate.prune_ratios"]), cfg["model.policy_hidden"])

    @property
    def ratios(self) -> list[float]:
        return list(self.config["rate.prune_ratios"])

    def encode(self, x, snr_db):
        return self.s2(self.s1(x), snr_db)

    def decode(self, z_hat, snr_db):
        return self.decoder(z_hat, snr_db)

    def parts(self) -> dict[str, nn.Module]:
        return {"s1": self.s1, "s2": self.s2, "decoder": self.decoder, "p1": self.p1, "p2": self.p2}


@dataclass
class ModelCheckpoint:
    state: dict
    stage: int
    epoch: int
    config: dict
    version: int = CHECKPOINT_VERSION


def make_checkpoint(model: JSCCModel, stage: int, epoch: int) -> ModelCheckpoint:
    state = {name: {k: v.detach().clone() for k, v in part.state_dict().items()}
             for name, part in model.parts().items()}
    return ModelCheckpoint(state, stage, epoch, dict(model.config))


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": ckpt.version,
        "stage": ckpt.stage,
        "epoch": ckpt.epoch,
        "config": ckpt.config,
        "state": ckpt.state,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    path.write_bytes(buf.getvalue())
    return path


def read_checkpoint(path: str | Path) -> ModelCheckpoint:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} not found") from None
    except Exception as exc:  # torch raises several unrelated types here
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}")
    return ModelCheckpoint(payload["state"], payload["stage"], payload["epoch"], payload["config"], version)


def load_model(path: str | Path, config: Config | None = None) -> tuple[JSCCModel, ModelCheckpoint]:
    """Rebuild a model from a checkpoint.

    When ``config`` is given, its architecture keys must match the snapshot
    stored in the checkpoint.
    """
    ckpt = read_checkpoint(path)
    stored = Config({k: v for k, v in ckpt.config.items() if k in Config()})
    if config is not None:
        want, have = config.architecture(), stored.architecture()
        diff = sorted(k for k in want if want[k] != have[k])
        if diff:
            raise CheckpointError(f"checkpoint config mismatch on {', '.join(diff)}")
        stored = config
    model = JSCCModel(stored)
    for name, part in model.parts().items():
        part.load_state_dict(ckpt.state[name])
    return model, ckpt
