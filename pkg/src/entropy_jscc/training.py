"""Loss and the staged training schedule."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
import torch

from .config import Config, ConfigError
from .entropy import mean_exp_entropy
from .models import JSCCModel, ModelCheckpoint, make_checkpoint, save_checkpoint
from .pipeline import BatchResult, run_batch

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "stage", "loss_total", "loss_mse", "loss_rate", "loss_entropy", "avg_c_hat", "avg_ratio")

# Parts frozen in each of the four stages.
STAGE_FROZEN = ((), (), ("s1",), ("s2", "p1", "p2"))


class ScheduleError(RuntimeError):
    """Resumption point does not line up with the schedule."""


@dataclass
class LossBreakdown:
    total: torch.Tensor
    mse: torch.Tensor
    rate_term: torch.Tensor
    entropy_term: torch.Tensor
    alpha: float
    beta: float

    def floats(self) -> dict[str, float]:
        return {
            "total": self.total.item(),
            "mse": self.mse.item(),
            "rate": self.rate_term.item(),
            "entropy": self.entropy_term.item(),
        }


def compute_loss(x, x_hat, mask, length_ratio, raw_entropies, alpha: float, beta: float) -> LossBreakdown:
    """Reconstruction error plus channel usage minus entropy reward.

    Per image: ``mse + alpha * (L_hat/L) * sum(mask) - beta * mean_i exp(H_i)``,
    then averaged over the batch. ``length_ratio`` is ``L_hat / L`` per image
    and ``raw_entropies`` are the unnormalised map entropies. The sum is
    done in float64 so the three terms add up to ``total`` exactly.
    """
    if alpha < 0 or beta < 0:
        raise ConfigError("alpha and beta must be non-negative")
    x = torch.as_tensor(x)
    x_hat = torch.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    batched = x.dim() == 4
    if not batched:
        x, x_hat = x.unsqueeze(0), x_hat.unsqueeze(0)
    mask = torch.as_tensor(mask, dtype=x_hat.dtype).reshape(x.shape[0], -1)
    length_ratio = torch.as_tensor(length_ratio, dtype=x_hat.dtype).reshape(-1)
    raw = torch.as_tensor(raw_entropies, dtype=x_hat.dtype).reshape(x.shape[0], -1)

    mse = ((x - x_hat) ** 2).flatten(1).mean(dim=1).double().mean()
    rate = alpha * (length_ratio * mask.sum(dim=-1)).double().mean()
    ent = beta * mean_exp_entropy(raw).double().mean()
    return LossBreakdown(mse + rate - ent, mse, rate, ent, alpha, beta)


def loss_for(result: BatchResult, x, alpha, beta) -> LossBreakdown:
    return compute_loss(x, result.x_hat, result.mask, result.length_ratio, result.raw_entropy, alpha, beta)


@dataclass
class Stage:
    epochs: int
    lr: float
    frozen: tuple[str, ...] = ()


@dataclass
class TrainSchedule:
    stages: list[Stage]
    batch_size: int
    snr_range: tuple[float, float]
    checkpoint_every: int = 0

    @classmethod
    def from_config(cls, cfg: Config) -> "TrainSchedule":
        stages = [
            Stage(e, lr, frozen)
            for e, lr, frozen in zip(cfg["train.stage_epochs"], cfg["train.stage_lrs"], STAGE_FROZEN)
        ]
        return cls(stages, cfg["train.batch_size"], (cfg["train.snr_min"], cfg["train.snr_max"]),
                   cfg["train.checkpoint_every"])


@dataclass
class EpochStats:
    epoch: int
    stage: int
    sums: dict[str, float] = field(default_factory=lambda: dict.fromkeys(
        ("total", "mse", "rate", "entropy", "c_hat", "ratio"), 0.0))
    count: int = 0

    def add(self, parts: dict[str, float], c_hat: float, ratio: float, n: int) -> None:
        for k in ("total", "mse", "rate", "entropy"):
            self.sums[k] += parts[k] * n
        self.sums["c_hat"] += c_hat * n
        self.sums["ratio"] += ratio * n
        self.count += n

    def row(self) -> dict[str, float]:
        m = {k: v / self.count for k, v in self.sums.items()}
        return {
            "epoch": self.epoch,
            "stage": self.stage,
            "loss_total": m["total"],
            "loss_mse": m["mse"],
            "loss_rate": m["rate"],
            "loss_entropy": m["entropy"],
            "avg_c_hat": m["c_hat"],
            "avg_ratio": m["ratio"],
        }


def set_frozen(model: JSCCModel, frozen) -> list[torch.nn.Parameter]:
    """Freeze the named parts and return the parameters left trainable."""
    trainable = []
    for name, part in model.parts().items():
        for p in part.parameters():
            p.requires_grad_(name not in frozen)
            if name not in frozen:
                trainable.append(p)
    return trainable


def run_schedule(
    model: JSCCModel,
    images: np.ndarray,
    config: Config,
    out_dir: str | Path | None = None,
    start_stage: int = 1,
    resume: ModelCheckpoint | None = None,
    on_step: Callable[[int, LossBreakdown], None] | None = None,
) -> Iterator[ModelCheckpoint]:
    """Train through the four stages, yielding checkpoints as they are made.

    Checkpoints come at the end of every stage and, if
    ``train.checkpoint_every`` is set, every that many epochs. With
    ``out_dir`` they are also written to disk along with ``train_log.csv``.
    ``resume`` must carry the marker of the stage just before ``start_stage``.
    """
    schedule = TrainSchedule.from_config(config)
    if not 1 <= start_stage <= len(schedule.stages):
        raise ScheduleError(f"start_stage must be in 1..{len(schedule.stages)}")
    if resume is not None:
        if resume.stage != start_stage - 1:
            raise ScheduleError(f"checkpoint is from stage {resume.stage}, cannot resume at stage {start_stage}")
        for name, part in model.parts().items():
            part.load_state_dict(resume.state[name])
    elif start_stage != 1:
        raise ScheduleError("starting after stage 1 needs a checkpoint to resume from")

    alpha, beta = config["train.alpha"], config["train.beta"]
    seed = config["train.seed"]
    rng = np.random.default_rng(seed)
    index_rng = np.random.default_rng([seed, 1])
    gen = torch.Generator().manual_seed(seed)
    data = torch.as_tensor(np.asarray(images, dtype=np.float32))
    n = len(data)
    if n == 0:
        raise ValueError("no training images")

    out = Path(out_dir) if out_dir is not None else None
    writer = None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "train_log.csv", "a" if start_stage > 1 else "w", newline="")
        writer = csv.DictWriter(log_file, fieldnames=LOG_COLUMNS)
        if start_stage == 1:
            writer.writeheader()

    epoch_global = sum(s.epochs for s in schedule.stages[: start_stage - 1])
    step = 0
    try:
        for stage_no, stage in enumerate(schedule.stages, 1):
            if stage_no < start_stage:
                continue
            params = set_frozen(model, stage.frozen)
            opt = torch.optim.Adam(params, lr=stage.lr, betas=(0.9, 0.999), eps=1e-8)
            model.train()
            for epoch_in_stage in range(1, stage.epochs + 1):
                epoch_global += 1
                stats = EpochStats(epoch_global, stage_no)
                order = rng.permutation(n)
                snrs = rng.uniform(*schedule.snr_range, size=n)
                for start in range(0, n, schedule.batch_size):
                    sel = order[start : start + schedule.batch_size]
                    x = data[sel]
                    result = run_batch(model, x, torch.as_tensor(snrs[sel], dtype=torch.float32),
                                       mode="sample", generator=gen, index_rng=index_rng)
                    loss = loss_for(result, x, alpha, beta)
                    opt.zero_grad(set_to_none=True)
                    loss.total.backward()
                    opt.step()
                    step += 1
                    if on_step is not None:
                        on_step(step, loss)
                    stats.add(loss.floats(), float(result.c_hat.detach().mean()),
                              float(result.length_ratio.detach().mean()), len(sel))
                row = stats.row()
                log.info("stage %d epoch %d loss %.6f mse %.6f c_hat %.2f", stage_no, epoch_global,
                         row["loss_total"], row["loss_mse"], row["avg_c_hat"])
                if writer is not None:
                    writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
                    log_file.flush()
                last = epoch_in_stage == stage.epochs
                periodic = schedule.checkpoint_every and epoch_global % schedule.checkpoint_every == 0
                if last or periodic:
                    ckpt = make_checkpoint(model, stage_no if last else stage_no - 1, epoch_global)
                    if out is not None:
                        name = f"stage{stage_no}.pt" if last else f"epoch{epoch_global:04d}.pt"
                        save_checkpoint(ckpt, out / name)
                    yield ckpt
            if stage.epochs == 0:
                ckpt = make_checkpoint(model, stage_no, epoch_global)
                if out is not None:
                    save_checkpoint(ckpt, out / f"stage{stage_no}.pt")
                yield ckpt
    finally:
        set_frozen(model, ())
        model.eval()
        if log_file is not None:
            log_file.close()


def read_train_log(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
