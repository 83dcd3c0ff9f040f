import numpy as np
import pytest
import torch

from entropy_jscc.config import Config
from entropy_jscc.data import write_batch_file
from entropy_jscc.models import JSCCModel


def synthetic_images(n, seed=0):
    """Mix of flat, smooth and noisy 32x32 images as uint8 ``(n, 3, 32, 32)``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:32, 0:32] / 31.0
    out = np.empty((n, 3, 32, 32), dtype=np.uint8)
    for i in range(n):
        kind = i % 3
        base = rng.uniform(0.1, 0.9, size=(3, 1, 1))
        if kind == 0:
            img = np.broadcast_to(base, (3, 32, 32))
        elif kind == 1:
            a, b = rng.uniform(-0.4, 0.4, size=2)
            img = base + a * xx + b * yy
        else:
            img = base + rng.uniform(0.1, 0.4) * rng.standard_normal((3, 32, 32))
        out[i] = np.clip(np.round(np.clip(img, 0, 1) * 255), 0, 255)
    return out


@pytest.fixture(scope="session")
def cifar_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cifar") / "cifar-10-batches-bin"
    for k in range(1, 6):
        imgs = synthetic_images(40, seed=k)
        write_batch_file(root / f"data_batch_{k}.bin", imgs, np.arange(40) % 10)
    write_batch_file(root / "test_batch.bin", synthetic_images(60, seed=99), np.arange(60) % 10)
    return root


@pytest.fixture
def model():
    torch.manual_seed(0)
    return JSCCModel(Config()).eval()


@pytest.fixture
def images():
    return synthetic_images(12, seed=3).astype(np.float32) / 255.0


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
