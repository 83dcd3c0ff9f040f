import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose

from entropy_jscc.config import Config
from entropy_jscc.models import (
    CheckpointError,
    EncoderS1,
    JSCCModel,
    ShapeError,
    SNRAdapt,
    load_model,
    make_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from entropy_jscc.pipeline import concat_pairs_t, split_pairs_t


def test_shape_pipeline(model):
    x = torch.rand(2, 3, 32, 32)
    with torch.no_grad():
        h = model.s1(x)
        z = model.s2(h, torch.tensor([3.0, 12.0]))
    assert h.shape == (2, 64, 8, 8)
    assert z.shape == (2, 16, 64)
    assert concat_pairs_t(z).shape == (2, 8, 128)
    assert torch.equal(split_pairs_t(concat_pairs_t(z)), z)
    assert torch.equal(concat_pairs_t(z)[:, 2], torch.cat([z[:, 4], z[:, 5]], dim=-1))


def test_s1_zero_weights_give_zero():
    s1 = EncoderS1()
    for p in s1.parameters():
        torch.nn.init.zeros_(p)
    assert not s1(torch.zeros(1, 3, 32, 32)).any()


def test_s1_rejects_bad_shape(model):
    with pytest.raises(ShapeError):
        model.s1(torch.rand(1, 3, 28, 28))
    with pytest.raises(ShapeError):
        model.decode(torch.zeros(1, 16, 32), torch.tensor([1.0]))


def test_encode_is_deterministic(model):
    x = torch.rand(3, 3, 32, 32)
    with torch.no_grad():
        a = model.encode(x, torch.full((3,), 7.0))
        b = model.encode(x, torch.full((3,), 7.0))
    assert torch.equal(a, b)


def test_encode_depends_on_snr(model):
    x = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        assert not torch.equal(model.encode(x, torch.tensor([0.0])), model.encode(x, torch.tensor([15.0])))


def test_snr_outside_range_warns(model):
    with pytest.warns(RuntimeWarning):
        model.encode(torch.rand(1, 3, 32, 32), torch.tensor([20.0]))


class TestSNRAdapt:
    def test_gate_all_ones(self):
        m = SNRAdapt(8)
        with torch.no_grad():
            m.mlp[2].weight.zero_()
            m.mlp[2].bias.fill_(100.0)
        x = torch.randn(2, 8, 4, 4)
        assert_allclose(m(x, torch.tensor([5.0, 10.0])).detach(), x, atol=1e-6)

    def test_gate_all_zeros(self):
        m = SNRAdapt(8)
        with torch.no_grad():
            m.mlp[2].weight.zero_()
            m.mlp[2].bias.fill_(-200.0)
        out = m(torch.randn(2, 8, 4, 4), torch.tensor([5.0, 10.0]))
        assert torch.all(out.abs() < 1e-30)

    def test_channelwise_product(self):
        torch.manual_seed(3)
        m = SNRAdapt(8)
        x = torch.randn(2, 8, 4, 4)
        snr = torch.tensor([2.0, 9.0])
        # recompute the gate by hand from the layers
        pooled = x.mean(dim=(2, 3))
        inp = torch.cat([pooled, (snr / 15.0).reshape(-1, 1)], dim=1)
        lin1, act, lin2 = m.mlp[0], m.mlp[1], m.mlp[2]
        gate = torch.sigmoid(lin2(act(lin1(inp))))
        out = m(x, snr)
        for c in range(8):
            assert_allclose(out[:, c].detach(), (gate[:, c, None, None] * x[:, c]).detach(), rtol=1e-6)
        assert torch.all((gate >= 0) & (gate <= 1))


def test_decoder_range(model):
    with torch.no_grad():
        out = model.decode(torch.randn(4, 16, 64) * 10, torch.tensor([0.0, 5.0, 10.0, 15.0]))
        zero = model.decode(torch.zeros(1, 16, 64), torch.tensor([3.0]))
    assert out.shape == (4, 3, 32, 32)
    assert torch.all((out >= 0) & (out <= 1))
    assert torch.isfinite(zero).all()


def test_seeded_initialisation():
    a = JSCCModel(Config({"model.seed": 4}))
    b = JSCCModel(Config({"model.seed": 4}))
    c = JSCCModel(Config({"model.seed": 5}))
    wa, wb, wc = (m.s2.proj.weight for m in (a, b, c))
    assert torch.equal(wa, wb)
    assert not torch.equal(wa, wc)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, model, tmp_path):
        path = save_checkpoint(make_checkpoint(model, 2, 17), tmp_path / "m.pt")
        loaded, ckpt = load_model(path)
        assert (ckpt.stage, ckpt.epoch) == (2, 17)
        for (n1, p1), (n2, p2) in zip(model.state_dict().items(), loaded.state_dict().items()):
            assert n1 == n2
            assert torch.equal(p1, p2)

    def test_mismatched_config_rejected(self, model, tmp_path):
        path = save_checkpoint(make_checkpoint(model, 1, 1), tmp_path / "m.pt")
        with pytest.raises(CheckpointError, match="entropy.temperature"):
            load_model(path, Config({"entropy.temperature": 0.1}))
        # non-architecture keys may differ
        load_model(path, Config({"train.alpha": 1e-3}))

    def test_missing_and_corrupt(self, tmp_path):
        with pytest.raises(CheckpointError):
            read_checkpoint(tmp_path / "nope.pt")
        bad = tmp_path / "bad.pt"
        bad.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            read_checkpoint(bad)

    def test_version_checked(self, model, tmp_path):
        ckpt = make_checkpoint(model, 0, 0)
        ckpt.version = 99
        path = save_checkpoint(ckpt, tmp_path / "v.pt")
        with pytest.raises(CheckpointError, match="version"):
            read_checkpoint(path)


def test_parameter_count_reasonable(model):
    n = sum(p.numel() for p in model.parameters())
    assert 1e5 < n < 2e6
    assert np.isclose(sum(p.numel() for part in model.parts().values() for p in part.parameters()), n)
