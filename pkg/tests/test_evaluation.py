import math
from dataclasses import asdict

import numpy as np
import pytest
from numpy.testing import assert_allclose

from entropy_jscc import phy
from entropy_jscc.evaluation import (
    PSNR_CAP,
    REPORT_COLUMNS,
    ablation_run,
    aggregate,
    baseline_rows,
    entropy_buckets,
    evaluate,
    load_reference_tables,
    psnr,
    reports_to_csv,
    run_images,
)


class TestPSNR:
    def test_mse_001(self):
        x = np.zeros((3, 4, 4))
        assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_identical_capped(self):
        x = np.random.default_rng(0).random((3, 8, 8))
        assert psnr(x, x) == PSNR_CAP

    def test_random_pair(self):
        rng = np.random.default_rng(1)
        x, y = rng.random((3, 32, 32)), rng.random((3, 32, 32))
        mse = sum(((x - y) ** 2).ravel().tolist()) / x.size
        assert abs(psnr(x, y) - 10 * math.log10(1 / mse)) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros(3), np.zeros(4))


class TestEvaluate:
    def test_forced_full_rate(self, model, images):
        rep = evaluate(model, images, [5.0], force_k=8, force_ratio=0.0)[0]
        assert rep.avg_maps == 8
        assert rep.avg_length_ratio == 100.0
        assert rep.cpp == 0.5
        assert rep.cpp_from_averages == 0.5
        assert rep.n_images == len(images)

    def test_forced_k5_quarter(self, model, images):
        rep = evaluate(model, images, [10.0], force_k=5, force_ratio=0.25)[0]
        assert rep.cpp == pytest.approx(5 * (96 + 22) / 2048, abs=1e-12)
        assert round(rep.cpp, 4) == 0.2881
        assert rep.avg_length_ratio == pytest.approx(75.0)

    def test_deterministic(self, model, images):
        a = reports_to_csv(None, evaluate(model, images, [0.0, 15.0], seed=3))
        b = reports_to_csv(None, evaluate(model, images, [0.0, 15.0], seed=3))
        assert a == b

    def test_order_independent_noise(self, model, images):
        full = run_images(model, images, 5.0, seed=2, batch_size=4)
        single = run_images(model, images, 5.0, seed=2, batch_size=1)
        for a, b in zip(full, single):
            assert a.cpp == b.cpp
            assert a.psnr_db == pytest.approx(b.psnr_db, abs=1e-4)

    def test_per_image_cpp_consistent(self, model, images):
        for r in run_images(model, images, 15.0):
            assert r.cpp == phy.compute_cpp(r.c_hat, r.kept_length, r.l_prime, 32, 32)
            assert r.l_prime == (22 if r.ratio > 0 and r.c_hat > 0 else 0)

    def test_empty_dataset(self, model):
        with pytest.raises(ValueError):
            evaluate(model, np.zeros((0, 3, 32, 32), np.float32), [5.0])

    def test_report_invariants(self, model, images):
        rep = evaluate(model, images, [10.0])[0]
        assert 0 <= rep.avg_maps <= 8
        assert 0 < rep.avg_length_ratio <= 100


def test_aggregate_formula_vs_mean():
    from entropy_jscc.evaluation import ImageResult

    def r(c, kept, lp):
        cpp = phy.compute_cpp(c, kept, lp, 32, 32)
        return ImageResult(0, c, 0.25 if lp else 0.0, kept, lp, cpp, 30.0, 1e-3, 0.0, 0)

    results = [r(8, 128, 0), r(4, 96, 22)]
    rep = aggregate(10.0, results)
    assert rep.cpp == pytest.approx((0.5 + 4 * 118 / 2048) / 2)
    assert rep.cpp_from_averages == pytest.approx(phy.compute_cpp(6, 112, 22, 32, 32))
    assert rep.avg_length_ratio == pytest.approx(87.5)


class TestBuckets:
    def test_identical_images(self, model, images):
        same = np.repeat(images[:1], 6, axis=0)
        out = entropy_buckets(model, same, n_per_bucket=3, snr_db=15.0)
        for key in ("avg_maps", "avg_pruned_fraction", "avg_cpp", "avg_active_entropy", "image_entropy"):
            assert out["low"][key] == pytest.approx(out["high"][key])
        assert out["low"]["n_images"] == out["high"]["n_images"] == 3

    def test_partition_sizes_and_order(self, model, images):
        out = entropy_buckets(model, images, n_per_bucket=4)
        assert out["low"]["n_images"] == 4
        assert out["low"]["image_entropy"] <= out["high"]["image_entropy"]

    def test_too_small(self, model, images):
        with pytest.raises(ValueError):
            entropy_buckets(model, images[:3], n_per_bucket=2)


def test_ablation_without_p2_never_prunes(model, images):
    rows = ablation_run(model, model, images, [15.0])
    assert [r["model"] for r in rows] == ["with_p2", "without_p2"]
    off = rows[1]
    assert off["avg_length_ratio"] == 100.0
    assert off["cpp"] == pytest.approx(off["avg_maps"] / 16)
    for row in rows:
        assert {"cpp", "psnr_db"} <= set(row)


def test_pruning_saves_channel_uses():
    # 32 pruned entries outweigh 22 index symbols at equal map counts
    for c in range(1, 9):
        assert phy.compute_cpp(c, 96, 22, 32, 32) < phy.compute_cpp(c, 128, 0, 32, 32)


class TestReferenceTables:
    def test_versioned_and_cited(self):
        tables = load_reference_tables()
        assert tables["version"] == 1
        assert all(r["source"] in ("table1", "table2") for r in tables["rows"])
        assert len(baseline_rows()) == 8

    def test_cpp_cells_reproduce(self):
        rows = [r for r in load_reference_tables()["rows"] if r["method"] == "proposed"]
        assert len(rows) == 8
        for r in rows:
            l_prime = 22 if r["avg_length_ratio"] < 100 else 0
            cpp = phy.compute_cpp(r["avg_maps"], r["avg_length_ratio"] / 100 * 128, l_prime, 32, 32)
            assert abs(cpp - r["cpp"]) <= 1e-3, r


def test_csv_schema(model, images, tmp_path):
    reps = evaluate(model, images[:3], [0.0])
    text = reports_to_csv(tmp_path / "r.csv", reps)
    header, row = text.strip().split("\n")
    assert header.split(",") == list(REPORT_COLUMNS)
    assert (tmp_path / "r.csv").read_text() == text
    assert_allclose(float(row.split(",")[3]), asdict(reps[0])["cpp"], atol=1e-6)
