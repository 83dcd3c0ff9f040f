import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from entropy_jscc import phy
from entropy_jscc.phy import (
    ChannelConfig,
    NormalizationError,
    PhyInputError,
    SymbolFrame,
    awgn,
    build_frame,
    compute_cpp,
    constellation,
    power_normalize,
    qam64_demodulate,
    qam64_modulate,
    receive_frame,
)

GRAY = {"000": -7, "001": -5, "011": -3, "010": -1, "110": 1, "111": 3, "101": 5, "100": 7}


def bits_of(n, width=6):
    return np.array([(n >> (width - 1 - k)) & 1 for k in range(width)])


class TestModulate:
    def test_all_zero_symbol(self):
        s = qam64_modulate([0, 0, 0, 0, 0, 0])
        assert_allclose(s, [(-7 - 7j) / math.sqrt(42)], atol=1e-15)

    def test_gray_table_per_axis(self):
        for code, level in GRAY.items():
            b = [int(c) for c in code]
            s = qam64_modulate(b + [0, 0, 0])[0] * math.sqrt(42)
            assert s.real == pytest.approx(level)
            assert s.imag == pytest.approx(-7)
            s = qam64_modulate([0, 0, 0] + b)[0] * math.sqrt(42)
            assert s.imag == pytest.approx(level)

    def test_128_bits_give_22_symbols(self):
        rng = np.random.default_rng(0)
        bits = rng.integers(0, 2, 128)
        s = qam64_modulate(bits)
        assert s.shape == (22,)
        assert phy.index_symbol_count(128) == 22
        # last symbol carries 2 data bits and 4 zero pad bits
        padded = np.concatenate([bits, np.zeros(4, dtype=int)])
        assert_allclose(s[-1], qam64_modulate(padded[-6:])[0])

    def test_unit_average_energy(self):
        pts = constellation()
        assert pts.shape == (64,)
        assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, abs=1e-15)

    def test_rejects_non_binary(self):
        with pytest.raises(PhyInputError):
            qam64_modulate([0, 1, 2, 0, 0, 0])
        with pytest.raises(PhyInputError):
            qam64_modulate(np.zeros((2, 6)))


class TestDemodulate:
    def test_exhaustive_round_trip(self):
        for n in range(64):
            b = bits_of(n)
            assert_array_equal(qam64_demodulate(qam64_modulate(b)), b)

    def test_bijection(self):
        pts = constellation()
        assert len({(round(p.real, 9), round(p.imag, 9)) for p in pts}) == 64

    def test_trailing_pad_dropped(self):
        rng = np.random.default_rng(1)
        bits = rng.integers(0, 2, 128)
        out = qam64_demodulate(qam64_modulate(bits), n_bits=128)
        assert out.shape == (128,)
        assert_array_equal(out, bits)

    def test_small_perturbation(self):
        s = (-7 - 7j) / math.sqrt(42) + 1e-6 * (1 + 1j)
        assert_array_equal(qam64_demodulate([s]), np.zeros(6))

    def test_boundary_tie_goes_to_smaller_amplitude(self):
        # midway between levels 1 (code 110) and 3 (code 111) on I; Q at -7
        s = (2 - 7j) / math.sqrt(42)
        assert_array_equal(qam64_demodulate([s]), [1, 1, 0, 0, 0, 0])
        # midway between -1 (010) and +1 (110): equal amplitude, smaller code wins
        s = (0 - 7j) / math.sqrt(42)
        assert_array_equal(qam64_demodulate([s])[:3], [0, 1, 0])

    def test_gray_adjacency(self):
        levels = sorted(GRAY.items(), key=lambda kv: kv[1])
        for (a, _), (b, _) in zip(levels, levels[1:]):
            assert sum(x != y for x, y in zip(a, b)) == 1
        # full grid: horizontal and vertical neighbours differ in one bit
        pts = constellation() * math.sqrt(42)
        for i in range(64):
            for j in range(64):
                d = abs(pts[i] - pts[j])
                if abs(d - 2) < 1e-9:
                    assert np.sum(bits_of(i) != bits_of(j)) == 1

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=1, max_size=200))
    def test_round_trip_any_length(self, bits):
        out = qam64_demodulate(qam64_modulate(bits), n_bits=len(bits))
        assert_array_equal(out, bits)


class TestPowerNormalize:
    def test_fixed_point(self):
        f = SymbolFrame(np.array([[1 + 0j, 0 + 1j]]), np.zeros((1, 0), complex))
        g = power_normalize(f)
        assert g.norm_gain == pytest.approx(1.0)
        assert_allclose(g.feature_symbols, f.feature_symbols)

    def test_power_four(self):
        f = SymbolFrame(np.array([[2 + 0j, 0 + 2j]]), np.zeros((1, 0), complex))
        g = power_normalize(f)
        assert g.norm_gain == pytest.approx(0.5)
        assert g.mean_power() == pytest.approx(1.0)

    def test_random_frames(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            c = rng.integers(1, 9)
            feat = rng.normal(size=(c, 48)) + 1j * rng.normal(size=(c, 48))
            idx = qam64_modulate(rng.integers(0, 2, 6 * 22 * c)).reshape(c, 22)
            g = power_normalize(SymbolFrame(feat * rng.uniform(0.1, 10), idx))
            p = (np.sum(np.abs(g.feature_symbols) ** 2) + np.sum(np.abs(g.index_symbols) ** 2)) / (c * 70)
            assert abs(p - 1.0) < 1e-9

    def test_all_zero_frame(self):
        with pytest.raises(NormalizationError):
            power_normalize(SymbolFrame(np.zeros((2, 3), complex), np.zeros((2, 0), complex)))


class TestAWGN:
    def test_vanishing_noise(self):
        s = constellation()
        assert_allclose(awgn(s, ChannelConfig(300.0), np.random.default_rng(0)), s, atol=1e-12)

    @pytest.mark.parametrize("snr", [0.0, 5.0, 10.0, 15.0])
    def test_noise_calibration(self, snr):
        rng = np.random.default_rng(int(snr))
        s = np.exp(2j * np.pi * rng.random(1_000_000))
        n = awgn(s, ChannelConfig(snr), rng) - s
        power = np.mean(np.abs(n) ** 2)
        assert abs(power / 10 ** (-snr / 10) - 1) < 0.01
        # half per component
        assert np.mean(n.real ** 2) == pytest.approx(power / 2, rel=0.02)

    def test_zero_db_empirical_snr(self):
        rng = np.random.default_rng(7)
        s = np.exp(2j * np.pi * rng.random(1_000_000))
        n = awgn(s, ChannelConfig(0.0), rng) - s
        assert abs(10 * np.log10(1.0 / np.mean(np.abs(n) ** 2))) < 0.1

    def test_seeded(self):
        s = constellation()
        a = awgn(s, ChannelConfig(5.0, seed=3))
        b = awgn(s, ChannelConfig(5.0, seed=3))
        assert_array_equal(a, b)

    def test_non_finite_snr(self):
        with pytest.raises(ValueError):
            ChannelConfig(float("nan"))


class TestFrame:
    def test_round_trip_odd_length(self):
        rng = np.random.default_rng(3)
        z2 = rng.normal(size=(3, 83))
        idx = np.zeros((3, 128), dtype=np.int8)
        idx[:, :45] = 1
        frame = build_frame(z2, idx)
        assert frame.feature_symbols.shape == (3, 42)
        assert np.all(frame.feature_symbols[:, -1].imag == 0)
        assert frame.index_symbols.shape == (3, 22)
        z2_hat, idx_hat = receive_frame(power_normalize(frame))
        assert_allclose(z2_hat, z2, atol=1e-12)
        assert_array_equal(idx_hat, idx)

    def test_no_index_symbols_without_pruning(self):
        frame = build_frame(np.ones((2, 128)), None)
        assert frame.index_symbols.shape == (2, 0)
        z2_hat, idx_hat = receive_frame(frame)
        assert idx_hat is None

    def test_first_half_real_second_half_imag(self):
        frame = build_frame(np.array([[1.0, 2.0, 3.0, 4.0]]), None)
        assert_allclose(frame.feature_symbols, [[1 + 3j, 2 + 4j]])


class TestCPP:
    @pytest.mark.parametrize(
        "c_hat, ratio, l_prime, expected",
        [(8, 1.0, 0, 0.500), (7.90, 0.7404, 22, 0.450), (4.60, 0.7320, 22, 0.260)],
    )
    def test_table_examples(self, c_hat, ratio, l_prime, expected):
        assert compute_cpp(c_hat, ratio * 128, l_prime, 32, 32) == pytest.approx(expected, abs=1e-3)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            compute_cpp(1, 128, 0, 0, 32)
        with pytest.raises(ValueError):
            compute_cpp(-1, 128, 0, 32, 32)


class TestBER:
    def test_exact_vs_monte_carlo(self):
        rows = phy.ber_sweep([5.0, 10.0, 15.0], 200_000, seed=0)
        exact = phy.qam64_ber_exact([5.0, 10.0, 15.0])
        for row, e in zip(rows, exact):
            assert abs(row["ber"] / e - 1) < 0.05

    def test_exact_equals_nearest_neighbour_at_high_snr(self):
        # the approximation only drops second-neighbour terms
        ratio = phy.qam64_ber_exact(25.0) / phy.qam64_ber_nearest_neighbor(25.0)
        assert ratio == pytest.approx(1.0, abs=0.01)

    def test_sweep_columns(self):
        rows = phy.ber_sweep([10.0], 1000, seed=1)
        assert set(rows[0]) == {"snr_db", "ber", "empirical_noise_power"}
