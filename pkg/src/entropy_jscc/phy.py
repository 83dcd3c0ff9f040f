"""Physical layer: 64-QAM for the pruning index, framing, power
normalisation, AWGN and channel-usage accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erfc

BITS_PER_SYMBOL = 6
QAM_SCALE = math.sqrt(42.0)

# Gray code (3 bits, MSB first) -> PAM level, per axis.
GRAY_TO_LEVEL = {0b000: -7, 0b001: -5, 0b011: -3, 0b010: -1, 0b110: 1, 0b111: 3, 0b101: 5, 0b100: 7}
_LEVELS_BY_CODE = np.array([GRAY_TO_LEVEL[c] for c in range(8)], dtype=np.float64)
# Detection order for tie-breaks: smaller amplitude first, then smaller Gray code.
_DETECT_CODES = np.array(sorted(range(8), key=lambda c: (abs(GRAY_TO_LEVEL[c]), c)))
_DETECT_LEVELS = _LEVELS_BY_CODE[_DETECT_CODES]
_CHUNK = 1 << 18


class PhyInputError(ValueError):
    """Raised for non-binary bit input."""


class NormalizationError(ValueError):
    """Raised when a frame carries no energy."""


def index_symbol_count(length: int) -> int:
    """Number of 64-QAM symbols for ``length`` bits, ``ceil(length / 6)``."""
    return -(-int(length) // BITS_PER_SYMBOL)


def qam64_modulate(bits) -> np.ndarray:
    """Map a bit vector to 64-QAM symbols with unit average energy.

    The last group is zero-padded when ``len(bits)`` is not a multiple of 6.
    Bits 0-2 of each group select the in-phase level, bits 3-5 the
    quadrature level.
    """
    b = np.asarray(bits)
    if b.ndim != 1:
        raise PhyInputError("bits must be a 1-D vector")
    if b.size and not np.all((b == 0) | (b == 1)):
        raise PhyInputError("bits must be 0 or 1")
    n_sym = index_symbol_count(b.size)
    padded = np.zeros(n_sym * BITS_PER_SYMBOL, dtype=np.int64)
    padded[: b.size] = b
    groups = padded.reshape(n_sym, BITS_PER_SYMBOL)
    i_code = groups[:, 0] * 4 + groups[:, 1] * 2 + groups[:, 2]
    q_code = groups[:, 3] * 4 + groups[:, 4] * 2 + groups[:, 5]
    return (_LEVELS_BY_CODE[i_code] + 1j * _LEVELS_BY_CODE[q_code]) / QAM_SCALE


def qam64_modulate_rows(bits: np.ndarray) -> np.ndarray:
    """Row-wise :func:`qam64_modulate` for a ``(..., n_bits)`` 0/1 array."""
    b = np.asarray(bits, dtype=np.int64)
    n_bits = b.shape[-1]
    n_sym = index_symbol_count(n_bits)
    padded = np.zeros(b.shape[:-1] + (n_sym * BITS_PER_SYMBOL,), dtype=np.int64)
    padded[..., :n_bits] = b
    g = padded.reshape(b.shape[:-1] + (n_sym, BITS_PER_SYMBOL))
    i_code = g[..., 0] * 4 + g[..., 1] * 2 + g[..., 2]
    q_code = g[..., 3] * 4 + g[..., 4] * 2 + g[..., 5]
    return (_LEVELS_BY_CODE[i_code] + 1j * _LEVELS_BY_CODE[q_code]) / QAM_SCALE


def qam64_demodulate_rows(symbols: np.ndarray, n_bits: int) -> np.ndarray:
    """Row-wise :func:`qam64_demodulate` returning ``(..., n_bits)``."""
    s = np.asarray(symbols, dtype=np.complex128)
    bits = qam64_demodulate(s.reshape(-1))
    return bits.reshape(s.shape[:-1] + (s.shape[-1] * BITS_PER_SYMBOL,))[..., :n_bits]


def _detect_axis(x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape, dtype=np.int64)
    flat, dst = x.reshape(-1), out.reshape(-1)
    for start in range(0, flat.size, _CHUNK):
        seg = flat[start : start + _CHUNK] * QAM_SCALE
        dist = np.abs(seg[:, None] - _DETECT_LEVELS[None, :])
        dst[start : start + _CHUNK] = _DETECT_CODES[np.argmin(dist, axis=1)]
    return out


def qam64_demodulate(symbols, n_bits: int | None = None) -> np.ndarray:
    """Hard-decision detection back to bits.

    ``n_bits`` drops the trailing pad; by default all ``6 * len(symbols)``
    bits are returned.
    """
    s = np.asarray(symbols, dtype=np.complex128).reshape(-1)
    i_code = _detect_axis(s.real)
    q_code = _detect_axis(s.imag)
    bits = np.empty((s.size, BITS_PER_SYMBOL), dtype=np.uint8)
    for k in range(3):
        bits[:, k] = (i_code >> (2 - k)) & 1
        bits[:, 3 + k] = (q_code >> (2 - k)) & 1
    bits = bits.reshape(-1)
    if n_bits is not None:
        bits = bits[:n_bits]
    return bits


def constellation() -> np.ndarray:
    """All 64 points indexed by the 6-bit pattern (MSB first)."""
    patterns = ((np.arange(64)[:, None] >> np.arange(5, -1, -1)) & 1).reshape(-1)
    return qam64_modulate(patterns)


@dataclass
class SymbolFrame:
    """Complex channel input for one image.

    ``feature_symbols`` holds one row per activated map: the first half of
    the kept values on the real axis, the rest on the imaginary axis (a
    zero imaginary part pads odd lengths). ``index_symbols`` holds the
    64-QAM rows of the pruning index matrix, empty when nothing was pruned.
    """

    feature_symbols: np.ndarray
    index_symbols: np.ndarray
    norm_gain: float = 1.0
    kept_length: int = 0
    index_bits: int = 0

    @property
    def n_symbols(self) -> int:
        return int(self.feature_symbols.size + self.index_symbols.size)

    def mean_power(self) -> float:
        total = np.sum(np.abs(self.feature_symbols) ** 2) + np.sum(np.abs(self.index_symbols) ** 2)
        return float(total / self.n_symbols)


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")

    @property
    def noise_variance(self) -> float:
        return 10.0 ** (-self.snr_db / 10.0)


def pack_rows(rows: np.ndarray) -> np.ndarray:
    """Pair real rows of length ``n`` into ``ceil(n / 2)`` complex symbols."""
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[-1]
    half = -(-n // 2)
    imag = np.zeros(rows.shape[:-1] + (half,))
    imag[..., : n - half] = rows[..., half:]
    return rows[..., :half] + 1j * imag


def unpack_rows(symbols: np.ndarray, length: int) -> np.ndarray:
    """Inverse of :func:`pack_rows`."""
    half = -(-length // 2)
    return np.concatenate([symbols.real[..., :half], symbols.imag[..., : length - half]], axis=-1)


def build_frame(z2: np.ndarray, index_matrix: np.ndarray | None) -> SymbolFrame:
    """Channel-encode the pruned maps and (if any pruning happened) the index matrix."""
    z2 = np.atleast_2d(np.asarray(z2, dtype=np.float64))
    feat = pack_rows(z2)
    if index_matrix is not None and np.any(index_matrix):
        idx = qam64_modulate_rows(index_matrix)
        n_bits = index_matrix.shape[1]
    else:
        idx = np.zeros((z2.shape[0], 0), dtype=np.complex128)
        n_bits = 0
    return SymbolFrame(feat, idx, 1.0, kept_length=z2.shape[1], index_bits=n_bits)


def power_normalize(frame: SymbolFrame) -> SymbolFrame:
    """Scale all symbols by one gain so the frame has unit mean power."""
    if frame.n_symbols == 0:
        raise NormalizationError("frame has no symbols")
    power = frame.mean_power()
    if power == 0.0:
        raise NormalizationError("cannot normalise an all-zero frame")
    gain = 1.0 / math.sqrt(power)
    return replace(
        frame,
        feature_symbols=frame.feature_symbols * gain,
        index_symbols=frame.index_symbols * gain,
        norm_gain=frame.norm_gain * gain,
    )


def complex_noise(shape, noise_variance: float, rng: np.random.Generator) -> np.ndarray:
    std = math.sqrt(noise_variance / 2.0)
    return std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def awgn(frame_or_symbols, config: ChannelConfig, rng: np.random.Generator | None = None):
    """Add circularly-symmetric complex Gaussian noise of variance ``10**(-snr/10)``.

    Accepts either a :class:`SymbolFrame` or a plain complex array. ``rng``
    defaults to a generator seeded from ``config.seed``.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    var = config.noise_variance
    if isinstance(frame_or_symbols, SymbolFrame):
        f = frame_or_symbols
        return replace(
            f,
            feature_symbols=f.feature_symbols + complex_noise(f.feature_symbols.shape, var, rng),
            index_symbols=f.index_symbols + complex_noise(f.index_symbols.shape, var, rng),
        )
    s = np.asarray(frame_or_symbols, dtype=np.complex128)
    return s + complex_noise(s.shape, var, rng)


def receive_frame(frame: SymbolFrame) -> tuple[np.ndarray, np.ndarray | None]:
    """Undo the gain, unpack the feature values and detect the index matrix.

    Returns ``(z2_hat, index_hat)``; ``index_hat`` is None when the frame
    carried no index symbols.
    """
    gain = frame.norm_gain
    z2_hat = unpack_rows(frame.feature_symbols / gain, frame.kept_length)
    if frame.index_symbols.shape[-1] == 0:
        return z2_hat, None
    idx = qam64_demodulate_rows(frame.index_symbols / gain, frame.index_bits).astype(np.int8)
    return z2_hat, idx


def compute_cpp(c_hat: float, l_hat: float, l_prime: float, h: int, w: int) -> float:
    """Channel uses per pixel: ``c_hat * (l_hat + l_prime) / (2 * h * w)``."""
    if h <= 0 or w <= 0:
        raise ValueError("image height and width must be positive")
    if c_hat < 0:
        raise ValueError("c_hat must be non-negative")
    return c_hat * (l_hat + l_prime) / (2.0 * h * w)


def _q(x):
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def qam64_ber_nearest_neighbor(snr_db) -> np.ndarray:
    """Textbook nearest-neighbour BER approximation for Gray 64-QAM.

    ``(4 / 6) * (1 - 1/8) * Q(sqrt(3 * Es/N0 / 63))`` with ``Es/N0`` equal to
    the channel SNR (unit-energy symbols).
    """
    es_n0 = 10.0 ** (np.asarray(snr_db, dtype=np.float64) / 10.0)
    return (4.0 / 6.0) * (1.0 - 1.0 / 8.0) * _q(np.sqrt(3.0 * es_n0 / 63.0))


def qam64_ber_exact(snr_db) -> np.ndarray:
    """Exact bit error rate of Gray 64-QAM with hard per-axis detection.

    Computed by summing, for every transmitted level and every decision
    region, the Gaussian probability mass times the Hamming distance of the
    Gray labels. Used as an independent check on the Monte-Carlo detector.
    """
    es_n0 = 10.0 ** (np.asarray(snr_db, dtype=np.float64) / 10.0)
    sigma = np.sqrt(42.0 / (2.0 * es_n0))  # per-axis std in unscaled level units
    levels = _LEVELS_BY_CODE
    edges = np.array([-np.inf, -6, -4, -2, 0, 2, 4, 6, np.inf], dtype=np.float64)
    order = np.argsort(levels)
    codes_sorted = np.arange(8)[order]
    total = np.zeros_like(sigma)
    for tx in range(8):
        for region in range(8):
            lo = (edges[region] - levels[tx]) / sigma
            hi = (edges[region + 1] - levels[tx]) / sigma
            mass = _q(lo) - _q(hi)
            rx = codes_sorted[region]
            total = total + mass * bin(tx ^ rx).count("1")
    return total / (8.0 * 3.0)


def ber_sweep(snr_list, n_symbols: int, seed: int = 0) -> list[dict]:
    """Monte-Carlo 64-QAM bit error rate and measured noise power per SNR."""
    rows = []
    for snr in snr_list:
        cfg = ChannelConfig(float(snr), seed)
        rng = np.random.default_rng([int(seed), int(round(float(snr) * 1000)) + 1_000_000])
        bits = rng.integers(0, 2, size=n_symbols * BITS_PER_SYMBOL)
        tx = qam64_modulate(bits)
        rx = awgn(tx, cfg, rng)
        errors = np.count_nonzero(qam64_demodulate(rx) != bits)
        rows.append({
            "snr_db": float(snr),
            "ber": errors / bits.size,
            "empirical_noise_power": float(np.mean(np.abs(rx - tx) ** 2)),
        })
    return rows
