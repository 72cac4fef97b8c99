"""DFT beam codebook, achievable rate, and the exhaustive-search beam oracle."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RateParams:
    """Per-subcarrier SNR (linear) and mmWave subcarrier count."""

    snr_linear: float
    k_mmw: int

    def __post_init__(self):
        if self.snr_linear <= 0:
            raise ValueError(f"snr_linear must be > 0, got {self.snr_linear}")
        if self.k_mmw < 1:
            raise ValueError(f"k_mmw must be >= 1, got {self.k_mmw}")

    @property
    def snr_db(self) -> float:
        return float(10.0 * np.log10(self.snr_linear))


@dataclass(frozen=True)
class Codebook:
    """Set of candidate beamforming vectors; columns are unit-norm beams."""

    beams: np.ndarray  # (n_antennas, n_beams) complex

    def __post_init__(self):
        norms = np.linalg.norm(self.beams, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("codebook columns must have unit norm")

    @property
    def n_antennas(self) -> int:
        return self.beams.shape[0]

    @property
    def n_beams(self) -> int:
        return self.beams.shape[1]


def dft_codebook(n_mmw: int) -> Codebook:
    """DFT codebook: beam q entry m is exp(j*2*pi*m*q/n)/sqrt(n); orthonormal columns."""
    if n_mmw < 1:
        raise ValueError(f"n_mmw must be >= 1, got {n_mmw}")
    m = np.arange(n_mmw).reshape(-1, 1)
    q = np.arange(n_mmw).reshape(1, -1)
    return Codebook(np.exp(2j * np.pi * m * q / n_mmw) / np.sqrt(n_mmw))


def _check_channel(h: np.ndarray, n_antennas: int, params: RateParams) -> None:
    if h.ndim != 2 or h.shape != (n_antennas, params.k_mmw):
        raise ValueError(
            f"channel shape {h.shape} does not match {n_antennas} antennas x "
            f"{params.k_mmw} subcarriers"
        )


def achievable_rate(h: np.ndarray, w: np.ndarray, params: RateParams) -> float:
    """Sum over subcarriers of log2(1 + snr * |h[k]^T w|^2), in bits/s/Hz."""
    _check_channel(h, len(w), params)
    proj = h.T @ w
    return float(np.sum(np.log2(1.0 + params.snr_linear * np.abs(proj) ** 2)))


def per_subcarrier_rate(h: np.ndarray, w: np.ndarray, params: RateParams) -> float:
    """achievable_rate normalized by the subcarrier count (the SE figure)."""
    return achievable_rate(h, w, params) / params.k_mmw


def beam_rates(h: np.ndarray, codebook: Codebook, params: RateParams) -> np.ndarray:
    """Achievable rate of every codebook beam, as one vector."""
    _check_channel(h, codebook.n_antennas, params)
    proj = h.T @ codebook.beams  # (k, n_beams)
    return np.sum(np.log2(1.0 + params.snr_linear * np.abs(proj) ** 2), axis=0)


def optimal_beam(h: np.ndarray, codebook: Codebook, params: RateParams) -> tuple[int, float]:
    """Exhaustive search over the codebook; ties broken toward the lowest index."""
    if not np.any(h):
        raise ValueError("degenerate channel: all entries are zero")
    rates = beam_rates(h, codebook, params)
    idx = int(np.argmax(rates))
    return idx, float(rates[idx])


def topk_beams_rate(h: np.ndarray, codebook: Codebook, params: RateParams, indices) -> float:
    """Best achievable rate among the candidate beam indices."""
    indices = np.asarray(indices, dtype=int)
    if indices.size < 1:
        raise ValueError("need at least one candidate beam index")
    if np.any(indices < 0) or np.any(indices >= codebook.n_beams):
        raise ValueError(
            f"beam index out of range [0, {codebook.n_beams}): {indices.tolist()}"
        )
    # computed from the same full scan as optimal_beam so values agree exactly
    rates = beam_rates(h, codebook, params)
    return float(np.max(rates[indices]))
