"""Synthetic dual-band geometric channel generation.

One base station carries co-located sub-6 GHz and mmWave uniform linear
arrays (boresight along +x) and serves user positions on a rectangular
grid. Both bands see the same propagation geometry — one deterministic LOS
path per user plus a random number of NLOS paths with shared departure
angles and delays — while complex path gains are band specific. This keeps
the cross-band spatial correlation that makes beam prediction from sub-6
GHz channels possible, without any ray-tracing dependency.

Channel matrices are stored in complex64 so that the on-disk format
(float32) round-trips bit-exactly.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import fileio

SPEED_OF_LIGHT = 299792458.0

# Mean excess delay of NLOS paths (~30 m extra path length).
NLOS_DELAY_SPREAD_S = 1e-7

CHANNEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class UeGrid:
    """Rectangular user-position grid, row-major: rows scan y, columns scan x."""

    origin: tuple[float, float]
    step: tuple[float, float]
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"ue_grid: rows and cols must be >= 1, got {self.rows}x{self.cols}")
        if self.step[0] <= 0 or self.step[1] <= 0:
            raise ValueError(f"ue_grid: step must be positive, got {self.step}")

    @property
    def n_positions(self) -> int:
        return self.rows * self.cols

    def positions(self) -> np.ndarray:
        """All positions as an (rows*cols, 2) float64 array."""
        xs = self.origin[0] + self.step[0] * np.arange(self.cols)
        ys = self.origin[1] + self.step[1] * np.arange(self.rows)
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry and numerology of the two-band scenario."""

    n_sub6: int
    n_mmw: int
    k_sub6: int
    k_mmw: int
    bw_sub6_hz: float
    bw_mmw_hz: float
    fc_sub6_hz: float
    fc_mmw_hz: float
    ue_grid: UeGrid
    bs_position: tuple[float, float] = (0.0, 0.0)
    spacing_wavelengths: float = 0.5
    max_paths: int = 5
    nlos_gain_db: float = -10.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_sub6", "n_mmw", "k_sub6", "k_mmw"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("bw_sub6_hz", "bw_mmw_hz", "fc_sub6_hz", "fc_mmw_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.fc_mmw_hz <= self.fc_sub6_hz:
            raise ValueError(
                f"fc_mmw_hz ({self.fc_mmw_hz}) must exceed fc_sub6_hz ({self.fc_sub6_hz})"
            )
        if self.spacing_wavelengths <= 0:
            raise ValueError(f"spacing_wavelengths must be > 0, got {self.spacing_wavelengths}")
        if self.max_paths < 1:
            raise ValueError(f"max_paths must be >= 1, got {self.max_paths}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        positions = self.ue_grid.positions()
        dx = positions[:, 0] - self.bs_position[0]
        dy = positions[:, 1] - self.bs_position[1]
        if np.any((dx == 0) & (dy == 0)):
            raise ValueError("ue_grid: a grid position coincides with bs_position")
        # ULA boresight is +x; users behind the array would need |aod| >= pi/2.
        if np.any(dx <= 0):
            raise ValueError("ue_grid: all positions must satisfy x > bs_position x")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ue_grid"] = {
            "origin": list(self.ue_grid.origin),
            "step": list(self.ue_grid.step),
            "rows": self.ue_grid.rows,
            "cols": self.ue_grid.cols,
        }
        d["bs_position"] = list(self.bs_position)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        g = d["ue_grid"]
        grid = UeGrid(
            origin=tuple(g["origin"]), step=tuple(g["step"]), rows=g["rows"], cols=g["cols"]
        )
        fields = {k: v for k, v in d.items() if k not in ("ue_grid", "bs_position")}
        return cls(ue_grid=grid, bs_position=tuple(d["bs_position"]), **fields)


@dataclass(frozen=True)
class PathComponent:
    """One propagation path of one band: departure angle, delay, complex gain."""

    aod_rad: float
    delay_s: float
    gain: complex


@dataclass(frozen=True)
class ChannelSample:
    """Dual-band channel of one user position."""

    ue_position: np.ndarray  # (2,) float32
    h_sub6: np.ndarray  # (n_sub6, k_sub6) complex64
    h_mmw: np.ndarray  # (n_mmw, k_mmw) complex64


def steering_vector(n: int, spacing: float, aod: float) -> np.ndarray:
    """ULA response a(aod): entry m is exp(-j*2*pi*spacing*m*sin(aod))."""
    if n < 1:
        raise ValueError(f"antenna count must be >= 1, got {n}")
    phase = -2.0 * np.pi * spacing * np.sin(aod) * np.arange(n)
    return np.exp(1j * phase)


def draw_paths(cfg: ScenarioConfig, ue_position, rng) -> tuple[list[PathComponent], list[PathComponent]]:
    """Draw the path set of one user for both bands.

    The LOS path is deterministic from geometry: departure angle from the
    BS-user bearing, delay = distance / c, amplitude 1/distance with the
    carrier phase exp(-j*2*pi*fc*delay) of each band. NLOS paths (a uniform
    random count in 0..max_paths-1) share angle and delay across bands,
    carry a common Rayleigh magnitude at `nlos_gain_db` mean power below
    LOS, and get an independent uniform phase per band.

    Returns (sub6_paths, mmw_paths) with identical geometry in both lists.
    """
    dx = float(ue_position[0]) - cfg.bs_position[0]
    dy = float(ue_position[1]) - cfg.bs_position[1]
    dist = float(np.hypot(dx, dy))
    if dist == 0.0:
        raise ValueError("ue_position coincides with bs_position")
    los_aod = float(np.arctan2(dy, dx))
    los_delay = dist / SPEED_OF_LIGHT
    los_amp = 1.0 / dist

    def los_gain(fc):
        return los_amp * np.exp(-2j * np.pi * fc * los_delay)

    sub6 = [PathComponent(los_aod, los_delay, complex(los_gain(cfg.fc_sub6_hz)))]
    mmw = [PathComponent(los_aod, los_delay, complex(los_gain(cfg.fc_mmw_hz)))]

    nlos_power = los_amp**2 * 10.0 ** (cfg.nlos_gain_db / 10.0)
    n_nlos = int(rng.integers(0, cfg.max_paths))
    for _ in range(n_nlos):
        aod = float(rng.uniform(-np.pi / 2, np.pi / 2))
        delay = los_delay + float(rng.exponential(NLOS_DELAY_SPREAD_S))
        mag = float(rng.rayleigh(np.sqrt(nlos_power / 2.0)))
        phase_sub6 = float(rng.uniform(0.0, 2.0 * np.pi))
        phase_mmw = float(rng.uniform(0.0, 2.0 * np.pi))
        sub6.append(PathComponent(aod, delay, complex(mag * np.exp(1j * phase_sub6))))
        mmw.append(PathComponent(aod, delay, complex(mag * np.exp(1j * phase_mmw))))
    return sub6, mmw


def synthesize_channel(paths, n: int, k: int, bw_hz: float, spacing: float = 0.5) -> np.ndarray:
    """Frequency response over `k` subcarriers of bandwidth `bw_hz`.

    Column q is sum_l gain_l * exp(-j*2*pi*q*bw_hz*delay_l/k) * a(aod_l).
    """
    if not paths:
        raise ValueError("no propagation paths")
    h = np.zeros((n, k), dtype=np.complex128)
    freqs = np.arange(k) * (bw_hz / k)
    for p in paths:
        sweep = np.exp(-2j * np.pi * freqs * p.delay_s)
        h += p.gain * np.outer(steering_vector(n, spacing, p.aod_rad), sweep)
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite channel entries")
    return h


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    # Philox keyed by (seed, sample index): sample i is independent of
    # generation order, so scenarios can be produced in parallel.
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def generate_scenario(cfg: ScenarioConfig) -> list[ChannelSample]:
    """One ChannelSample per grid position, deterministic given cfg.seed."""
    samples = []
    for i, pos in enumerate(cfg.ue_grid.positions()):
        rng = _sample_rng(cfg.seed, i)
        sub6_paths, mmw_paths = draw_paths(cfg, pos, rng)
        h_sub6 = synthesize_channel(
            sub6_paths, cfg.n_sub6, cfg.k_sub6, cfg.bw_sub6_hz, cfg.spacing_wavelengths
        )
        h_mmw = synthesize_channel(
            mmw_paths, cfg.n_mmw, cfg.k_mmw, cfg.bw_mmw_hz, cfg.spacing_wavelengths
        )
        samples.append(
            ChannelSample(
                ue_position=pos.astype(np.float32),
                h_sub6=h_sub6.astype(np.complex64),
                h_mmw=h_mmw.astype(np.complex64),
            )
        )
    return samples


def _interleave(h: np.ndarray) -> np.ndarray:
    # complex64 row-major viewed as float32 is exactly (re, im) interleaved
    return np.ascontiguousarray(h, dtype=np.complex64).view(np.float32).ravel()


def save_channel_file(path, cfg: ScenarioConfig, samples: list[ChannelSample]) -> None:
    """Write header + float32 payload; see load_channel_file for the layout."""
    header = {
        "format_version": CHANNEL_FORMAT_VERSION,
        "n_sub6": cfg.n_sub6,
        "k_sub6": cfg.k_sub6,
        "n_mmw": cfg.n_mmw,
        "k_mmw": cfg.k_mmw,
        "sample_count": len(samples),
        "seed": cfg.seed,
        "scenario": cfg.to_dict(),
    }
    with open(path, "wb") as fh:
        fileio.write_header(fh, header)
        for s in samples:
            fh.write(np.asarray(s.ue_position, dtype="<f4").tobytes())
            fh.write(_interleave(s.h_sub6).astype("<f4").tobytes())
            fh.write(_interleave(s.h_mmw).astype("<f4").tobytes())


def load_channel_file(path) -> tuple[ScenarioConfig, list[ChannelSample]]:
    """Inverse of save_channel_file; bit-exact round trip.

    Payload per sample: ue position (2 floats), then h_sub6 and h_mmw
    row-major with re/im interleaved, all little-endian float32.
    """
    with open(path, "rb") as fh:
        header = fileio.read_header(fh, str(path))
        fileio.check_version(header, CHANNEL_FORMAT_VERSION, str(path))
        try:
            n_sub6 = int(header["n_sub6"])
            k_sub6 = int(header["k_sub6"])
            n_mmw = int(header["n_mmw"])
            k_mmw = int(header["k_mmw"])
            count = int(header["sample_count"])
            cfg = ScenarioConfig.from_dict(header["scenario"])
        except (KeyError, TypeError, ValueError) as exc:
            raise fileio.MalformedHeaderError(f"{path}: bad header field ({exc})") from exc
        if (cfg.n_sub6, cfg.k_sub6, cfg.n_mmw, cfg.k_mmw) != (n_sub6, k_sub6, n_mmw, k_mmw):
            raise fileio.DimensionMismatchError(
                f"{path}: scenario dimensions disagree with top-level header fields"
            )
        per_sample = 2 + 2 * n_sub6 * k_sub6 + 2 * n_mmw * k_mmw
        data = fileio.read_payload(fh, 4 * per_sample * count, str(path))

    samples = []
    for i in range(count):
        base = i * per_sample
        pos = fileio.floats_from(data, 4 * base, 2).copy()
        f6 = fileio.floats_from(data, 4 * (base + 2), 2 * n_sub6 * k_sub6)
        fm = fileio.floats_from(data, 4 * (base + 2 + 2 * n_sub6 * k_sub6), 2 * n_mmw * k_mmw)
        samples.append(
            ChannelSample(
                ue_position=pos,
                h_sub6=f6.copy().view(np.complex64).reshape(n_sub6, k_sub6),
                h_mmw=fm.copy().view(np.complex64).reshape(n_mmw, k_mmw),
            )
        )
    return cfg, samples
