"""FMCW baseband signal simulation for scenes of specular point scatterers.

The forward model phase term is the conjugate of the imaging kernel, so a
scatterer at distance d contributes exp(-j*2*pi*(2d)/lambda_t) at sensor k and
sample t, weighted by a Gaussian specular lobe around its surface normal.
No path loss is applied.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import MissingNormalsError, ParseError, SensorCoincidesWithPointError
from .geometry import OrientedPointCloud, as_point3

_SIG_MAGIC = b"MMSIG1"


@dataclass
class SensorArray:
    """Known sensor positions plus a nominal boresight direction."""

    positions: np.ndarray
    boresight: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) < 1:
            raise ValueError("array needs at least one sensor")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("sensor positions must be finite")
        self.boresight = as_point3(self.boresight)
        norm = np.linalg.norm(self.boresight)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError("boresight must be unit length")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class Waveform:
    """Stepped-frequency sweep: sample t has wavelength c / (f0 + B*t/(T-1))."""

    start_frequency: float = 77e9
    bandwidth: float = 4e9
    num_samples: int = 256

    def __post_init__(self):
        if self.start_frequency <= 0 or self.bandwidth <= 0:
            raise ValueError("start_frequency and bandwidth must be > 0")
        if self.num_samples < 2:
            raise ValueError("num_samples must be >= 2")

    def frequencies(self) -> np.ndarray:
        t = np.arange(self.num_samples, dtype=np.float64)
        return self.start_frequency + self.bandwidth * t / (self.num_samples - 1)

    def wavelengths(self) -> np.ndarray:
        return SPEED_OF_LIGHT / self.frequencies()


@dataclass
class SignalSet:
    """Complex baseband samples, one row per sensor."""

    samples: np.ndarray
    array: SensorArray
    waveform: Waveform

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        expected = (len(self.array), self.waveform.num_samples)
        if self.samples.shape != expected:
            raise ValueError(f"samples shape {self.samples.shape} != {expected}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    def power(self) -> float:
        """Mean |h|^2 over all entries."""
        return float(np.mean(np.abs(self.samples) ** 2))


def planar_array(rows: int, cols: int, extent: float, distance: float, direction=(0.0, 0.0, 1.0)) -> SensorArray:
    """Grid of sensors on a plane at ``distance`` along ``direction``, looking back at the origin."""
    d = as_point3(direction)
    d = d / np.linalg.norm(d)
    # orthonormal in-plane basis
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    su = np.linspace(-extent / 2, extent / 2, cols) if cols > 1 else np.array([0.0])
    sv = np.linspace(-extent / 2, extent / 2, rows) if rows > 1 else np.array([0.0])
    uu, vv = np.meshgrid(su, sv, indexing="xy")
    pos = distance * d + uu.reshape(-1, 1) * u + vv.reshape(-1, 1) * v
    return SensorArray(positions=pos, boresight=-d)


def dome_array(n_rings: int, per_ring: int, radius: float, max_polar_deg: float, direction=(0.0, 0.0, 1.0)) -> SensorArray:
    """Sensors on a spherical cap of the given radius around ``direction``.

    Ring 0 is the single apex sensor; rings 1..n_rings-1 are evenly spaced in
    polar angle up to ``max_polar_deg``.
    """
    d = as_point3(direction)
    d = d / np.linalg.norm(d)
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    positions = [radius * d]
    for i in range(1, n_rings):
        phi = np.radians(max_polar_deg) * i / (n_rings - 1)
        for j in range(per_ring):
            th = 2 * np.pi * j / per_ring
            positions.append(radius * (np.cos(phi) * d + np.sin(phi) * (np.cos(th) * u + np.sin(th) * v)))
    return SensorArray(positions=np.asarray(positions), boresight=-d)


def simulate_signals(
    scene: OrientedPointCloud,
    array: SensorArray,
    waveform: Waveform,
    specular_sigma: float = 0.35,
    apply_hpr: bool = False,
) -> SignalSet:
    """Simulate h_k(t) = sum_i a_i * w_k(s_i) * exp(-j*2*pi*(2*||p_k - s_i||)/lambda_t).

    w_k(s_i) = exp(-(theta/specular_sigma)^2) with theta the angle between the
    point normal and the unit vector from the point toward sensor k. An empty
    scene yields all-zero samples. With ``apply_hpr`` the scene is first
    reduced to points visible from at least one sensor.
    """
    if specular_sigma <= 0:
        raise ValueError("specular_sigma must be > 0")
    n_sensors, n_samples = len(array), waveform.num_samples
    if len(scene) == 0:
        return SignalSet(np.zeros((n_sensors, n_samples), dtype=np.complex128), array, waveform)
    if scene.normals is None:
        raise MissingNormalsError("simulate_signals needs scene normals")

    if apply_hpr:
        from .partial import radar_facing_union_mask

        scene = scene.subset(radar_facing_union_mask(scene, array.positions))

    amp = scene.reflectivity if scene.reflectivity is not None else np.ones(len(scene))
    inv_lambda = 1.0 / waveform.wavelengths()  # (T,)
    samples = np.empty((n_sensors, n_samples), dtype=np.complex128)
    for k in range(n_sensors):
        delta = array.positions[k] - scene.points  # (I, 3)
        dist = np.linalg.norm(delta, axis=1)
        if np.any(dist < 1e-12):
            raise SensorCoincidesWithPointError(f"sensor {k} coincides with a scene point")
        cosang = np.clip(np.einsum("ij,ij->i", scene.normals, delta / dist[:, None]), -1.0, 1.0)
        theta = np.arccos(cosang)
        w = np.exp(-((theta / specular_sigma) ** 2))
        phase = (-4j * np.pi) * np.outer(dist, inv_lambda)  # (I, T)
        samples[k] = (amp * w) @ np.exp(phase)
    return SignalSet(samples, array, waveform)


def add_signal_noise(signals: SignalSet, snr_db: float, seed: int) -> SignalSet:
    """Add circularly-symmetric complex Gaussian noise at the given SNR.

    Noise power is mean signal power / 10^(snr_db/10); a zero-power signal is
    returned unchanged.
    """
    p_sig = signals.power()
    if p_sig == 0.0:
        return SignalSet(signals.samples.copy(), signals.array, signals.waveform)
    p_noise = p_sig / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    shape = signals.samples.shape
    noise = np.sqrt(p_noise / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return SignalSet(signals.samples + noise, signals.array, signals.waveform)


def save_signals(signals: SignalSet, path) -> None:
    """Flat binary: magic, N, T, f0, B (64-bit LE), complex64 samples, float64 positions."""
    n, t = signals.samples.shape
    with open(path, "wb") as fh:
        fh.write(_SIG_MAGIC)
        fh.write(struct.pack("<qqdd", n, t, signals.waveform.start_frequency, signals.waveform.bandwidth))
        fh.write(signals.samples.astype("<c8").tobytes())
        fh.write(signals.array.positions.astype("<f8").tobytes())


def load_signals(path, boresight=(0.0, 0.0, -1.0)) -> SignalSet:
    """Inverse of :func:`save_signals`. Boresight is not stored; pass it if it matters."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(_SIG_MAGIC))
        if magic != _SIG_MAGIC:
            raise ParseError(f"{path.name}: bad signal-file magic {magic!r}")
        header = fh.read(struct.calcsize("<qqdd"))
        if len(header) != struct.calcsize("<qqdd"):
            raise ParseError(f"{path.name}: truncated header")
        n, t, f0, bw = struct.unpack("<qqdd", header)
        if n < 1 or t < 2:
            raise ParseError(f"{path.name}: invalid dimensions N={n}, T={t}")
        want = n * t * 8
        buf = fh.read(want)
        if len(buf) != want:
            raise ParseError(f"{path.name}: truncated samples")
        samples = np.frombuffer(buf, dtype="<c8").reshape(n, t).astype(np.complex128)
        want = n * 3 * 8
        buf = fh.read(want)
        if len(buf) != want:
            raise ParseError(f"{path.name}: truncated sensor positions")
        positions = np.frombuffer(buf, dtype="<f8").reshape(n, 3).copy()
    return SignalSet(
        samples=samples,
        array=SensorArray(positions=positions, boresight=boresight),
        waveform=Waveform(start_frequency=f0, bandwidth=bw, num_samples=t),
    )
