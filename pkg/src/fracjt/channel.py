"""Block-fading 2x2 channel model with 3GPP pico-cell large-scale parameters.

Small-scale fading is i.i.d. circularly-symmetric complex Gaussian per frame;
pathloss plus quasi-static log-normal shadowing set the per-link amplitude.
The overall gain scale is calibrated so the mean received SNR at the cell-edge
reference distance hits the configured target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .precoding import is_invertible

RngLike = "int | np.random.Generator"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def pathloss_db(d_km: float) -> float:
    """Pico-cell pathloss 140.7 + 36.7 log10(d) dB for distance d in km."""
    if d_km <= 0:
        raise ValueError(f"distance must be positive, got {d_km} km")
    return 140.7 + 36.7 * math.log10(d_km)


@dataclass
class ChannelModelParams:
    """Geometry, shadowing, and SNR-calibration parameters.

    distances_km[i][k] is the distance from BS k to user i.  The calibration
    pins the mean received SNR (over fading and shadowing) at
    ``edge_distance_km`` to ``edge_snr_db`` for transmit power
    ``ref_tx_power_dbm``.
    """

    distances_km: tuple = ((0.05, 0.05), (0.05, 0.05))
    shadowing_std_db: float = 10.0
    edge_snr_db: float = 10.0
    ref_tx_power_dbm: float = 30.0
    noise_variance: float = 1.0
    frame_length: float = 1.0
    edge_distance_km: float = 0.05

    def __post_init__(self):
        for row in self.distances_km:
            for d in row:
                if d <= 0:
                    raise ValueError(f"distances must be positive, got {d}")
        if self.shadowing_std_db < 0:
            raise ValueError("shadowing_std_db must be >= 0")
        if self.noise_variance <= 0:
            raise ValueError("noise_variance must be positive")
        if self.frame_length <= 0:
            raise ValueError("frame_length must be positive")
        if self.edge_distance_km <= 0:
            raise ValueError("edge_distance_km must be positive")


@dataclass
class ChannelMatrix:
    """2x2 channel H (rows = users, columns = BSs) with its large-scale part."""

    entries: np.ndarray
    large_scale: np.ndarray

    @property
    def gains(self) -> np.ndarray:
        return np.abs(self.entries) ** 2


def calibration_gain(params: ChannelModelParams) -> float:
    """Power-gain scale making the edge-reference mean SNR hit the target.

    The mean is taken over both unit-power fading and log-normal shadowing
    (analytic log-normal mean), so Monte-Carlo averages converge to the
    configured edge SNR.
    """
    p_ref_w = 10.0 ** ((params.ref_tx_power_dbm - 30.0) / 10.0)
    target = 10.0 ** (params.edge_snr_db / 10.0)
    pl_lin = 10.0 ** (-pathloss_db(params.edge_distance_km) / 10.0)
    eta = math.log(10.0) / 10.0 * params.shadowing_std_db
    shadow_mean = math.exp(0.5 * eta * eta)
    return target * params.noise_variance / (p_ref_w * pl_lin * shadow_mean)


def draw_large_scale(params: ChannelModelParams, rng, size: int | None = None) -> np.ndarray:
    """Per-link amplitude factors l_ik combining pathloss, shadowing and calibration.

    Returns shape (2, 2), or (size, 2, 2) when ``size`` is given.
    """
    rng = as_generator(rng)
    kappa = calibration_gain(params)
    pl = np.array([[pathloss_db(d) for d in row] for row in params.distances_km])
    shape = (2, 2) if size is None else (size, 2, 2)
    shadow_db = rng.normal(0.0, params.shadowing_std_db, size=shape)
    gain = kappa * 10.0 ** ((-pl + shadow_db) / 10.0)
    return np.sqrt(gain)


def draw_small_scale(rng, size: int | None = None) -> np.ndarray:
    """Unit-variance circularly-symmetric complex Gaussian entries."""
    rng = as_generator(rng)
    shape = (2, 2) if size is None else (size, 2, 2)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / math.sqrt(2.0)


def sample_channel(params: ChannelModelParams, rng) -> ChannelMatrix:
    """One full channel draw: fresh shadowing and fresh small-scale fading.

    Singular draws (relative guard 1e-12) are resampled internally.
    """
    rng = as_generator(rng)
    large = draw_large_scale(params, rng)
    while True:
        h = large * draw_small_scale(rng)
        if is_invertible(h):
            return ChannelMatrix(entries=h, large_scale=large)


@dataclass
class ChannelGrid:
    """Finite channel-state set with stationary probabilities.

    Fading is i.i.d. across frames, so the transition row out of any state
    equals ``stationary_probs``.
    """

    states: list = field(default_factory=list)
    stationary_probs: np.ndarray = field(default_factory=lambda: np.array([]))

    def __post_init__(self):
        if len(self.states) == 0:
            raise ValueError("channel grid needs at least one state")
        p = np.asarray(self.stationary_probs, dtype=float)
        if p.shape != (len(self.states),) or np.any(p < 0):
            raise ValueError("stationary_probs must be nonnegative, one per state")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError(f"stationary_probs sum {p.sum()} != 1")
        self.stationary_probs = p

    @property
    def n_states(self) -> int:
        return len(self.states)

    def transition_probs(self, from_idx: int | None = None) -> np.ndarray:
        # i.i.d. block fading: identical row for every current state
        return self.stationary_probs

    def classify(self, h: np.ndarray) -> int:
        """Index of the representative closest to h in entry space."""
        feats = _entry_features(h[None, :, :])
        reps = np.stack([_entry_features(s.entries[None, :, :])[0] for s in self.states])
        d2 = np.sum((reps - feats[0]) ** 2, axis=1)
        return int(np.argmin(d2))


def _entry_features(h: np.ndarray) -> np.ndarray:
    """Flatten (n, 2, 2) complex entries to (n, 8) real vectors."""
    flat = h.reshape(h.shape[0], 4)
    return np.concatenate([flat.real, flat.imag], axis=1)


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator, n_iter: int = 40):
    """Deterministic Lloyd's k-means with k-means++ seeding."""
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[int(rng.integers(n))]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        tot = float(d2.sum())
        if tot <= 0:
            centroids[j] = x[int(rng.integers(n))]
        else:
            centroids[j] = x[int(rng.choice(n, p=d2 / tot))]
        d2 = np.minimum(d2, np.sum((x - centroids[j]) ** 2, axis=1))
    assign = np.zeros(n, dtype=int)
    for _ in range(n_iter):
        dist = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(dist, axis=1)
        for j in range(k):
            members = x[new_assign == j]
            if len(members) == 0:
                # reseed an empty cluster at the farthest point
                far = int(np.argmax(np.min(dist, axis=1)))
                centroids[j] = x[far]
                new_assign[far] = j
            else:
                centroids[j] = members.mean(axis=0)
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    return centroids, assign


def build_channel_grid(
    params: ChannelModelParams,
    n_states: int,
    n_calib_samples: int,
    rng,
) -> ChannelGrid:
    """Cluster sampled channels into a finite grid with stationary probabilities.

    Shadowing is drawn once (quasi-static over the experiment); the samples
    vary only in small-scale fading.  Representatives are cluster medoids
    (the member nearest each centroid): a plain centroid of near-zero-mean
    complex fading cancels phase and shrinks the gains several-fold, which
    would push the discretized process into the wrong SNR regime.  Medoids
    are real draws, so they also pass the invertibility guard by construction.
    """
    if n_states < 1:
        raise ValueError(f"n_states must be >= 1, got {n_states}")
    if n_calib_samples < n_states:
        raise ValueError("need at least n_states calibration samples")
    rng = as_generator(rng)
    large = draw_large_scale(params, rng)
    samples = np.empty((n_calib_samples, 2, 2), dtype=complex)
    i = 0
    while i < n_calib_samples:
        h = large * draw_small_scale(rng)
        if is_invertible(h):
            samples[i] = h
            i += 1
    feats = _entry_features(samples)
    if n_states == 1:
        centroids = feats.mean(axis=0, keepdims=True)
        assign = np.zeros(n_calib_samples, dtype=int)
    else:
        centroids, assign = _kmeans(feats, n_states, rng)
    states = []
    reps = np.empty((n_states, feats.shape[1]))
    for j in range(n_states):
        members = np.where(assign == j)[0]
        d2 = np.sum((feats[members] - centroids[j]) ** 2, axis=1)
        pick = members[int(np.argmin(d2))]
        reps[j] = feats[pick]
        states.append(ChannelMatrix(entries=samples[pick], large_scale=large.copy()))
    # probabilities from reassignment to the medoids, consistent with classify()
    dist = np.sum((feats[:, None, :] - reps[None, :, :]) ** 2, axis=2)
    counts = np.bincount(np.argmin(dist, axis=1), minlength=n_states).astype(float)
    return ChannelGrid(states=states, stationary_probs=counts / counts.sum())


def save_grid(grid: ChannelGrid, path) -> None:
    """Plain-text grid: one state per line (4 complex tokens, row-major),
    stationary probabilities on the trailing line."""
    lines = []
    for s in grid.states:
        toks = [format(complex(v), ".17g") for v in s.entries.reshape(4)]
        lines.append(" ".join(toks))
    lines.append(" ".join(format(float(p), ".17g") for p in grid.stationary_probs))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_grid(path) -> ChannelGrid:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if len(lines) < 2:
        raise ValueError(f"{path}: grid file needs states plus a probability line")
    states = []
    for ln in lines[:-1]:
        vals = [complex(tok) for tok in ln.split()]
        if len(vals) != 4:
            raise ValueError(f"{path}: expected 4 complex tokens per state line")
        entries = np.array(vals, dtype=complex).reshape(2, 2)
        states.append(ChannelMatrix(entries=entries, large_scale=np.ones((2, 2))))
    probs = np.array([float(tok) for tok in lines[-1].split()])
    return ChannelGrid(states=states, stationary_probs=probs)
