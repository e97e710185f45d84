"""Boundary observations: extraction of normal-derivative traces from a
solved trajectory, synthetic measurement noise, the trace targets fed to the
weighted least-squares functional, and an energy check that the observed
traces are controlled by the data that generated them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .grid import (SpaceTimeGrid, apply_laplacian, boundary_normal_derivative,
                   discrete_norms, time_difference, trapezoid_weights)
from .solver import InitialData, Trajectory


@dataclass(frozen=True)
class ObservationData:
    """Normal-derivative samples of the state at one endpoint, level by level."""

    side: str
    samples: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        if self.samples.ndim != 1 or self.samples.size < 5:
            raise ValueError("observation needs at least five time samples")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


@dataclass(frozen=True)
class MuPair:
    """Trace targets for the least-squares functional: mu and its rate."""

    side: str
    mu: np.ndarray
    mu_t: np.ndarray
    dt: float


def extract_observation(traj: Trajectory, side: str) -> ObservationData:
    """Sample the outward normal derivative of the state on one endpoint."""
    samples = np.array([boundary_normal_derivative(traj.u[n], traj.grid, side)
                        for n in range(traj.grid.nt)])
    return ObservationData(side, samples, traj.grid.dt)


def both_endpoint_observations(traj: Trajectory) -> list:
    return [extract_observation(traj, side) for side in ("left", "right")]


def perturb_with_noise(obs: ObservationData, level: float,
                       rng: np.random.Generator) -> ObservationData:
    """Additive Gaussian noise scaled to the series amplitude.

    The standard deviation is ``level * max |samples|``, so ``level`` reads
    as a relative noise magnitude; level 0 returns the samples unchanged.
    """
    if level < 0:
        raise ValueError(f"noise level must be nonnegative, got {level}")
    if level == 0.0:
        return obs
    scale = level * np.abs(obs.samples).max()
    noisy = obs.samples + rng.normal(0.0, scale, size=obs.samples.shape)
    return ObservationData(obs.side, noisy, obs.dt)


def _moving_average(samples: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return samples
    padded = np.pad(samples, window, mode="reflect")
    kernel = np.ones(window) / window
    smoothed = np.convolve(padded, kernel, mode="same")
    return smoothed[window:-window]


def build_mu(obs_iterate: ObservationData, obs_data: ObservationData,
             smooth_window: int = 0) -> MuPair:
    """Trace targets from the mismatch between an iterate and the data.

    The auxiliary variable the functional reconstructs is the time
    derivative of (iterate - truth), so the target is the first time
    derivative of the trace mismatch and its rate is the second.  An
    optional moving average tames measurement noise before differencing.
    """
    if obs_iterate.side != obs_data.side:
        raise ValueError("observations were taken on different endpoints")
    if obs_iterate.samples.shape != obs_data.samples.shape:
        raise ValueError("observations have different lengths")
    if obs_iterate.dt != obs_data.dt:
        raise ValueError("observations have different time steps")
    mismatch = _moving_average(obs_iterate.samples - obs_data.samples,
                               int(smooth_window))
    mu = time_difference(mismatch, obs_iterate.dt, 1)
    mu_t = time_difference(mu, obs_iterate.dt, 1)
    return MuPair(obs_iterate.side, mu, mu_t, obs_iterate.dt)


def zero_mu(side: str, nt: int, dt: float) -> MuPair:
    z = np.zeros(nt)
    return MuPair(side, z, z.copy(), dt)


# ---------------------------------------------------------------------------
# trace energy versus data energy
# ---------------------------------------------------------------------------

@dataclass
class HiddenRegularityReport:
    trace_energy: float
    data_energy: float
    ratio: float


def _initial_data_energy(data: InitialData, f: Optional[np.ndarray],
                         grid: SpaceTimeGrid) -> float:
    """Squared strength of the generating data: two derivatives on the
    displacement, one on the velocity, none on the acceleration, plus the
    space-time norm of the source."""
    qx = trapezoid_weights(grid.nx, grid.h)
    u0x = np.gradient(data.u0, grid.h, edge_order=2)
    u0xx = apply_laplacian(data.u0, grid)
    u1x = np.gradient(data.u1, grid.h, edge_order=2)
    total = float(qx @ (data.u0 ** 2 + u0x ** 2 + u0xx ** 2)
                  + qx @ (data.u1 ** 2 + u1x ** 2)
                  + qx @ (data.u2 ** 2))
    if f is not None:
        total += discrete_norms(np.asarray(f, dtype=float), grid, "l2_l2")
    return total


def hidden_regularity_check(traj: Trajectory, data: InitialData,
                            f: Optional[np.ndarray],
                            observations) -> HiddenRegularityReport:
    """Trace energy of the normal derivative against the generating data.

    ``observations`` is a single :class:`ObservationData` or a sequence of
    them; energies over several endpoints add.  The trace energy integrates
    the squared trace and its first time derivative over (0, T); the ratio
    to the data energy is the empirical constant of the boundary-regularity
    bound and should not blow up under grid refinement.
    """
    if isinstance(observations, ObservationData):
        observations = [observations]
    elif not observations:
        raise ValueError("need at least one observation series")
    trace_energy = 0.0
    for obs in observations:
        if obs.samples.size != traj.grid.nt:
            raise ValueError("observation length does not match the grid")
        trace_energy += discrete_norms(obs.samples, traj.grid, "h1_trace")
    data_energy = _initial_data_energy(data, f, traj.grid)
    ratio = trace_energy / data_energy if data_energy > 0 else 0.0
    return HiddenRegularityReport(float(trace_energy), float(data_energy), float(ratio))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def write_observation_csv(obs: ObservationData, path) -> None:
    """Two columns, time and sample, full double precision."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", f"normal_derivative_{obs.side}"])
        for n, value in enumerate(obs.samples):
            writer.writerow([format(n * obs.dt, ".17g"), format(value, ".17g")])


def read_observation_csv(path, side: str) -> ObservationData:
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    times = np.array([float(row[0]) for row in rows[1:]])
    samples = np.array([float(row[1]) for row in rows[1:]])
    return ObservationData(side, samples, float(times[1] - times[0]))
