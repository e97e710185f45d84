"""Forward solver and energy diagnostics for the third-order-in-time model

    u_ttt + alpha(x) u_tt - c^2 u_xx - b u_txx = f,   u = 0 on the boundary,

with alpha parametrized by the damping offset gamma through
alpha = gamma + c^2 / b.  The equation is advanced as a first-order system in
(u, u_t, u_tt) by the trapezoidal (Crank-Nicolson) rule; the step matrix is
factored once per solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (SpaceTimeGrid, apply_laplacian, discrete_norms, laplacian_matrix,
                   time_derivative_matrix, trapezoid_weights)


class ForwardSolveError(RuntimeError):
    """Raised when the time stepping cannot be carried out."""


@dataclass
class MGTCoefficients:
    """Wave speed c, viscosity b > 0 and nodal damping offset gamma in [0, M]."""

    c: float
    b: float
    gamma: np.ndarray
    box_bound: float

    def __post_init__(self) -> None:
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.b <= 0:
            raise ValueError(f"b must be positive, got {self.b}")
        if self.c == 0:
            raise ValueError("wave speed c must be nonzero")
        if self.box_bound <= 0:
            raise ValueError(f"box bound must be positive, got {self.box_bound}")
        if self.gamma.ndim != 1:
            raise ValueError("gamma must be a one-dimensional nodal field")
        if self.gamma.min() < 0.0 or self.gamma.max() > self.box_bound:
            raise ValueError(
                f"gamma must lie in [0, {self.box_bound}], got range "
                f"[{self.gamma.min()}, {self.gamma.max()}]")

    @property
    def alpha(self) -> np.ndarray:
        return self.gamma + self.c ** 2 / self.b

    def with_gamma(self, gamma: np.ndarray) -> "MGTCoefficients":
        return MGTCoefficients(self.c, self.b, gamma, self.box_bound)


@dataclass
class InitialData:
    """Initial triple (u0, u1, u2) = (u, u_t, u_tt) at t = 0.

    u0 and u1 must vanish at the endpoints; u2 may not (the resulting t -> 0
    compatibility mismatch at the boundary is accepted).  When eta > 0 the
    acceleration profile must satisfy |u2| >= eta everywhere, which the
    reconstruction update divides by.
    """

    u0: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    eta: float = 0.0

    def __post_init__(self) -> None:
        self.u0 = np.asarray(self.u0, dtype=float)
        self.u1 = np.asarray(self.u1, dtype=float)
        self.u2 = np.asarray(self.u2, dtype=float)
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if not (self.u0.shape == self.u1.shape == self.u2.shape):
            raise ValueError("u0, u1, u2 must share one shape")
        scale = max(np.abs(self.u0).max(initial=0.0), np.abs(self.u1).max(initial=0.0), 1.0)
        for name, arr in (("u0", self.u0), ("u1", self.u1)):
            if max(abs(arr[0]), abs(arr[-1])) > 1e-9 * scale:
                raise ValueError(f"{name} must vanish at the boundary nodes")
        if self.eta > 0 and np.abs(self.u2).min() < self.eta:
            raise ValueError(
                f"|u2| >= eta = {self.eta} violated, min |u2| = {np.abs(self.u2).min()}")


@dataclass
class Trajectory:
    """Snapshots of u, u_t and u_tt on the full grid, shape (nt, nx) each."""

    grid: SpaceTimeGrid
    u: np.ndarray
    ut: np.ndarray
    utt: np.ndarray


def _system_matrix(coeffs: MGTCoefficients, grid: SpaceTimeGrid) -> sp.csr_matrix:
    """Generator of the first-order system d/dt (u, v, w) = A (u, v, w) + (0, 0, f).

    Boundary rows of the u and v blocks are zero so homogeneous Dirichlet data
    is preserved exactly; the boundary w rows keep only the damping term.
    """
    nx = grid.nx
    lap = laplacian_matrix(grid)
    interior = np.ones(nx)
    interior[0] = interior[-1] = 0.0
    eye_int = sp.diags(interior)
    zero = sp.csr_matrix((nx, nx))
    a = sp.bmat([
        [zero, eye_int, zero],
        [zero, zero, eye_int],
        [coeffs.c ** 2 * lap, coeffs.b * lap, sp.diags(-coeffs.alpha)],
    ], format="csr")
    return a


def solve_forward(coeffs: MGTCoefficients, data: InitialData, f: np.ndarray,
                  grid: SpaceTimeGrid) -> Trajectory:
    """Trapezoidal time stepping of the first-order system.

    ``f`` is the source sampled on the full grid, shape (nt, nx), or None for
    a source-free problem.  Returns the trajectory with snapshot 0 equal to
    the initial triple.
    """
    nx, nt = grid.nx, grid.nt
    f = np.zeros((nt, nx)) if f is None else np.asarray(f, dtype=float)
    if f.shape != (nt, nx):
        raise ValueError(f"source has shape {f.shape}, expected ({nt}, {nx})")
    if coeffs.gamma.shape != (nx,):
        raise ValueError(f"gamma has shape {coeffs.gamma.shape}, expected ({nx},)")
    if data.u0.shape != (nx,):
        raise ValueError(f"initial data has shape {data.u0.shape}, expected ({nx},)")

    a = _system_matrix(coeffs, grid)
    eye = sp.identity(3 * nx, format="csr")
    dt = grid.dt
    try:
        step = spla.splu((eye - 0.5 * dt * a).tocsc())
    except RuntimeError as exc:
        raise ForwardSolveError(f"step matrix factorization failed: {exc}") from exc
    forward = (eye + 0.5 * dt * a).tocsr()

    state = np.concatenate([data.u0, data.u1, data.u2])
    state[0] = state[nx - 1] = 0.0          # exact Dirichlet start on u and v
    state[nx] = state[2 * nx - 1] = 0.0

    u = np.empty((nt, nx))
    ut = np.empty((nt, nx))
    utt = np.empty((nt, nx))
    u[0], ut[0], utt[0] = data.u0, data.u1, data.u2

    rhs_buf = np.zeros(3 * nx)
    for n in range(nt - 1):
        rhs_buf[2 * nx:] = 0.5 * dt * (f[n] + f[n + 1])
        state = step.solve(forward @ state + rhs_buf)
        # boundary u and v rows are identity rows; scrub LU roundoff so the
        # Dirichlet condition holds exactly
        state[0] = state[nx - 1] = 0.0
        state[nx] = state[2 * nx - 1] = 0.0
        if not np.all(np.isfinite(state)):
            raise ForwardSolveError(f"non-finite state at time step {n + 1}")
        u[n + 1] = state[:nx]
        ut[n + 1] = state[nx:2 * nx]
        utt[n + 1] = state[2 * nx:]
    return Trajectory(grid, u, ut, utt)


# ---------------------------------------------------------------------------
# energies and verification ratios
# ---------------------------------------------------------------------------

def energy_e(y: np.ndarray, yt: np.ndarray, b: float, grid: SpaceTimeGrid) -> float:
    """E(y) = (b/2) ||y_x||^2 + (1/2) ||y_t||^2 with centered gradients."""
    y = np.asarray(y, dtype=float)
    yt = np.asarray(yt, dtype=float)
    grad = np.gradient(y, grid.h, edge_order=2)
    qx = trapezoid_weights(grid.nx, grid.h)
    return float(0.5 * b * qx @ grad ** 2 + 0.5 * qx @ yt ** 2)


def total_energy(traj: Trajectory, n: int, b: float) -> float:
    """Energy of the pair (u, u_t) at time level n: E(u_t) + E(u)."""
    return (energy_e(traj.ut[n], traj.utt[n], b, traj.grid)
            + energy_e(traj.u[n], traj.ut[n], b, traj.grid))


@dataclass
class EnergyBoundReport:
    max_energy: float
    initial_energy: float
    source_norm_sq: float
    ratio: float
    growth_flag: bool


def verify_energy_bound(traj: Trajectory, f: np.ndarray, b: float,
                        growth_threshold: float = 1e6) -> EnergyBoundReport:
    """Empirical constant in  max_t E_total(t) <= C (E_total(0) + ||f||^2)."""
    grid = traj.grid
    energies = np.array([total_energy(traj, n, b) for n in range(grid.nt)])
    fsq = discrete_norms(f, grid, "l2_l2") ** 2
    denom = energies[0] + fsq
    if denom == 0.0:
        ratio = 0.0 if energies.max() == 0.0 else np.inf
    else:
        ratio = float(energies.max() / denom)
    return EnergyBoundReport(float(energies.max()), float(energies[0]), float(fsq),
                             ratio, bool(ratio > growth_threshold))


@dataclass
class LaplacianBoundReport:
    max_laplacian_sq: float
    bound: float
    ratio: float


def verify_laplacian_bound(traj: Trajectory, data: InitialData, f: np.ndarray,
                           b: float) -> LaplacianBoundReport:
    """Empirical constant in  max_t ||u_xx(t)||^2 <= C (||f||^2 + E(0) + ||u0_xx||^2)."""
    grid = traj.grid
    lap_sq = np.array([discrete_norms(apply_laplacian(traj.u[n], grid), grid, "l2") ** 2
                       for n in range(grid.nt)])
    bound = (discrete_norms(f, grid, "l2_l2") ** 2
             + total_energy(traj, 0, b)
             + discrete_norms(apply_laplacian(data.u0, grid), grid, "l2") ** 2)
    if bound == 0.0:
        ratio = 0.0 if lap_sq.max() == 0.0 else np.inf
    else:
        ratio = float(lap_sq.max() / bound)
    return LaplacianBoundReport(float(lap_sq.max()), float(bound), ratio)


def pde_residual(traj: Trajectory, coeffs: MGTCoefficients, f: np.ndarray) -> np.ndarray:
    """Pointwise stencil residual u_ttt + alpha u_tt - c^2 u_xx - b u_txx - f.

    Computed from the u snapshots alone with the grid's time and space
    stencils; entries at the two boundary columns are zero.
    """
    grid = traj.grid
    f = np.asarray(f, dtype=float)
    if f.shape != traj.u.shape:
        raise ValueError(f"source has shape {f.shape}, expected {traj.u.shape}")
    d1 = time_derivative_matrix(grid.nt, grid.dt, 1)
    d2 = time_derivative_matrix(grid.nt, grid.dt, 2)
    d3 = time_derivative_matrix(grid.nt, grid.dt, 3)
    lap = laplacian_matrix(grid)
    res = (d3 @ traj.u + (d2 @ traj.u) * coeffs.alpha
           - coeffs.c ** 2 * (lap @ traj.u.T).T
           - coeffs.b * (lap @ (d1 @ traj.u).T).T - f)
    res[:, 0] = 0.0
    res[:, -1] = 0.0
    return res


# ---------------------------------------------------------------------------
# manufactured solution for convergence and oracle tests
# ---------------------------------------------------------------------------

def manufactured_solution(grid: SpaceTimeGrid, coeffs: MGTCoefficients):
    """Exact solution u = sin(pi xhat) t^3 and the source that produces it.

    xhat rescales the domain to [0, 1].  Substituting u into the model gives

        f = sin(pi xhat) (6 + 6 alpha t + 3 b k^2 t^2 + c^2 k^2 t^3),

    with k = pi / (x_right - x_left).  The matching initial triple is zero.
    Returns (u_exact, f) as (nt, nx) arrays.
    """
    k = np.pi / (grid.x_right - grid.x_left)
    xhat = (grid.x - grid.x_left) / (grid.x_right - grid.x_left)
    shape = np.sin(np.pi * xhat)
    t = grid.t[:, None]
    u = shape[None, :] * t ** 3
    f = shape[None, :] * (6.0 + 6.0 * coeffs.alpha[None, :] * t
                          + 3.0 * coeffs.b * k ** 2 * t ** 2
                          + coeffs.c ** 2 * k ** 2 * t ** 3)
    return u, f
