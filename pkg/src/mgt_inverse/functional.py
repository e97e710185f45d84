"""Weighted space-time least squares for the third-order operator.

The unknown lives in a constrained trajectory space: zero at the initial
level, zero on the boundary columns, with a ghost convention that encodes a
vanishing initial velocity.  The quadratic objective couples the weighted
operator residual against an interior target with weighted boundary-trace
mismatches, and is minimized through its sparse normal equations by
conjugate gradients with a diagonal preconditioner (applied as an explicit
symmetric rescaling, which is the same iteration in exact arithmetic but
keeps the stored matrix entries near unit scale).

All weighted sums use weights normalized by the global minimum exponent, a
positive rescaling of the objective that does not move the minimizer; every
reported weighted value therefore carries the common factor
exp(-log_weight_min).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .carleman import (CarlemanSetup, admissible_geometry, check_weight_range,
                       log_weight_table)
from .grid import (SpaceTimeGrid, laplacian_matrix,
                   time_derivative_matrix_zero_start, trapezoid_weights)
from .observation import MuPair, zero_mu
from .solver import MGTCoefficients


class MinimizationError(RuntimeError):
    """Solver breakdown or failure to reach the requested residual."""


@dataclass
class TrajectoryVariable:
    """Interior unknowns at time levels 1..nt-1; level 0 and boundary fixed."""

    grid: SpaceTimeGrid
    values: np.ndarray      # shape (nt - 1, nx - 2)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.grid.nt - 1, self.grid.nx - 2)
        if self.values.shape != expected:
            raise ValueError(f"values have shape {self.values.shape}, expected {expected}")

    @classmethod
    def zero(cls, grid: SpaceTimeGrid) -> "TrajectoryVariable":
        return cls(grid, np.zeros((grid.nt - 1, grid.nx - 2)))

    @classmethod
    def from_vector(cls, vec: np.ndarray, grid: SpaceTimeGrid) -> "TrajectoryVariable":
        return cls(grid, np.asarray(vec, dtype=float).reshape(grid.nt - 1, grid.nx - 2))

    @classmethod
    def from_full_field(cls, field: np.ndarray, grid: SpaceTimeGrid) -> "TrajectoryVariable":
        field = np.asarray(field, dtype=float)
        if field.shape != (grid.nt, grid.nx):
            raise ValueError(f"field has shape {field.shape}, expected ({grid.nt}, {grid.nx})")
        scale = max(np.abs(field).max(), 1.0)
        if np.abs(field[0]).max() > 1e-12 * scale:
            raise ValueError("field must vanish at the initial time level")
        if max(np.abs(field[:, 0]).max(), np.abs(field[:, -1]).max()) > 1e-12 * scale:
            raise ValueError("field must vanish on the boundary columns")
        return cls(grid, field[1:, 1:-1].copy())

    def to_vector(self) -> np.ndarray:
        return self.values.ravel()

    def full_field(self) -> np.ndarray:
        field = np.zeros((self.grid.nt, self.grid.nx))
        field[1:, 1:-1] = self.values
        return field


def initial_second_derivative(y_star: TrajectoryVariable, dt: float) -> np.ndarray:
    """Recovered initial acceleration 2 y^1 / dt^2, zero at the boundary.

    Exact for fields quadratic in time: with y^0 = 0 and the ghost level
    equal to y^1 the centered second difference collapses to this form.
    """
    out = np.zeros(y_star.grid.nx)
    out[1:-1] = 2.0 * y_star.values[0] / dt ** 2
    return out


def _as_mu_list(mu, sides: Sequence[str], nt: int, dt: float) -> list:
    """Normalize the trace-target argument to one MuPair per observed side."""
    if mu is None:
        return [zero_mu(side, nt, dt) for side in sides]
    if isinstance(mu, MuPair):
        mu = [mu]
    mu = list(mu)
    got = sorted(pair.side for pair in mu)
    if got != sorted(sides):
        raise ValueError(f"trace targets cover sides {got}, geometry observes {sorted(sides)}")
    for pair in mu:
        if pair.mu.shape != (nt,) or pair.mu_t.shape != (nt,):
            raise ValueError("trace target length does not match the grid")
    return mu


def _interior_trace_row(grid: SpaceTimeGrid, side: str) -> np.ndarray:
    """Normal-derivative stencil restricted to interior unknowns.

    The boundary node itself is constrained to zero, so only two interior
    coefficients survive from the one-sided second-order stencil.
    """
    row = np.zeros(grid.nx - 2)
    if side == "left":
        row[0] = -4.0 / (2.0 * grid.h)
        row[1] = 1.0 / (2.0 * grid.h)
    else:
        row[-1] = -4.0 / (2.0 * grid.h)
        row[-2] = 1.0 / (2.0 * grid.h)
    return row


class CarlemanLeastSquares:
    """Assembled quadratic objective for one (coefficients, weights, grid).

    Holds the sparse residual blocks, the diagonal weight vectors, the
    normal matrix and its diagonal rescaling.  The operator block depends on
    the zeroth-order coefficient through alpha; ``update_gamma`` swaps it
    without rebuilding the rest, which is what the reconstruction loop needs.

    ``extra_log_scale`` adds a constant to every weight exponent.  It exists
    to test that the normalization offset cannot move the minimizer.
    """

    def __init__(self, coeffs: MGTCoefficients, carleman: CarlemanSetup,
                 grid: SpaceTimeGrid, extra_log_scale: float = 0.0):
        geometry = admissible_geometry(carleman.geometry, grid)
        scales = carleman.scales
        if scales.lam <= 0 or scales.s <= 0:
            raise ValueError("minimization needs strictly positive weight scales")
        stats = check_weight_range(grid, geometry, scales)
        self.grid = grid
        self.coeffs = coeffs
        self.geometry = geometry
        self.scales = scales
        self.weight_stats = stats

        nt, nx, m = grid.nt, grid.nx, grid.nx - 2
        omega = np.exp(log_weight_table(grid, geometry, scales)
                       - stats.log_min + extra_log_scale)
        self.omega = omega

        embed = sp.csr_matrix((np.ones(nt - 1), (np.arange(1, nt), np.arange(nt - 1))),
                              shape=(nt, nt - 1))
        d1e = sp.csr_matrix(time_derivative_matrix_zero_start(nt, grid.dt, 1)) @ embed
        d2e = sp.csr_matrix(time_derivative_matrix_zero_start(nt, grid.dt, 2)) @ embed
        d3e = sp.csr_matrix(time_derivative_matrix_zero_start(nt, grid.dt, 3)) @ embed
        lap_int = sp.csr_matrix(laplacian_matrix(grid)[1:-1, 1:-1])
        eye_m = sp.identity(m, format="csr")

        self._embed, self._d1e, self._d2e = embed, d1e, d2e
        self._pde_base = (sp.kron(d3e, eye_m)
                          - coeffs.c ** 2 * sp.kron(embed, lap_int)
                          - coeffs.b * sp.kron(d1e, lap_int)).tocsr()
        self._build_pde_block(coeffs)

        qt = trapezoid_weights(nt, grid.dt)
        self.w_pde = ((1.0 / scales.s) * qt[:, None] * grid.h * omega[:, 1:-1]).ravel()
        self.trace_blocks = []
        for side in geometry.gamma0_sides:
            col = 0 if side == "left" else nx - 1
            row = sp.csr_matrix(_interior_trace_row(grid, side)[None, :])
            a_tr = sp.kron(embed, row).tocsr()
            a_trt = sp.kron(d1e, row).tocsr()
            self.trace_blocks.append((side, a_tr, a_trt, qt * omega[:, col]))
        self._factor()

    def _build_pde_block(self, coeffs: MGTCoefficients) -> None:
        alpha_int = sp.diags(coeffs.alpha[1:-1])
        self.a_pde = (self._pde_base + sp.kron(self._d2e, alpha_int)).tocsr()

    def update_gamma(self, gamma: np.ndarray) -> None:
        """Swap the zeroth-order coefficient and refresh the normal matrix."""
        self.coeffs = self.coeffs.with_gamma(gamma)
        self._build_pde_block(self.coeffs)
        self._factor()

    def _factor(self) -> None:
        n = self.a_pde.shape[1]
        normal = (self.a_pde.T @ sp.diags(self.w_pde) @ self.a_pde)
        for _, a_tr, a_trt, w in self.trace_blocks:
            normal = normal + a_tr.T @ sp.diags(w) @ a_tr
            normal = normal + a_trt.T @ sp.diags(w) @ a_trt
        normal = normal.tocsr()
        diag = normal.diagonal()
        if not np.all(np.isfinite(normal.data)) or np.any(diag <= 0):
            raise MinimizationError(
                "normal matrix has non-finite or non-positive diagonal entries; "
                "the weight range is too extreme for this grid")
        self._scale = 1.0 / np.sqrt(diag)
        d = sp.diags(self._scale)
        self._normal_scaled = (d @ normal @ d).tocsr()
        self._n_unknowns = n

    def rhs_vector(self, mu, g: Optional[np.ndarray]) -> np.ndarray:
        grid = self.grid
        mu_list = _as_mu_list(mu, self.geometry.gamma0_sides, grid.nt, grid.dt)
        rhs = np.zeros(self._n_unknowns)
        if g is not None:
            g = np.asarray(g, dtype=float)
            if g.shape != (grid.nt, grid.nx):
                raise ValueError(f"target has shape {g.shape}, expected "
                                 f"({grid.nt}, {grid.nx})")
            rhs += self.a_pde.T @ (self.w_pde * g[:, 1:-1].ravel())
        by_side = {pair.side: pair for pair in mu_list}
        for side, a_tr, a_trt, w in self.trace_blocks:
            pair = by_side[side]
            rhs += a_tr.T @ (w * pair.mu)
            rhs += a_trt.T @ (w * pair.mu_t)
        return rhs

    def solve_normal_equations(self, rhs: np.ndarray, tol: float,
                               x0: Optional[np.ndarray] = None,
                               max_iterations: Optional[int] = None):
        """Conjugate gradients on the symmetrically rescaled normal matrix.

        Returns (solution, iterations, relative residual).  The recursion
        residual is cross-checked against the true residual before the
        method is allowed to stop, so the reported residual is genuine.
        """
        n = self._n_unknowns
        cap = 10 * n if max_iterations is None else max_iterations
        mat = self._normal_scaled
        b = self._scale * rhs
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros(n), 0, 0.0

        x = np.zeros(n) if x0 is None else x0 / self._scale
        r = b - mat @ x
        p = r.copy()
        rs = float(r @ r)
        iterations = 0
        while iterations < cap:
            if np.sqrt(rs) <= tol * bnorm:
                r = b - mat @ x        # trust only the recomputed residual
                rs = float(r @ r)
                if np.sqrt(rs) <= tol * bnorm:
                    break
                p = r.copy()
            q = mat @ p
            curvature = float(p @ q)
            if curvature <= 0.0 or not np.isfinite(curvature):
                raise MinimizationError(
                    f"conjugate gradient breakdown at iteration {iterations}: "
                    f"direction curvature {curvature}")
            step = rs / curvature
            x += step * p
            r -= step * q
            rs_next = float(r @ r)
            p = r + (rs_next / rs) * p
            rs = rs_next
            iterations += 1
        rel = float(np.linalg.norm(b - mat @ x) / bnorm)
        if rel > tol:
            raise MinimizationError(
                f"conjugate gradient stalled at relative residual {rel:.3e} "
                f"after {iterations} iterations (target {tol:.1e}, cap {cap})")
        return self._scale * x, iterations, rel


# ---------------------------------------------------------------------------
# objective evaluation (stencil path; same quadrature as the assembled form)
# ---------------------------------------------------------------------------

def _weighted_terms(y: TrajectoryVariable, mu, g, coeffs: MGTCoefficients,
                    carleman: CarlemanSetup, grid: SpaceTimeGrid):
    """PDE and trace mismatch energies entering the objective.

    Returns (pde_term, trace_term) where the objective is half their sum;
    pde_term carries the 1/s factor.
    """
    geometry = admissible_geometry(carleman.geometry, grid)
    scales = carleman.scales
    if scales.lam <= 0 or scales.s <= 0:
        raise ValueError("evaluation needs strictly positive weight scales")
    stats = check_weight_range(grid, geometry, scales)
    omega = np.exp(log_weight_table(grid, geometry, scales) - stats.log_min)
    mu_list = _as_mu_list(mu, geometry.gamma0_sides, grid.nt, grid.dt)

    field = y.full_field()
    d1 = time_derivative_matrix_zero_start(grid.nt, grid.dt, 1)
    d2 = time_derivative_matrix_zero_start(grid.nt, grid.dt, 2)
    d3 = time_derivative_matrix_zero_start(grid.nt, grid.dt, 3)
    lap = laplacian_matrix(grid)
    ly = (d3 @ field + (d2 @ field) * coeffs.alpha
          - coeffs.c ** 2 * (lap @ field.T).T
          - coeffs.b * (lap @ (d1 @ field).T).T)
    resid = ly[:, 1:-1]
    if g is not None:
        g = np.asarray(g, dtype=float)
        if g.shape != (grid.nt, grid.nx):
            raise ValueError(f"target has shape {g.shape}, expected ({grid.nt}, {grid.nx})")
        resid = resid - g[:, 1:-1]

    qt = trapezoid_weights(grid.nt, grid.dt)
    pde_term = (1.0 / scales.s) * float(
        (qt[:, None] * grid.h * omega[:, 1:-1] * resid ** 2).sum())

    by_side = {pair.side: pair for pair in mu_list}
    trace_term = 0.0
    for side in geometry.gamma0_sides:
        col = 0 if side == "left" else grid.nx - 1
        row = _interior_trace_row(grid, side)
        trace = np.concatenate(([0.0], y.values @ row))   # level 0 is constrained
        trace_t = d1 @ trace
        pair = by_side[side]
        w = qt * omega[:, col]
        trace_term += float(w @ ((trace - pair.mu) ** 2 + (trace_t - pair.mu_t) ** 2))
    return pde_term, trace_term


def evaluate_J(y: TrajectoryVariable, mu, g, coeffs: MGTCoefficients,
               carleman: CarlemanSetup, grid: SpaceTimeGrid) -> float:
    """Value of the weighted least-squares objective at ``y``."""
    pde_term, trace_term = _weighted_terms(y, mu, g, coeffs, carleman, grid)
    return 0.5 * (pde_term + trace_term)


def v_norm_sq(y: TrajectoryVariable, coeffs: MGTCoefficients,
              carleman: CarlemanSetup, grid: SpaceTimeGrid) -> float:
    """Squared weighted graph norm of ``y``: twice the objective at zero data."""
    pde_term, trace_term = _weighted_terms(y, None, None, coeffs, carleman, grid)
    return pde_term + trace_term


def weighted_data_norms(mu, g, carleman: CarlemanSetup, grid: SpaceTimeGrid):
    """Weighted squared norms of the data pair: interior target and traces.

    Returns (g_norm_sq, mu_norm_sq) without the 1/s factor; these are the
    ingredients of the minimizer energy bound.
    """
    geometry = admissible_geometry(carleman.geometry, grid)
    stats = check_weight_range(grid, geometry, carleman.scales)
    omega = np.exp(log_weight_table(grid, geometry, carleman.scales) - stats.log_min)
    mu_list = _as_mu_list(mu, geometry.gamma0_sides, grid.nt, grid.dt)
    qt = trapezoid_weights(grid.nt, grid.dt)
    g_norm = 0.0
    if g is not None:
        g = np.asarray(g, dtype=float)
        g_norm = float((qt[:, None] * grid.h * omega[:, 1:-1] * g[:, 1:-1] ** 2).sum())
    mu_norm = 0.0
    for pair in mu_list:
        col = 0 if pair.side == "left" else grid.nx - 1
        w = qt * omega[:, col]
        mu_norm += float(w @ (pair.mu ** 2 + pair.mu_t ** 2))
    return g_norm, mu_norm


@dataclass
class MinimizerDiagnostics:
    j_value: float
    v_norm_sq: float
    el_residual: float
    solver_iterations: int
    bound_slack: float


def minimize_J(mu, g, coeffs: MGTCoefficients, carleman: CarlemanSetup,
               grid: SpaceTimeGrid, solver_tol: float = 1e-9,
               engine: Optional[CarlemanLeastSquares] = None,
               warm_start: Optional[TrajectoryVariable] = None,
               max_iterations: Optional[int] = None):
    """Minimizer of the weighted objective and its diagnostics.

    ``engine`` allows reuse of an assembled normal matrix across calls with
    the same coefficients, weights and grid.  The energy bound check uses
    the exact factor 4: ||y*||^2 <= (4/s) |g|_w^2 + 4 |mu|_w^2, a discrete
    inequality inherited from J(y*) <= J(0) plus Young's inequality.
    """
    if engine is None:
        engine = CarlemanLeastSquares(coeffs, carleman, grid)
    rhs = engine.rhs_vector(mu, g)
    x0 = None if warm_start is None else warm_start.to_vector()
    vec, iterations, rel = engine.solve_normal_equations(
        rhs, solver_tol, x0=x0, max_iterations=max_iterations)
    y_star = TrajectoryVariable.from_vector(vec, grid)

    j_value = evaluate_J(y_star, mu, g, coeffs, carleman, grid)
    norm_sq = v_norm_sq(y_star, coeffs, carleman, grid)
    g_norm, mu_norm = weighted_data_norms(mu, g, carleman, grid)
    bound_rhs = (4.0 / carleman.scales.s) * g_norm + 4.0 * mu_norm
    diagnostics = MinimizerDiagnostics(
        j_value=float(j_value),
        v_norm_sq=float(norm_sq),
        el_residual=float(rel),
        solver_iterations=int(iterations),
        bound_slack=float(bound_rhs - norm_sq),
    )
    return y_star, diagnostics


@dataclass
class DifferenceCheckReport:
    difference_energy: float       # (1/2s) weighted |L d|^2 + weighted traces of d
    bound: float                   # (2/s) weighted |g1 - g2|^2
    slack: float
    curvature_constant: float      # sqrt(s) * weighted initial curvature / bound norm
    minimizer_gap: float
    diagnostics_first: MinimizerDiagnostics
    diagnostics_second: MinimizerDiagnostics


def minimizer_difference_check(g1, g2, mu, coeffs: MGTCoefficients,
                               carleman: CarlemanSetup, grid: SpaceTimeGrid,
                               solver_tol: float = 1e-9) -> DifferenceCheckReport:
    """Compare the minimizers of two targets sharing the same trace data.

    Subtracting the two optimality systems bounds the weighted graph energy
    of the difference by (2/s) times the weighted energy of g1 - g2; the
    slack reported here must stay nonnegative up to solver tolerance.  Also
    reported: the ratio sqrt(s) * weighted |difference of recovered initial
    accelerations|^2 / weighted |g1 - g2|^2, the empirical constant of the
    corresponding stability statement.
    """
    engine = CarlemanLeastSquares(coeffs, carleman, grid)
    y1, diag1 = minimize_J(mu, g1, coeffs, carleman, grid, solver_tol, engine=engine)
    y2, diag2 = minimize_J(mu, g2, coeffs, carleman, grid, solver_tol, engine=engine,
                           warm_start=y1)
    d = TrajectoryVariable(grid, y1.values - y2.values)
    pde_term, trace_term = _weighted_terms(d, None, None, coeffs, carleman, grid)
    difference_energy = 0.5 * pde_term + trace_term

    if g1 is None and g2 is None:
        delta_norm = 0.0
    else:
        a = np.zeros((grid.nt, grid.nx)) if g1 is None else np.asarray(g1, dtype=float)
        b = np.zeros((grid.nt, grid.nx)) if g2 is None else np.asarray(g2, dtype=float)
        delta_norm, _ = weighted_data_norms(None, a - b, carleman, grid)
    bound = (2.0 / carleman.scales.s) * delta_norm

    omega0 = engine.omega[0]
    ytt_diff = (initial_second_derivative(y1, grid.dt)
                - initial_second_derivative(y2, grid.dt))
    qx = trapezoid_weights(grid.nx, grid.h)
    initial_term = np.sqrt(carleman.scales.s) * float(qx @ (omega0 * ytt_diff ** 2))
    curvature_constant = initial_term / delta_norm if delta_norm > 0 else 0.0

    gap = float(np.abs(y1.values - y2.values).max())
    return DifferenceCheckReport(
        difference_energy=float(difference_energy),
        bound=float(bound),
        slack=float(bound - difference_energy),
        curvature_constant=float(curvature_constant),
        minimizer_gap=gap,
        diagnostics_first=diag1,
        diagnostics_second=diag2,
    )
