"""Sampling campaigns for the inequality-type checks.

Three campaigns live here.  ``stability_two_sided`` measures, over a list of
coefficient pairs, the quotient between the squared H2-in-time trace mismatch
on the observed boundary and the squared L2 coefficient mismatch; the largest
and smallest quotients bound the empirical two-sided stability constant.
``carleman_constant_sweep`` draws random constrained fields and evaluates the
two sides of the weighted estimate across a list of scale pairs.
``weight_ratio_report`` tabulates the dynamic range of the weight across an
offset sweep.  All randomness flows through explicit seeds so every reported
constant is reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .carleman import (CarlemanEvaluation, CarlemanGeometry, CarlemanScales,
                       carleman_lhs_rhs, check_weight_range, weight_statistics)
from .grid import SpaceTimeGrid, build_grid, time_difference, trapezoid_weights
from .observation import extract_observation
from .solver import InitialData, MGTCoefficients, solve_forward

__all__ = [
    "PairStability", "StabilityReport", "stability_two_sided",
    "CoefficientSample", "draw_coefficient_sample",
    "FieldSample", "draw_field_sample",
    "ScaleEntry", "CarlemanSweepReport", "carleman_constant_sweep",
    "WeightRatioRow", "weight_ratio_report", "steep_weight_preset",
]


# ---------------------------------------------------------------------------
# seeded, grid-transferable samples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientSample:
    """Smooth random coefficient described by Fourier data, not grid values.

    values() squashes the raw sine sum through tanh so the result stays
    strictly inside (0, box_bound) on every grid; evaluating the same sample
    on a refined grid samples the same underlying function.
    """

    offset: float
    amplitudes: Tuple[float, ...]
    box_bound: float

    def values(self, grid: SpaceTimeGrid) -> np.ndarray:
        xi = (grid.x - grid.x_left) / (grid.x_right - grid.x_left)
        raw = np.full(grid.nx, self.offset)
        for m, a in enumerate(self.amplitudes, start=1):
            raw += a * np.sin(m * np.pi * xi)
        return self.box_bound * 0.5 * (1.0 + np.tanh(raw))


def draw_coefficient_sample(rng: np.random.Generator, box_bound: float,
                            modes: int = 4) -> CoefficientSample:
    amplitudes = tuple(rng.normal(scale=0.8 / m) for m in range(1, modes + 1))
    return CoefficientSample(float(rng.normal(scale=0.7)), amplitudes, float(box_bound))


@dataclass(frozen=True)
class FieldSample:
    """Random constrained space-time field: sine sum in x times t^2 smooth(t).

    The t^2 factor enforces the zero start value and velocity; the sine sum
    enforces the zero boundary columns.
    """

    x_amplitudes: Tuple[float, ...]
    t_amplitudes: Tuple[float, ...]

    def values(self, grid: SpaceTimeGrid) -> np.ndarray:
        xi = (grid.x - grid.x_left) / (grid.x_right - grid.x_left)
        tau = grid.t / grid.t_final
        space = np.zeros(grid.nx)
        for m, a in enumerate(self.x_amplitudes, start=1):
            space += a * np.sin(m * np.pi * xi)
        shape = np.ones(grid.nt)
        for j, b in enumerate(self.t_amplitudes, start=1):
            shape += b * np.cos(j * np.pi * tau)
        field = np.outer(tau ** 2 * shape, space)
        field[:, 0] = 0.0
        field[:, -1] = 0.0
        field[0] = 0.0
        return field


def draw_field_sample(rng: np.random.Generator, x_modes: int = 3,
                      t_modes: int = 3) -> FieldSample:
    xs = tuple(rng.normal(scale=1.0 / m) for m in range(1, x_modes + 1))
    ts = tuple(rng.normal(scale=0.3 / j) for j in range(1, t_modes + 1))
    return FieldSample(xs, ts)


# ---------------------------------------------------------------------------
# two-sided stability sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairStability:
    coeff_norm_sq: float
    trace_norm_sq: float
    # the same measured quotient is tested against both sides of the
    # two-sided bound, as 1/C <= quotient and quotient <= C
    lower_ratio: float
    upper_ratio: float


@dataclass(frozen=True)
class StabilityReport:
    pairs: Tuple[PairStability, ...]
    ratio_min: float
    ratio_max: float
    c_empirical: float

    @property
    def degenerate_count(self) -> int:
        return sum(1 for p in self.pairs if math.isnan(p.lower_ratio))


def _trace_h2_mismatch_sq(traj_a, traj_b, sides, grid: SpaceTimeGrid) -> float:
    qt = trapezoid_weights(grid.nt, grid.dt)
    total = 0.0
    for side in sides:
        d = (extract_observation(traj_a, side).samples
             - extract_observation(traj_b, side).samples)
        d1 = time_difference(d, grid.dt, 1)
        d2 = time_difference(d, grid.dt, 2)
        total += float(qt @ (d ** 2 + d1 ** 2 + d2 ** 2))
    return total


def stability_two_sided(gamma_pairs, init: InitialData, grid: SpaceTimeGrid,
                        sides: Sequence[str] = ("right",), c: float = 1.0,
                        b: float = 1.0, box_bound: float = 1.0,
                        f: Optional[np.ndarray] = None) -> StabilityReport:
    """Trace-versus-coefficient quotients for a list of coefficient pairs.

    For each pair the two forward problems share ``init`` and ``f``; the
    mismatch of the observed normal derivative is measured in the squared
    H2(0, T) norm (value plus first and second time differences) summed over
    ``sides``, and divided by the squared L2 mismatch of the coefficients.
    A pair with identical coefficients produces NaN ratios and is excluded
    from the aggregate.  The aggregate c_empirical covers both inequality
    directions: max(largest quotient, 1 / smallest quotient).

    Keep the window below one transit of the fast front: a nonzero initial
    acceleration at a Dirichlet endpoint launches a front moving at speed
    sqrt(b), and once it crosses the domain and reaches the observed side the
    second time-difference of the trace acquires a non-integrable signature,
    so the quotient grows without bound under refinement instead of settling.
    """
    qx = trapezoid_weights(grid.nx, grid.h)
    records = []
    quotients = []
    for k, (gamma_a, gamma_b) in enumerate(gamma_pairs):
        try:
            ca = MGTCoefficients(c, b, np.asarray(gamma_a, dtype=float), box_bound)
            cb = MGTCoefficients(c, b, np.asarray(gamma_b, dtype=float), box_bound)
        except ValueError as exc:
            raise ValueError(f"pair {k}: {exc}") from exc
        traj_a = solve_forward(ca, init, f, grid)
        traj_b = solve_forward(cb, init, f, grid)
        coeff_sq = float(qx @ (ca.gamma - cb.gamma) ** 2)
        trace_sq = _trace_h2_mismatch_sq(traj_a, traj_b, sides, grid)
        if coeff_sq > 0.0:
            quotient = trace_sq / coeff_sq
            quotients.append(quotient)
        else:
            quotient = math.nan
        records.append(PairStability(coeff_sq, trace_sq, quotient, quotient))
    if quotients:
        ratio_min = min(quotients)
        ratio_max = max(quotients)
        c_emp = max(ratio_max, 1.0 / ratio_min) if ratio_min > 0 else math.inf
    else:
        ratio_min = ratio_max = c_emp = math.nan
    return StabilityReport(tuple(records), ratio_min, ratio_max, c_emp)


# ---------------------------------------------------------------------------
# weighted-estimate constant sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleEntry:
    scales: CarlemanScales
    ratios: Tuple[float, ...]
    rhs_values: Tuple[float, ...]
    max_ratio: float


@dataclass(frozen=True)
class CarlemanSweepReport:
    seed: int
    sample_count: int
    entries: Tuple[ScaleEntry, ...]


def carleman_constant_sweep(sample_count: int, scales_list, grid: SpaceTimeGrid,
                            geometry: CarlemanGeometry, coeffs: MGTCoefficients,
                            seed: int = 0, x_modes: int = 3,
                            t_modes: int = 3) -> CarlemanSweepReport:
    """Empirical estimate constants over random constrained fields.

    The same ``sample_count`` fields (drawn once from ``seed``) are evaluated
    at every scale pair, so entries are comparable across scales; rerunning
    with the same seed on a refined grid evaluates the same underlying
    functions.  Each scale pair passes the weight range guard before any
    exponentiation.
    """
    if sample_count < 0:
        raise ValueError("sample_count must be nonnegative")
    rng = np.random.default_rng(seed)
    samples = [draw_field_sample(rng, x_modes, t_modes) for _ in range(sample_count)]
    if not samples:
        return CarlemanSweepReport(seed, 0, ())
    fields = [sample.values(grid) for sample in samples]
    entries = []
    for scales in scales_list:
        check_weight_range(grid, geometry, scales)
        evals = [carleman_lhs_rhs(field, coeffs, geometry, scales, grid)
                 for field in fields]
        ratios = tuple(ev.ratio for ev in evals)
        rhs_values = tuple(ev.rhs_interior + ev.rhs_boundary for ev in evals)
        entries.append(ScaleEntry(scales, ratios, rhs_values, max(ratios)))
    return CarlemanSweepReport(seed, sample_count, tuple(entries))


# ---------------------------------------------------------------------------
# weight dynamic-range tabulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightRatioRow:
    label: str
    m0: float
    s: float
    lam: float
    log_min: float
    log_max: float
    log10_ratio: float


def weight_ratio_report(grid: SpaceTimeGrid, geometry: CarlemanGeometry,
                        scales: CarlemanScales, m0_values,
                        label: str = "weights") -> Tuple[WeightRatioRow, ...]:
    """Weight dynamic range, in decades, across an offset sweep.

    The additive constant m0 only shifts phi, yet the double exponential
    turns that shift into hundreds of decades of weight range, so the table
    sweeps it rather than fixing one value.  Everything is computed in the
    log domain; ranges far beyond floating-point overflow are still exact.
    """
    rows = []
    for m0 in m0_values:
        geo = replace(geometry, m0=float(m0))
        stats = weight_statistics(grid, geo, scales)
        rows.append(WeightRatioRow(label, float(m0), scales.s, scales.lam,
                                   stats.log_min, stats.log_max, stats.log10_ratio))
    return tuple(rows)


def steep_weight_preset():
    """Steep configuration for the dynamic-range table: s = lambda = 3 on the
    unit space-time box with the vertex at the left endpoint.

    Near m0 = 0.625 the weight spread is of order 10^340; the sweep over
    m0 in [0, 2] shows the figure moving from tens to tens of thousands of
    decades, which is why any quoted single number for this family is
    meaningless without the offset pinned.
    """
    grid = build_grid(0.0, 1.0, 101, 1.0, 101)
    geometry = CarlemanGeometry(0.0, 1.0, 0.0)
    scales = CarlemanScales(3.0, 3.0)
    m0_values = tuple(0.125 * k for k in range(17))
    return grid, geometry, scales, m0_values
