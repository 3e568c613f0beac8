"""Control-variable path for a scalar treatment with a monotone first stage.

When treatment depends on the instruments through a scalar shock that
enters strictly increasingly, the conditional CDF of treatment given the
instruments is itself a control variable: holding that CDF value and the
instrument index fixed, remaining treatment variation is exogenous.  The
module estimates the CDF value by within-cell ranks over a partition of
instrument space, audits the joint support of (CDF value, index) against
each contrast level, and averages cell-level outcome fits into contrast
effects.

The cell-rank estimator and the within-cell linear outcome fit are
implementation choices, not part of the identification argument; both are
exposed as dials (`cell_target`, `n_bins`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .control import ControlFunction
from .data import (
    Dataset,
    DegenerateControlError,
    GateError,
    SeedSpec,
    parallel_map,
)

__all__ = [
    "MonotoneControl",
    "SupportReport",
    "AverageCausalResult",
    "estimate_vt",
    "check_common_support",
    "average_causal",
]


def _median_split_cells(points: np.ndarray, cell_target: int, min_cell: int) -> np.ndarray:
    """Partition rows of points into balanced boxes of about cell_target rows.

    Recursive median splits along the currently widest-variance coordinate.
    A cell is split only while both halves stay at or above min_cell, so no
    returned cell is smaller than min_cell (single-cell output aside).
    """
    n = points.shape[0]
    labels = np.zeros(n, dtype=int)
    stack = [np.arange(n)]
    done: list[np.ndarray] = []
    while stack:
        idx = stack.pop()
        if idx.size <= cell_target or idx.size < 2 * min_cell:
            done.append(idx)
            continue
        sub = points[idx]
        dim = int(np.argmax(sub.var(axis=0))) if points.shape[1] > 1 else 0
        order = np.argsort(sub[:, dim], kind="stable")
        half = idx.size // 2
        stack.append(idx[order[:half]])
        stack.append(idx[order[half:]])
    for lab, idx in enumerate(done):
        labels[idx] = lab
    return labels


@dataclass(frozen=True)
class MonotoneControl:
    """Estimated first-stage control values.

    v_t holds the within-cell rank transform of treatment, in [0, 1]; t the
    instrument-index values carried along (n, r with r possibly 0); cells
    the instrument-space cell label per observation.
    """

    v_t: np.ndarray
    t: np.ndarray
    cells: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.v_t.shape[0]


def _rank_within_cells(a: np.ndarray, cells: np.ndarray) -> np.ndarray:
    v = np.empty_like(a)
    for lab in np.unique(cells):
        mask = cells == lab
        m = int(mask.sum())
        v[mask] = (rankdata(a[mask], method="average") - 0.5) / m
    return v


def _vt_local_linear(a: np.ndarray, z1: np.ndarray, window: int) -> np.ndarray:
    """Local-linear conditional CDF over a sliding window of z-neighbors.

    For each observation the window holds its `window` nearest neighbors in
    the scalar instrument; the CDF value is the local-linear fit (in z) of
    the midrank indicators 1{A_j < A_i} + 0.5*1{A_j = A_i}, evaluated at
    z_i.  The linear term removes the first-order drift of the conditional
    law across the window, which lets the window be much wider than a rank
    cell for the same distortion.  Depends on treatment only through
    comparisons, so it is invariant to increasing transforms.
    """
    n = a.shape[0]
    window = min(window, n)
    order = np.argsort(z1, kind="stable")
    zs, av = z1[order], a[order]
    half = window // 2
    v = np.empty(n)
    for i in range(n):
        lo = max(0, min(i - half, n - window))
        sl = slice(lo, lo + window)
        dz = zs[sl] - zs[i]
        ind = (av[sl] < av[i]) + 0.5 * (av[sl] == av[i])
        s1 = dz.sum()
        s2 = dz @ dz
        det = window * s2 - s1 * s1
        if det <= 0:
            v[i] = ind.mean()
        else:
            v[i] = ((s2 - dz * s1) / det) @ ind
    out = np.empty(n)
    out[order] = np.clip(v, 0.0, 1.0)
    return out


def estimate_vt(data: Dataset, cf: ControlFunction | None = None, *,
                cell_target: int | None = None, min_cell: int = 30,
                degenerate_floor: float = 0.01, smoother: str = "cells",
                window: int | None = None) -> MonotoneControl:
    """Estimate the conditional-CDF control for a scalar continuous treatment.

    With smoother="cells" (default) instrument space is partitioned into
    cells of roughly cell_target rows (default max(min_cell,
    ceil(sqrt(n)/2))) and the control value is the midrank of treatment
    within its cell, (rank - 0.5) / cellsize.  With smoother="kernel"
    (scalar instrument only) the control value is a local-linear fit of the
    rank indicators over a sliding window of `window` z-neighbors (default
    n // 6), which trades the cell discretization for a far larger
    effective sample per point.  The wide window assumes the conditional
    law drifts smoothly; densities with kinks (uniform shocks, boundaries)
    are better served by the cells default or a small window.  Both
    smoothers depend on treatment only through its ordering, so ties share
    a value and increasing transforms change nothing.

    Raises DegenerateControlError when treatment carries (almost) no
    variation beyond the instruments: the approach needs a continuously
    distributed treatment shock.
    """
    if data.a.shape[1] != 1:
        raise ValueError("monotone control path needs a scalar treatment column")
    a = data.a[:, 0]
    n = a.shape[0]
    if cell_target is None:
        cell_target = max(min_cell, math.ceil(math.sqrt(n) / 2))
    z = data.z
    sd = z.std(axis=0)
    zs = (z - z.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    cells = _median_split_cells(zs, cell_target, min_cell)

    var_total = a.var()
    if var_total <= 0:
        raise DegenerateControlError("treatment is constant; no shock to rank")
    within = 0.0
    tie_cells = 0
    labs = np.unique(cells)
    for lab in labs:
        sub = a[cells == lab]
        within += sub.size * sub.var()
        if np.unique(sub).size < sub.size:
            tie_cells += 1
    residual_fraction = within / (n * var_total)
    if residual_fraction < degenerate_floor:
        raise DegenerateControlError(
            "treatment is (nearly) a deterministic function of the instruments "
            f"(within-cell variance fraction {residual_fraction:.2e}); the "
            "monotone path needs a continuously distributed treatment shock")

    t = cf.apply(data.z, data.x) if cf is not None else np.empty((n, 0))
    if smoother == "cells":
        v = _rank_within_cells(a, cells)
    elif smoother == "kernel":
        if z.shape[1] != 1:
            raise ValueError("kernel smoother needs a one-dimensional "
                             "instrument; use smoother='cells'")
        if window is None:
            window = max(2 * min_cell, n // 6)
        v = _vt_local_linear(a, z[:, 0], window)
    else:
        raise ValueError(f"unknown smoother {smoother!r}")
    meta = {"n_cells": int(labs.size), "cell_target": int(cell_target),
            "min_cell": int(min_cell),
            "residual_fraction": float(residual_fraction),
            "tie_cell_fraction": float(tie_cells / labs.size),
            "smoother": smoother,
            "window": None if window is None else int(window)}
    return MonotoneControl(v_t=v, t=t, cells=cells, meta=meta)


def _grid_labels(v: np.ndarray, t: np.ndarray, n_bins: int) -> np.ndarray:
    """Quantile-bin labels on (v, t columns), n_bins per dimension."""
    cols = [v] + [t[:, j] for j in range(t.shape[1])]
    label = np.zeros(v.shape[0], dtype=int)
    for col in cols:
        edges = np.quantile(col, np.linspace(0, 1, n_bins + 1)[1:-1])
        label = label * n_bins + np.searchsorted(edges, col, side="right")
    return label


def _default_bins(n: int) -> int:
    return max(2, math.ceil(n ** (1 / 3)))


@dataclass(frozen=True)
class SupportReport:
    """Occupancy audit of the control distribution near each contrast level."""

    a_grid: np.ndarray
    uncovered: np.ndarray
    bandwidth: float
    n_cells: int

    @property
    def max_uncovered(self) -> float:
        return float(self.uncovered.max()) if self.uncovered.size else 0.0

    def to_dict(self) -> dict:
        return {"a_grid": self.a_grid.tolist(),
                "uncovered": self.uncovered.tolist(),
                "bandwidth": float(self.bandwidth),
                "n_cells": int(self.n_cells),
                "max_uncovered": self.max_uncovered}


def check_common_support(data: Dataset, mc: MonotoneControl,
                         a_grid: np.ndarray, *, n_bins: int | None = None,
                         bandwidth: float | None = None) -> SupportReport:
    """Report, per contrast level, the control mass without nearby treatment.

    The controls (v, t) are cut into quantile cells; for each level a the
    uncovered number is the empirical mass of cells containing no
    observation with |A - a| <= bandwidth.  Zero means full overlap.
    Report-only; thresholding is the caller's decision.
    """
    a = data.a[:, 0]
    a_grid = np.atleast_1d(np.asarray(a_grid, dtype=float))
    if n_bins is None:
        n_bins = _default_bins(mc.n)
    if bandwidth is None:
        span = float(a.max() - a.min())
        bandwidth = span / n_bins if span > 0 else 1.0
    labels = _grid_labels(mc.v_t, mc.t, n_bins)
    labs, counts = np.unique(labels, return_counts=True)
    mass = counts / labels.size
    uncovered = np.empty(a_grid.size)
    for i, av in enumerate(a_grid):
        near = np.abs(a - av) <= bandwidth
        occupied = np.isin(labs, np.unique(labels[near]))
        uncovered[i] = mass[~occupied].sum()
    return SupportReport(a_grid=a_grid, uncovered=uncovered,
                         bandwidth=float(bandwidth), n_cells=int(labs.size))


@dataclass(frozen=True)
class AverageCausalResult:
    theta_hat: float
    se: float | None
    a_grid: np.ndarray
    weights: np.ndarray
    level_means: np.ndarray
    support: SupportReport
    n_cells_used: int
    boot: int

    @property
    def ci95(self) -> tuple[float, float] | None:
        if self.se is None:
            return None
        return (self.theta_hat - 1.96 * self.se, self.theta_hat + 1.96 * self.se)

    def to_dict(self) -> dict:
        return {"theta_hat": float(self.theta_hat),
                "se": None if self.se is None else float(self.se),
                "ci95": None if self.se is None else list(self.ci95),
                "a_grid": self.a_grid.tolist(),
                "weights": self.weights.tolist(),
                "level_means": self.level_means.tolist(),
                "n_cells_used": int(self.n_cells_used),
                "boot": int(self.boot),
                "support": self.support.to_dict()}


def _cell_level_means(y, a, v, t, labels, a_grid):
    """Within-cell linear outcome fits, evaluated at each grid level.

    Each cell fits y on [1, a, v, t-columns] and reports the fit at
    treatment level a holding the controls at the cell's own distribution,
    which is the cell mean of y plus the treatment coefficient times
    (a - cell mean of a).  The linear control columns remove the
    first-order effect of residual control variation inside a cell, which
    otherwise leaks into the treatment coefficient (treatment co-moves with
    the controls by construction).

    Returns (mass-weighted level means, usable mass, n_cells_used).  Cells
    too small or without independent treatment variation cannot identify a
    local slope and are dropped; the dropped mass is reported so the caller
    can enforce an overlap threshold.
    """
    labs, counts = np.unique(labels, return_counts=True)
    n_reg = 2 + 1 + t.shape[1]
    min_cell_fit = n_reg + 3
    level_sum = np.zeros(a_grid.size)
    used_mass = 0.0
    used_cells = 0
    for lab, cnt in zip(labs, counts):
        mask = labels == lab
        a_c = a[mask]
        if cnt < min_cell_fit or a_c.var() < 1e-12 * max(a.var(), 1e-300):
            continue
        design = np.column_stack([np.ones(cnt), a_c, v[mask], t[mask]])
        coef, _, rank, _ = np.linalg.lstsq(design, y[mask], rcond=None)
        if rank < design.shape[1]:
            continue
        level_sum += cnt * (y[mask].mean() + coef[1] * (a_grid - a_c.mean()))
        used_mass += cnt
        used_cells += 1
    if used_mass == 0:
        raise GateError("no control cell identifies a local treatment effect")
    return level_sum / used_mass, used_mass / labels.size, used_cells


def _fit_theta(y, a, zs, t, a_grid, weights, cell_target, min_cell, n_bins,
               smoother, window):
    """Full pipeline on raw arrays: control values, grid, cell fits, contrast."""
    if smoother == "kernel":
        v = _vt_local_linear(a, zs[:, 0], window)
    else:
        cells = _median_split_cells(zs, cell_target, min_cell)
        v = _rank_within_cells(a, cells)
    labels = _grid_labels(v, t, n_bins)
    level_means, _, _ = _cell_level_means(y, a, v, t, labels, a_grid)
    return float(weights @ level_means)


def _boot_worker(args):
    (b, seed, y, a, zs, t, a_grid, weights, cell_target, min_cell, n_bins,
     smoother, window) = args
    rng = seed.replicate(b).rng()
    idx = rng.integers(0, y.size, size=y.size)
    return _fit_theta(y[idx], a[idx], zs[idx], t[idx], a_grid, weights,
                      cell_target, min_cell, n_bins, smoother, window)


def average_causal(data: Dataset, mc: MonotoneControl, a_grid: np.ndarray,
                   weights: np.ndarray, *, n_bins: int | None = None,
                   support_threshold: float = 0.05, boot: int = 200,
                   seed: SeedSpec | None = None,
                   workers: int | None = None) -> AverageCausalResult:
    """Average the cell-conditional outcome fits into a weighted contrast.

    The controls (v, t) are cut into quantile cells (n_bins per dimension,
    default ceil(n^(1/3))); within each cell the outcome is fit linearly in
    treatment and the controls, and evaluated at every level of a_grid at
    the cell's own control distribution; cell values are averaged under the
    empirical control distribution and combined with the contrast weights.

    Common support is enforced first: if more than support_threshold of the
    control mass lacks treatment observations near some weighted level, or
    the unusable-cell mass exceeds the same threshold, a GateError is
    raised rather than extrapolating.

    boot > 0 adds a pairs bootstrap (resampling rows, refitting the whole
    pipeline) for the standard error; boot = 0 skips it and se is None.
    """
    a_grid = np.atleast_1d(np.asarray(a_grid, dtype=float))
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    if a_grid.shape != weights.shape:
        raise ValueError("a_grid and weights must have matching shapes")
    y = data.y
    a = data.a[:, 0]
    if n_bins is None:
        n_bins = _default_bins(mc.n)

    live = a_grid[weights != 0]
    support = check_common_support(data, mc, live if live.size else a_grid,
                                   n_bins=n_bins)
    if support.max_uncovered > support_threshold:
        bad = support.a_grid[np.argmax(support.uncovered)]
        raise GateError(
            f"common support fails at contrast level a={bad:g}: fraction "
            f"{support.max_uncovered:.3f} of the control mass has no nearby "
            f"treatment observations (threshold {support_threshold})")

    labels = _grid_labels(mc.v_t, mc.t, n_bins)
    level_means, used_mass, used_cells = _cell_level_means(
        y, a, mc.v_t, mc.t, labels, a_grid)
    if 1 - used_mass > support_threshold:
        raise GateError(
            f"fraction {1 - used_mass:.3f} of the control mass sits in cells "
            "with no identifiable local treatment effect "
            f"(threshold {support_threshold})")
    theta = float(weights @ level_means)

    se = None
    if boot > 0:
        if seed is None:
            seed = SeedSpec(0)
        z = data.z
        sd = z.std(axis=0)
        zs = (z - z.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        cell_target = mc.meta.get("cell_target",
                                  max(30, math.ceil(math.sqrt(y.size) / 2)))
        min_cell = mc.meta.get("min_cell", 30)
        smoother = mc.meta.get("smoother", "cells")
        window = mc.meta.get("window")
        tasks = [(b, seed, y, a, zs, mc.t, a_grid, weights, cell_target,
                  min_cell, n_bins, smoother, window) for b in range(boot)]
        draws = np.asarray(parallel_map(_boot_worker, tasks, workers=workers))
        se = float(draws.std(ddof=1))

    return AverageCausalResult(theta_hat=theta, se=se, a_grid=a_grid,
                               weights=weights, level_means=level_means,
                               support=support, n_cells_used=used_cells,
                               boot=int(boot))
