"""Unbiased-risk (SURE) bandwidth selection with K-fold cross-fitting.

The per-point criterion for a Tweedie-type rule  delta = x + s^2 f1/f  is

    S_i = sigma_i^2 + sigma_i^4 * [2 f f2 - f1^2] / f^2

evaluated at (x_i, sigma_i) with the density triple (f, f1, f2) fitted on the
complement of i's fold. S_i estimates risk unbiasedly and may be negative.
The compound criterion S(h) = sum_i S_i is minimized over a bandwidth grid.

The scaled estimator applies the rule in z = x/sigma coordinates where the
score enters with a single factor of sigma; Stein's identity then gives

    S_i = sigma_i^2 + sigma_i^2 * [2 f f2 - f1^2] / f^2   (at z_i)

so pooled tuning takes the bracket power as a parameter.

One fold assignment is drawn per tune call and shared across all grid cells
(variance reduction); cells where more than 1% of points hit the density
floor, or where any weight normalizer underflows, are excluded from the
argmin as degenerate.

S(h) is unbiased for the compound risk at every h but its variance explodes
as the bandwidths shrink (the per-point terms are heavy-tailed score
ratios), which lets a tiny-bandwidth cell capture a plain argmin through
noise alone. The default selection therefore minimizes S(h) + SE{S(h)},
the one standard-error safeguard, with the SE estimated from the per-point
values; the plain ``argmin`` rule is available as an option and the raw
surface is always reported for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Bandwidths, FoldAssignment, HeteroSample, kfold_split
from .errors import AllCellsDegenerate, BadGroupCount, DegenerateWeights, EmptyMonteCarlo
from .kernel import (
    DEFAULT_FLOOR,
    KernelContext,
    _kx_parts,
    _reduce,
    _triple_blocked,
    _weight_numerators,
    density_eval,
)
from .data import DensityEval
from .estimators import k_groups_fit
from .priors import PriorSpec

# Smaller blocks than the kernel module: per-fold weight matrices for every
# h_sigma value are cached per block.
_BLOCK_ELEMS = 1 << 21

_FLOOR_FRACTION = 0.01


@dataclass(frozen=True)
class SureGrid:
    """Bandwidth search grid plus the cross-fitting configuration."""

    h_x_values: tuple[float, ...]
    h_sigma_values: tuple[float, ...]
    k: int = 10
    seed: int = 0

    def __post_init__(self):
        for name, vals in (("h_x_values", self.h_x_values), ("h_sigma_values", self.h_sigma_values)):
            arr = np.asarray(vals, dtype=float)
            if arr.size == 0:
                raise ValueError(f"{name} must be nonempty")
            if not np.all(arr > 0):
                raise ValueError(f"{name} must be positive")
            if arr.size > 1 and not np.all(np.diff(arr) > 0):
                raise ValueError(f"{name} must be strictly ascending")
        if self.k < 2:
            raise ValueError("fold count must be >= 2")


def unit_grid() -> tuple[float, ...]:
    """The canonical ten-point grid 0.1, 0.2, ..., 1.0."""
    return tuple(np.round(np.arange(1, 11) * 0.1, 10))


def default_grid(sample: HeteroSample, k: int = 10, seed: int = 0) -> SureGrid:
    """h_x over 0.1..1.0 (multipliers on sigma_j); h_sigma over 0.1..1.0
    times sd(sigma). Homoscedastic samples (sd == 0) fall back to an absolute
    scale of 1; the weights are then uniform for every h_sigma anyway."""
    scale = float(np.std(sample.sigma))
    if scale == 0.0:
        scale = 1.0
    hs = tuple(v * scale for v in unit_grid())
    return SureGrid(unit_grid(), hs, k=k, seed=seed)


@dataclass(frozen=True)
class SureReport:
    """Grid search result.

    ``surface`` holds the raw compound values S(h); ``selection`` holds
    S(h) + SE{S(h)}, which the reported ``argmin`` minimizes over
    non-degenerate cells.
    """

    h_x_values: tuple[float, ...]
    h_sigma_values: tuple[float, ...]
    surface: np.ndarray            # shape (len(h_x), len(h_sigma))
    selection: np.ndarray          # same shape
    degenerate: np.ndarray         # same shape, bool
    argmin: Bandwidths
    per_point: np.ndarray | None = None

    def iter_cells(self):
        """Yield (h_x, h_sigma, S, degenerate) in deterministic grid order."""
        for i, hx in enumerate(self.h_x_values):
            for j, hs in enumerate(self.h_sigma_values):
                yield hx, hs, float(self.surface[i, j]), bool(self.degenerate[i, j])


def sure_from_density(d: DensityEval, sigma: float) -> float:
    """Per-point SURE value from an already-evaluated density triple."""
    s2 = sigma * sigma
    return float(s2 + s2 * s2 * (2.0 * d.f * d.f2 - d.f1 * d.f1) / (d.f * d.f))


def sure_point(ctx: KernelContext, x: float, sigma: float) -> float:
    """Per-point SURE at (x, sigma); the context must exclude the scored point
    (the cross-fitting contract is the caller's responsibility)."""
    return sure_from_density(density_eval(ctx, x, sigma), sigma)


def _cv_surface(
    xd: np.ndarray,
    sd: np.ndarray,
    sigma_risk: np.ndarray,
    hx_values,
    hs_values,
    fold_of: np.ndarray,
    floor_eps: float,
    bracket_power: int,
):
    """Per-point SURE for every grid cell, density fitted on fold complements.

    xd/sd are the density-fit coordinates (sd is all ones for pooled KDEs);
    sigma_risk enters the risk terms. Returns (per_point, floored, zero_rows)
    with shapes (nx, ns, n), (nx, ns), (ns,). Queries whose weight normalizer
    underflows get NaN and flag their h_sigma column via zero_rows.
    """
    n = xd.shape[0]
    nx, ns = len(hx_values), len(hs_values)
    s2 = sigma_risk**2
    spow = sigma_risk**bracket_power
    per_point = np.empty((nx, ns, n))
    floored = np.zeros((nx, ns), dtype=np.int64)
    zero_rows = np.zeros(ns, dtype=bool)
    step = max(1, _BLOCK_ELEMS // max(n, 1))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        dx = xd[lo:hi, None] - xd[None, :]
        ds2 = (sd[lo:hi, None] - sd[None, :]) ** 2
        mask = fold_of[lo:hi, None] != fold_of[None, :]
        cached = []
        for hs in hs_values:
            wn = _weight_numerators(ds2, hs) * mask
            ws = wn.sum(axis=1)
            cached.append((wn, ws))
        for j, (_, ws) in enumerate(cached):
            if np.any(ws == 0.0):
                zero_rows[j] = True
        for i, hx in enumerate(hx_values):
            k0, k1, k2 = _kx_parts(dx, hx * sd)
            for j, (wn, ws) in enumerate(cached):
                with np.errstate(invalid="ignore", divide="ignore"):
                    f_raw = _reduce(wn, k0) / ws
                    f1 = _reduce(wn, k1) / ws
                    f2 = _reduce(wn, k2) / ws
                floored[i, j] += int(np.count_nonzero(f_raw < floor_eps))
                f = np.maximum(f_raw, floor_eps)
                bracket = (2.0 * f * f2 - f1 * f1) / (f * f)
                per_point[i, j, lo:hi] = s2[lo:hi] + spow[lo:hi] * bracket
    return per_point, floored, zero_rows


def sure_compound_cv(
    sample: HeteroSample,
    bw: Bandwidths,
    folds: FoldAssignment,
    floor_eps: float = DEFAULT_FLOOR,
) -> float:
    """Compound SURE S(h) = sum_i S_i with each point scored by a density
    fitted on the complement of its fold."""
    if folds.n != sample.n:
        raise ValueError("fold assignment does not match sample size")
    pp, _, zero = _cv_surface(
        sample.x, sample.sigma, sample.sigma,
        [bw.h_x], [bw.h_sigma], folds.fold_of, floor_eps, 4,
    )
    if zero[0]:
        raise DegenerateWeights(np.flatnonzero(np.isnan(pp[0, 0])))
    return float(pp[0, 0].sum())


def _argmin_cell(surface: np.ndarray, degenerate: np.ndarray) -> tuple[int, int]:
    """Minimal non-degenerate cell; ties broken by smallest h_sigma, then
    smallest h_x."""
    if degenerate.all():
        raise AllCellsDegenerate()
    masked = np.where(degenerate, np.inf, surface)
    vmin = masked.min()
    for j in range(surface.shape[1]):
        for i in range(surface.shape[0]):
            if masked[i, j] == vmin:
                return i, j
    raise AssertionError("unreachable")


_SELECTION_RULES = ("penalized", "argmin")


def _selection_scores(pp: np.ndarray, n: int, rule: str) -> tuple[np.ndarray, np.ndarray]:
    if rule not in _SELECTION_RULES:
        raise ValueError(f"selection must be one of {_SELECTION_RULES}, got {rule!r}")
    surface = pp.sum(axis=-1)
    if rule == "argmin" or n < 2:
        return surface, surface.copy()
    se = pp.std(axis=-1, ddof=1) * np.sqrt(n)
    return surface, surface + se


def tune(
    sample: HeteroSample,
    grid: SureGrid,
    floor_eps: float = DEFAULT_FLOOR,
    selection: str = "penalized",
) -> SureReport:
    """Grid-search the compound SURE criterion; deterministic in
    (sample, grid).

    ``selection="penalized"`` (default) minimizes S(h) + SE{S(h)};
    ``selection="argmin"`` minimizes the raw S(h)."""
    folds = kfold_split(sample.n, min(grid.k, sample.n), grid.seed)
    pp, floored, zero = _cv_surface(
        sample.x, sample.sigma, sample.sigma,
        grid.h_x_values, grid.h_sigma_values, folds.fold_of, floor_eps, 4,
    )
    surface, scores = _selection_scores(pp, sample.n, selection)
    degenerate = zero[None, :] | (floored > _FLOOR_FRACTION * sample.n)
    i, j = _argmin_cell(scores, degenerate)
    return SureReport(
        tuple(grid.h_x_values),
        tuple(grid.h_sigma_values),
        surface,
        scores,
        degenerate,
        Bandwidths(grid.h_x_values[i], grid.h_sigma_values[j]),
        per_point=pp[i, j].copy(),
    )


@dataclass(frozen=True)
class PooledSureReport:
    h_values: tuple[float, ...]
    surface: np.ndarray
    selection: np.ndarray
    degenerate: np.ndarray
    best_h: float


def tune_pooled(
    xd,
    sigma_risk,
    h_values,
    folds: FoldAssignment,
    bracket_power: int = 4,
    floor_eps: float = DEFAULT_FLOOR,
    selection: str = "penalized",
) -> PooledSureReport:
    """One-dimensional SURE grid search for pooled-KDE rules (TF, Scaled,
    per-group TF). ``bracket_power`` is 4 for rules scored in x coordinates
    and 2 for the scaled rule scored in z = x/sigma coordinates."""
    xd = np.asarray(xd, dtype=float).reshape(-1)
    sigma_risk = np.asarray(sigma_risk, dtype=float).reshape(-1)
    hv = tuple(float(h) for h in h_values)
    if len(hv) == 0 or any(h <= 0 for h in hv):
        raise ValueError("h_values must be nonempty and positive")
    pp, floored, zero = _cv_surface(
        xd, np.ones_like(xd), sigma_risk, hv, [1.0], folds.fold_of, floor_eps, bracket_power
    )
    surface, scores = _selection_scores(pp[:, 0, :], xd.shape[0], selection)
    degenerate = zero[0] | (floored[:, 0] > _FLOOR_FRACTION * xd.shape[0])
    if degenerate.all():
        raise AllCellsDegenerate()
    masked = np.where(degenerate, np.inf, scores)
    best = int(np.argmin(masked))  # first minimal index = smallest h on ties
    return PooledSureReport(hv, surface, scores, degenerate, hv[best])


def pooled_grid_for(values) -> tuple[float, ...]:
    """Data-relative pooled-KDE grid: 0.1..1.0 times the sd of the fitting
    coordinates (fallback scale 1 for constant input)."""
    scale = float(np.std(np.asarray(values, dtype=float)))
    if scale == 0.0:
        scale = 1.0
    return tuple(v * scale for v in unit_grid())


def tune_kgroups(
    sample: HeteroSample,
    k_groups: int,
    folds_k: int,
    seed: int,
    floor_eps: float = DEFAULT_FLOOR,
) -> tuple[float, ...]:
    """Independent per-group TF bandwidths, each tuned by pooled SURE inside
    its own sigma-quantile group."""
    fit = k_groups_fit(sample, k_groups)
    out = []
    for g, idx in enumerate(fit.groups):
        if idx.size < 2:
            raise BadGroupCount(k_groups, sample.n, f"group {g} too small to cross-fit")
        folds = kfold_split(idx.size, min(folds_k, idx.size), seed)
        rep = tune_pooled(
            sample.x[idx], sample.sigma[idx], pooled_grid_for(sample.x[idx]), folds,
            bracket_power=4, floor_eps=floor_eps,
        )
        out.append(rep.best_h)
    return tuple(out)


@dataclass(frozen=True)
class UnbiasednessCheck:
    mean_s: float
    mc_risk: float
    se: float
    n_mc: int

    @property
    def gap(self) -> float:
        return abs(self.mean_s - self.mc_risk)


def sure_unbiasedness_check(
    prior: PriorSpec,
    sigma_law,
    bw: Bandwidths,
    n_train: int,
    n_mc: int,
    seed: int,
    floor_eps: float = DEFAULT_FLOOR,
) -> UnbiasednessCheck:
    """Monte Carlo comparison of mean SURE against realized risk.

    Draws one fixed training set, then n_mc fresh (X, mu, sigma) triples;
    for each computes S and the squared error of the plug-in rule built on
    the training set. The reported se is the standard error of the mean
    pointwise difference, so |mean_s - mc_risk| <= 3 se is the natural
    acceptance assertion.
    """
    if n_mc < 1:
        raise EmptyMonteCarlo()
    rng_train = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    mu_t = prior.draw(rng_train, n_train)
    sig_t = sigma_law.draw(rng_train, n_train)
    x_t = mu_t + sig_t * rng_train.standard_normal(n_train)

    rng_mc = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    mu_s = prior.draw(rng_mc, n_mc)
    sig_s = sigma_law.draw(rng_mc, n_mc)
    x_s = mu_s + sig_s * rng_mc.standard_normal(n_mc)

    f_raw, f1, f2, wsum = _triple_blocked(x_s, sig_s, x_t, sig_t, bw)
    bad = np.flatnonzero(wsum == 0.0)
    if bad.size:
        raise DegenerateWeights(bad)
    f = np.maximum(f_raw, floor_eps)
    s2 = sig_s**2
    s_vals = s2 + s2 * s2 * (2.0 * f * f2 - f1 * f1) / (f * f)
    delta = x_s + s2 * f1 / f
    sq_err = (delta - mu_s) ** 2
    diff = s_vals - sq_err
    se = float(np.std(diff, ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else float("inf")
    return UnbiasednessCheck(float(s_vals.mean()), float(sq_err.mean()), se, n_mc)
