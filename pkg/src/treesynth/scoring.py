"""Density-forecast evaluation: scores, calibration, and comparison tests.

Scores are computed from predictive draws.  The continuous ranked probability
score uses the energy form

    CRPS(F, y) = E|X - y| - 0.5 E|X - X'| ,

with both expectations over all ordered draw pairs (self pairs included); the
pairwise term is evaluated through the exact sorted identity, so the cost is
O(R log R) per forecast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DataShapeError
from .rng import _gen

KS_BAND_95 = 1.358          # asymptotic Kolmogorov 95% constant, band = c / sqrt(n)
FLUCTUATION_CRIT_5PCT = 3.393  # two-sided 5% critical value, 10% rolling window

DEFAULT_ALPHA_GRID = np.round(np.arange(0.01, 1.00, 0.01), 2)


def sample_crps(draws: np.ndarray, y: float) -> float:
    """Energy-form CRPS of an empirical draw set against one realization."""
    x = np.sort(np.asarray(draws, dtype=np.float64))
    n = x.size
    if n == 0:
        raise DataShapeError("need at least one draw")
    term1 = float(np.mean(np.abs(x - y)))
    # sum over ordered pairs of |x_i - x_j| = 2 * sum_i (2i - n - 1) x_(i), 1-based i
    coef = 2.0 * np.arange(1, n + 1) - n - 1.0
    term2 = 2.0 * float(coef @ x) / (n * n)
    return term1 - 0.5 * term2


def quantile_score(q: np.ndarray, alpha: np.ndarray, y: float) -> np.ndarray:
    """2 (1{y < q} - alpha) (q - y); nonnegative, integrates to the CRPS."""
    q = np.asarray(q, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    return 2.0 * ((y < q).astype(np.float64) - alpha) * (q - y)


_WEIGHTS = {
    "uniform": lambda a: np.ones_like(a),
    "tails": lambda a: (2.0 * a - 1.0) ** 2,
    "left": lambda a: (1.0 - a) ** 2,
    "right": lambda a: a ** 2,
}


def quantile_weighted_crps(draws: np.ndarray, y: float, weights: str = "uniform",
                           alpha_grid: np.ndarray | None = None) -> float:
    """Quantile-score integral over an alpha grid with an emphasis weight.

    With uniform weights this approximates ``sample_crps`` (the grid spans
    0.01..0.99 by 0.01); "tails", "left", "right" emphasize the named region.
    """
    if weights not in _WEIGHTS:
        raise ValueError(f"unknown weight scheme '{weights}'")
    alpha = DEFAULT_ALPHA_GRID if alpha_grid is None else np.asarray(alpha_grid, dtype=np.float64)
    q = np.quantile(np.asarray(draws, dtype=np.float64), alpha)
    w = _WEIGHTS[weights](alpha)
    return float(np.mean(w * quantile_score(q, alpha, y)))


@dataclass
class PitResult:
    pit: np.ndarray          # one randomized PIT per forecast
    ks_stat: float           # sup distance between the PIT ECDF and uniform
    band: float              # 95% Kolmogorov band half-width
    inside: bool             # ks_stat <= band

    def ecdf_curve(self) -> tuple[np.ndarray, np.ndarray]:
        u = np.sort(self.pit)
        return u, np.arange(1, u.size + 1) / u.size


def pits(draw_sets, realizations: np.ndarray, rng) -> PitResult:
    """Randomized probability integral transforms with a uniformity band.

    PIT_t is the empirical CDF of the draws at y_t, randomized uniformly
    between the strict and weak counts so ties among draws are broken.  The
    band is the asymptotic 95% Kolmogorov band 1.358 / sqrt(n).
    """
    g = _gen(rng)
    y = np.asarray(realizations, dtype=np.float64)
    if len(draw_sets) != y.size:
        raise DataShapeError("one draw set per realization required")
    pit = np.empty(y.size)
    for i, draws in enumerate(draw_sets):
        d = np.asarray(draws, dtype=np.float64)
        lt = float(np.mean(d < y[i]))
        le = float(np.mean(d <= y[i]))
        pit[i] = lt + g.uniform() * (le - lt)
    u = np.sort(pit)
    grid = np.arange(1, u.size + 1) / u.size
    ks = float(np.max(np.maximum(np.abs(grid - u), np.abs(grid - 1.0 / u.size - u))))
    band = KS_BAND_95 / math.sqrt(u.size)
    return PitResult(pit, ks, band, ks <= band)


def _bartlett_lrv(d: np.ndarray, lag: int) -> float:
    """Long-run variance of a demeaned series, Bartlett kernel up to ``lag``."""
    d = d - d.mean()
    n = d.size
    out = float(d @ d) / n
    for l in range(1, min(lag, n - 1) + 1):
        gamma = float(d[l:] @ d[:-l]) / n
        out += 2.0 * (1.0 - l / (lag + 1.0)) * gamma
    return out


@dataclass
class DmResult:
    stat: float
    p_value: float
    mean_diff: float
    stars: str               # "", "*", "**", "***" at 10/5/1%
    degenerate: bool


def dm_test(losses_a: np.ndarray, losses_b: np.ndarray, horizon: int = 1) -> DmResult:
    """Diebold-Mariano comparison of two loss series.

    The loss differential a - b is standardized by its Bartlett HAC long-run
    variance with truncation horizon - 1; p-values are two-sided normal.  A
    (near) constant differential cannot be standardized and comes back
    flagged degenerate.
    """
    a = np.asarray(losses_a, dtype=np.float64)
    b = np.asarray(losses_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise DataShapeError("need two equal-length loss series with n >= 2")
    d = a - b
    lrv = _bartlett_lrv(d, horizon - 1)
    scale = d.mean() if d.mean() != 0 else 1.0
    if lrv <= (1e-15 * scale) ** 2 + 1e-300:
        return DmResult(math.nan, math.nan, float(d.mean()), "", True)
    stat = float(d.mean() / math.sqrt(lrv / d.size))
    p = 2.0 * (1.0 - float(ndtr(abs(stat))))
    stars = "***" if p <= 0.01 else "**" if p <= 0.05 else "*" if p <= 0.10 else ""
    return DmResult(stat, p, float(d.mean()), stars, False)


@dataclass
class FluctuationResult:
    stats: np.ndarray        # one statistic per window end
    window: int
    crit: float
    degenerate: bool

    @property
    def exceeds(self) -> np.ndarray:
        return np.abs(self.stats) > self.crit


def fluctuation_test(losses_a: np.ndarray, losses_b: np.ndarray,
                     window_frac: float = 0.10, crit: float = FLUCTUATION_CRIT_5PCT,
                     hac_lag: int = 0, hac_sd: float | None = None) -> FluctuationResult:
    """Rolling standardized mean loss differential (local relative accuracy).

    Each statistic is sum(d over window) / (hac_sd * sqrt(window)), with the
    HAC scale estimated once on the full sample unless supplied.  The default
    critical value 3.393 is the two-sided 5% value tabulated for a 10%
    window share.
    """
    a = np.asarray(losses_a, dtype=np.float64)
    b = np.asarray(losses_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataShapeError("loss series must be matching 1-d arrays")
    d = a - b
    n = d.size
    m = max(2, int(round(window_frac * n)))
    if m > n:
        raise DataShapeError("window longer than the sample")
    if hac_sd is None:
        lrv = _bartlett_lrv(d, hac_lag)
        if lrv <= 1e-300:
            return FluctuationResult(np.full(n - m + 1, np.nan), m, crit, True)
        hac_sd = math.sqrt(lrv)
    csum = np.concatenate([[0.0], np.cumsum(d)])
    sums = csum[m:] - csum[:-m]
    stats = sums / (hac_sd * math.sqrt(m))
    return FluctuationResult(stats, m, crit, False)


def probability_difference_map(draw_sets_a, draw_sets_b, edges: np.ndarray) -> np.ndarray:
    """Per-origin bin-probability differences (model a minus model b).

    Returns an (n_origins, n_bins) matrix over the supplied grid edges; rows
    sum to zero whenever the grid covers both draw sets.
    """
    edges = np.asarray(edges, dtype=np.float64)
    if len(draw_sets_a) != len(draw_sets_b):
        raise DataShapeError("need the same origins for both models")
    out = np.empty((len(draw_sets_a), edges.size - 1))
    for i, (da, db) in enumerate(zip(draw_sets_a, draw_sets_b)):
        pa = np.histogram(np.asarray(da, dtype=np.float64), bins=edges)[0] / len(da)
        pb = np.histogram(np.asarray(db, dtype=np.float64), bins=edges)[0] / len(db)
        out[i] = pa - pb
    return out


def quantile_skewness(draws: np.ndarray) -> tuple[float, bool]:
    """((q95 - q50) - (q50 - q5)) / (q95 - q5) and a defined flag.

    Needs at least 100 draws for stable tail quantiles; a degenerate spread
    (q95 == q5) returns (nan, False).
    """
    d = np.asarray(draws, dtype=np.float64)
    if d.size < 100:
        raise DataShapeError("quantile skewness needs at least 100 draws")
    q5, q50, q95 = np.quantile(d, [0.05, 0.50, 0.95])
    spread = q95 - q5
    if spread <= 0.0:
        return math.nan, False
    return float(((q95 - q50) - (q50 - q5)) / spread), True


def modifier_inclusion(split_counts: np.ndarray) -> tuple[np.ndarray, float]:
    """Posterior inclusion shares from per-draw split counts.

    ``split_counts`` is (n_draws, n_modifiers); each draw contributes its
    splits-per-modifier share of total splits, a draw with no splits at all
    contributing the uniform share.  Returns (mean shares, mean total splits).
    """
    counts = np.atleast_2d(np.asarray(split_counts, dtype=np.float64))
    totals = counts.sum(axis=1)
    k = counts.shape[1]
    shares = np.where(totals[:, None] > 0, counts / np.maximum(totals[:, None], 1.0),
                      np.full((1, k), 1.0 / k))
    return shares.mean(axis=0), float(totals.mean())


@dataclass
class ScoreSeries:
    """Per-origin scores of one model's predictive draws."""

    origins: np.ndarray
    targets: np.ndarray
    realized: np.ndarray
    point: np.ndarray        # predictive means
    sq_error: np.ndarray
    crps: np.ndarray
    qw_tails: np.ndarray
    qw_left: np.ndarray
    qw_right: np.ndarray

    def rmse(self) -> float:
        return float(np.sqrt(self.sq_error.mean()))

    def mean_crps(self) -> float:
        return float(self.crps.mean())


def build_score_series(origins, targets, draw_sets, realizations) -> ScoreSeries:
    y = np.asarray(realizations, dtype=np.float64)
    if not (len(origins) == len(targets) == len(draw_sets) == y.size):
        raise DataShapeError("origins, targets, draws, realizations must align")
    point = np.array([float(np.mean(d)) for d in draw_sets])
    crps = np.array([sample_crps(d, y[i]) for i, d in enumerate(draw_sets)])
    qwt = np.array([quantile_weighted_crps(d, y[i], "tails") for i, d in enumerate(draw_sets)])
    qwl = np.array([quantile_weighted_crps(d, y[i], "left") for i, d in enumerate(draw_sets)])
    qwr = np.array([quantile_weighted_crps(d, y[i], "right") for i, d in enumerate(draw_sets)])
    return ScoreSeries(np.asarray(origins), np.asarray(targets), y, point,
                       (point - y) ** 2, crps, qwt, qwl, qwr)
