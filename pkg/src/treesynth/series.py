"""Core data types: time series, forecast representations, MCMC budgets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataShapeError, ValidationError
from .rng import _gen


@dataclass(frozen=True)
class TimeSeriesF:
    """Float series with an explicit integer period index.

    Periods are contiguous and ascending; ``periods[i] = start + i``.  The
    integer index is the only time coordinate used internally; calendar labels
    are attached at the serialization layer.
    """

    values: np.ndarray
    start: int = 1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise DataShapeError("TimeSeriesF values must be 1-d")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @property
    def periods(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self))

    def at(self, period: int) -> float:
        i = period - self.start
        if i < 0 or i >= len(self):
            raise KeyError(f"period {period} outside [{self.start}, {self.start + len(self) - 1}]")
        return float(self.values[i])

    def window(self, first: int, last: int) -> np.ndarray:
        """Values for periods ``first..last`` inclusive; all must exist."""
        if first > last:
            raise ValueError("empty window")
        i0, i1 = first - self.start, last - self.start
        if i0 < 0 or i1 >= len(self):
            raise KeyError(f"window [{first}, {last}] outside series range")
        return self.values[i0 : i1 + 1]


@dataclass(frozen=True)
class HistogramForecast:
    """Probabilities over closed, contiguous bins.

    Open outer intervals are resolved before construction (serialization
    layer); edges here are finite and strictly increasing.  Probabilities are
    renormalized to machine precision if they arrive within 1e-10 of one.
    """

    bin_edges: np.ndarray  # (B+1,) strictly increasing, finite
    probs: np.ndarray      # (B,) nonnegative, sums to 1

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if edges.ndim != 1 or probs.ndim != 1 or edges.size != probs.size + 1:
            raise DataShapeError("need B+1 edges for B probabilities")
        if not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
            raise ValidationError("bin edges must be finite and strictly increasing")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-10:
            raise ValidationError("probabilities must be nonnegative and sum to 1 within 1e-10")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "probs", probs / probs.sum())

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    def mean(self) -> float:
        mids = 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])
        return float(self.probs @ mids)

    def raw_moment(self, k: int) -> float:
        # Mass uniform within each bin: E[X^k | bin] = (b^(k+1) - a^(k+1)) / ((k+1)(b-a)).
        a, b = self.bin_edges[:-1], self.bin_edges[1:]
        seg = (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))
        return float(self.probs @ seg)

    def moments(self) -> tuple[float, float, float, float]:
        """Mean, variance, skewness, excess kurtosis under the piecewise-uniform density."""
        m1 = self.raw_moment(1)
        m2 = self.raw_moment(2)
        m3 = self.raw_moment(3)
        m4 = self.raw_moment(4)
        var = m2 - m1 ** 2
        if var <= 0:
            return m1, 0.0, 0.0, 0.0
        mu3 = m3 - 3 * m1 * m2 + 2 * m1 ** 3
        mu4 = m4 - 4 * m1 * m3 + 6 * m1 ** 2 * m2 - 3 * m1 ** 4
        return m1, var, mu3 / var ** 1.5, mu4 / var ** 2 - 3.0

    def sd(self) -> float:
        return float(np.sqrt(max(self.moments()[1], 0.0)))

    def log_density(self, x) -> np.ndarray:
        """Piecewise-constant log density; -inf outside the support."""
        x = np.asarray(x, dtype=np.float64)
        idx = np.searchsorted(self.bin_edges, x, side="right") - 1
        idx = np.clip(idx, 0, self.probs.size - 1)
        inside = (x >= self.bin_edges[0]) & (x <= self.bin_edges[-1])
        dens = self.probs[idx] / self.widths[idx]
        with np.errstate(divide="ignore"):
            out = np.where(inside & (dens > 0), np.log(np.maximum(dens, 1e-300)), -np.inf)
        return out

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        cum = np.concatenate([[0.0], np.cumsum(self.probs)])
        idx = np.clip(np.searchsorted(self.bin_edges, x, side="right") - 1, 0, self.probs.size - 1)
        frac = np.clip((x - self.bin_edges[idx]) / self.widths[idx], 0.0, 1.0)
        out = cum[idx] + frac * self.probs[idx]
        return np.where(x < self.bin_edges[0], 0.0, np.where(x > self.bin_edges[-1], 1.0, out))


def draw_from_histogram(hist: HistogramForecast, n: int, rng) -> np.ndarray:
    """``n`` draws: categorical over bins, uniform within the drawn bin."""
    g = _gen(rng)
    bins = g.choice(hist.probs.size, size=n, p=hist.probs)
    lo = hist.bin_edges[bins]
    return lo + hist.widths[bins] * g.uniform(0.0, 1.0, size=n)


@dataclass(frozen=True)
class AgentForecastArchive:
    """Per-origin forecast densities for J agents.

    ``kind`` is ``"draws"`` (each origin maps to a (J, R) draw matrix) or
    ``"histograms"`` (each origin maps to J histogram forecasts).  Draw-kind
    archives may carry exact normal parameters per (origin, agent) in
    ``gaussians`` ((J, 2) mean/sd rows), which lets synthetic pipelines bypass
    the density approximation while still exposing draws.
    """

    horizon: int
    agents: tuple[str, ...]
    kind: str
    draws: dict[int, np.ndarray] = field(default_factory=dict)
    histograms: dict[int, tuple[HistogramForecast, ...]] = field(default_factory=dict)
    gaussians: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("draws", "histograms"):
            raise ValidationError(f"unknown archive kind '{self.kind}'")
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        j = len(self.agents)
        if j == 0:
            raise ValidationError("archive needs at least one agent")
        if self.kind == "draws":
            r = None
            for t, mat in self.draws.items():
                mat = np.asarray(mat, dtype=np.float64)
                if mat.ndim != 2 or mat.shape[0] != j:
                    raise DataShapeError(f"origin {t}: draw matrix must be (J, R)")
                if r is None:
                    r = mat.shape[1]
                elif mat.shape[1] != r:
                    raise DataShapeError(f"origin {t}: unequal draw counts across origins")
                self.draws[t] = mat
            for t, g in self.gaussians.items():
                g = np.asarray(g, dtype=np.float64)
                if g.shape != (j, 2):
                    raise DataShapeError(f"origin {t}: gaussian params must be (J, 2)")
                self.gaussians[t] = g
        else:
            for t, hs in self.histograms.items():
                if len(hs) != j:
                    raise DataShapeError(f"origin {t}: need one histogram per agent")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def origins(self) -> tuple[int, ...]:
        store = self.draws if self.kind == "draws" else self.histograms
        return tuple(sorted(store))

    @property
    def n_draws(self) -> int | None:
        if self.kind != "draws" or not self.draws:
            return None
        return next(iter(self.draws.values())).shape[1]

    def draw_matrix(self, origin: int, n: int, rng) -> np.ndarray:
        """(J, n) draws for one origin, materializing histograms if needed."""
        if origin not in self.origins:
            raise DataShapeError(f"no archived forecasts at origin {origin}")
        if self.kind == "draws":
            mat = self.draws[origin]
            if n == mat.shape[1]:
                return mat
            g = _gen(rng)
            return mat[:, g.integers(0, mat.shape[1], size=n)]
        hs = self.histograms[origin]
        return np.stack([draw_from_histogram(h, n, rng) for h in hs])


@dataclass(frozen=True)
class McmcConfig:
    """Sweep budget for one sampler run.

    Retention rule: sweep ``i`` (1-based) is kept when ``i > n_burn`` and
    ``(i - n_burn) % thin == 0``, so the default budget retains exactly
    (12500 - 2500) / 2 = 5000 states per chain.
    """

    n_total: int = 12_500
    n_burn: int = 2_500
    thin: int = 2
    n_chains: int = 2

    def __post_init__(self):
        if self.n_total <= 0 or self.n_burn < 0 or self.n_burn >= self.n_total:
            raise ValidationError("need 0 <= n_burn < n_total")
        if self.thin < 1 or self.n_chains < 1:
            raise ValidationError("thin and n_chains must be >= 1")

    @property
    def n_retained(self) -> int:
        return (self.n_total - self.n_burn) // self.thin
