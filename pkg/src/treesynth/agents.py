"""Agent forecast models: the two-regime toy data generator and the
autoregressive distributed-lag (ADL) forecasters used in synthetic pipelines.

Both produce :class:`~treesynth.series.AgentForecastArchive` entries: per
forecast origin, a matrix of posterior-predictive draws per agent.  The toy
agents are exact conditional normals, stored as draws for pipeline parity
with their analytic parameters kept alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DataShapeError, ValidationError
from .rng import _gen, sample_inverse_gamma
from .series import AgentForecastArchive, HistogramForecast, TimeSeriesF
from .statespace import SvState, project_log_vol, sv_update


@dataclass(frozen=True)
class ToyDgpConfig:
    """Two-regime AR(2) generator; the regimes swap which lag dominates.

    y_t = rho1 y_{t-1} + damp rho2 y_{t-2} + sigma0 nu_t    for t <= break_t,
    y_t = damp rho1 y_{t-1} + rho2 y_{t-2} + sigma0 nu_t    for t >  break_t,

    with y_1 = y_2 = 0.  Agent 1 issues the exact one-step conditional
    N(rho1 y_t, (1 - rho1^2) sigma0^2) and agent 2 the analogous density on
    the second lag, so each agent is well specified in one regime only.
    """

    rho1: float = 0.8
    rho2: float = -0.8
    sigma0: float = 1.2
    damp: float = 0.01
    n_periods: int = 350
    break_t: int = 200

    def __post_init__(self):
        if self.n_periods < 4 or not 2 < self.break_t < self.n_periods:
            raise ValidationError("need n_periods >= 4 and 2 < break_t < n_periods")
        if self.sigma0 <= 0:
            raise ValidationError("sigma0 must be positive")


def simulate_toy(cfg: ToyDgpConfig, rng, n_draws: int = 1000) -> tuple[TimeSeriesF, AgentForecastArchive]:
    """Simulate the target path and both agents' forecast archives.

    Forecast origins run from period 2 (agent 2 needs two lags) to the
    penultimate period; horizon is one step.
    """
    g = _gen(rng)
    n = cfg.n_periods
    y = np.zeros(n)
    shocks = g.standard_normal(n) * cfg.sigma0
    for i in range(2, n):
        t = i + 1  # 1-based period
        if t <= cfg.break_t:
            y[i] = cfg.rho1 * y[i - 1] + cfg.damp * cfg.rho2 * y[i - 2] + shocks[i]
        else:
            y[i] = cfg.damp * cfg.rho1 * y[i - 1] + cfg.rho2 * y[i - 2] + shocks[i]

    sd1 = math.sqrt(max(1.0 - cfg.rho1 ** 2, 1e-12)) * cfg.sigma0
    sd2 = math.sqrt(max(1.0 - cfg.rho2 ** 2, 1e-12)) * cfg.sigma0
    draws: dict[int, np.ndarray] = {}
    gaussians: dict[int, np.ndarray] = {}
    for origin in range(2, n):           # 1-based origins 2 .. n-1
        m1 = cfg.rho1 * y[origin - 1]    # y at period `origin` (index origin-1)
        m2 = cfg.rho2 * y[origin - 2]
        gaussians[origin] = np.array([[m1, sd1], [m2, sd2]])
        z = g.standard_normal((2, n_draws))
        draws[origin] = np.array([[m1], [m2]]) + np.array([[sd1], [sd2]]) * z

    archive = AgentForecastArchive(horizon=1, agents=("lag1", "lag2"), kind="draws",
                                   draws=draws, gaussians=gaussians)
    return TimeSeriesF(y, start=1), archive


@dataclass(frozen=True)
class AdlModelSpec:
    """One ADL forecaster: pi_{t+h} = rho pi_t + alpha x_t + error.

    Coefficients carry independent N(0, coef_prior_var) priors; the error is
    homoskedastic (inverse gamma sigma_prior on the variance) or follows the
    stochastic-volatility block.  Estimation uses a rolling data window of
    ``window`` periods ending at the forecast origin; direct (not iterated)
    forecasts at the configured horizon.
    """

    label: str
    sv: bool = False
    horizon: int = 1
    window: int = 80
    n_draws: int = 1000
    gibbs_total: int = 3000
    gibbs_burn: int = 500
    coef_prior_var: float = 100.0
    sigma_prior_shape: float = 0.01
    sigma_prior_scale: float = 0.01

    def __post_init__(self):
        if self.window < 10:
            raise ValidationError("window must be >= 10")
        if self.horizon < 1 or self.horizon >= self.window:
            raise ValidationError("need 1 <= horizon < window")
        if self.gibbs_burn >= self.gibbs_total:
            raise ValidationError("gibbs_burn must be < gibbs_total")


def _thin_indices(n_kept: int, n_out: int) -> np.ndarray:
    if n_kept <= 0:
        raise ValidationError("no retained sweeps to thin")
    if n_out >= n_kept:
        return np.arange(n_kept)
    return np.linspace(0, n_kept - 1, n_out).astype(int)


def fit_adl_and_forecast(spec: AdlModelSpec, inflation: TimeSeriesF,
                         indicator: TimeSeriesF | None, origin: int, rng) -> np.ndarray:
    """Posterior-predictive draws of pi_{origin + h} using data through ``origin``.

    The regression sample pairs targets tau in (origin - window + h + 1 ..
    origin) with regressors dated tau - h, so nothing after the origin is
    touched.  ``indicator=None`` runs the pure AR benchmark (x_t = 0).
    """
    g = _gen(rng)
    h = spec.horizon
    first = origin - spec.window + 1
    pi_window = inflation.window(first, origin)
    if indicator is None:
        x_window = np.zeros_like(pi_window)
    else:
        x_window = indicator.window(first, origin)
        if x_window.size != pi_window.size:
            raise DataShapeError("indicator window does not match inflation window")

    y_reg = pi_window[h:]
    W = np.column_stack([pi_window[:-h], x_window[:-h]])
    n = y_reg.size

    prior_prec = np.eye(2) / spec.coef_prior_var
    sv = SvState.initial(n, scale=float(np.var(y_reg)) + 1e-6, homoskedastic=not spec.sv)
    theta = np.zeros(2)

    kept_theta = []
    kept_sv = []
    for it in range(1, spec.gibbs_total + 1):
        inv_var = 1.0 / sv.obs_var
        prec = (W * inv_var[:, None]).T @ W + prior_prec
        lin = (W * inv_var[:, None]).T @ y_reg
        chol = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, lin)
        theta = mean + np.linalg.solve(chol.T, g.standard_normal(2))

        resid = y_reg - W @ theta
        if spec.sv:
            sv = sv_update(sv, resid, g)
        else:
            ssq = float(resid @ resid)
            sv.sigma2 = float(sample_inverse_gamma(spec.sigma_prior_shape + 0.5 * n,
                                                   spec.sigma_prior_scale + 0.5 * ssq, g))
            sv.log_vol = np.full(n, math.log(sv.sigma2))

        if it > spec.gibbs_burn:
            kept_theta.append(theta.copy())
            kept_sv.append((sv.log_vol[-1], sv.mu, sv.rho, sv.sigma2))

    keep = _thin_indices(len(kept_theta), spec.n_draws)
    pi_o = inflation.at(origin)
    x_o = 0.0 if indicator is None else indicator.at(origin)
    out = np.empty(keep.size)
    for i, k in enumerate(keep):
        th = kept_theta[k]
        lv, mu, rho, s2 = kept_sv[k]
        state = SvState(np.array([lv]), mu=mu, rho=rho, sigma2=s2, homoskedastic=not spec.sv)
        sd = math.exp(0.5 * project_log_vol(state, h, g))
        out[i] = th[0] * pi_o + th[1] * x_o + sd * g.standard_normal()
    return out


def build_adl_archive(specs: list[AdlModelSpec], inflation: TimeSeriesF,
                      indicators: dict[str, TimeSeriesF], origins, rng) -> AgentForecastArchive:
    """Fit every ADL spec at every origin and collect the draw archive.

    ``specs`` entries with a label present in ``indicators`` use that series;
    any other label runs the pure AR model.  All specs must share a horizon.
    """
    horizons = {s.horizon for s in specs}
    if len(horizons) != 1:
        raise ValidationError("all agent specs must share one horizon")
    draws: dict[int, np.ndarray] = {}
    labels = tuple(s.label + (":sv" if s.sv else "") for s in specs)
    if len(set(labels)) != len(labels):
        raise ValidationError("agent labels must be unique")
    for origin in origins:
        mats = []
        for s in specs:
            child = rng.derive(f"adl/{origin}/{s.label}/{s.sv}")
            mats.append(fit_adl_and_forecast(s, inflation, indicators.get(s.label), origin, child))
        draws[int(origin)] = np.stack(mats)
    return AgentForecastArchive(horizon=horizons.pop(), agents=labels, kind="draws", draws=draws)


def impute_missing_histogram(mean: float, sd: float, bin_edges: np.ndarray) -> HistogramForecast:
    """Normal-implied histogram over a fixed bin grid.

    Tail mass beyond the outer edges folds into the outer bins, so the result
    is a proper forecast on the grid.  Used to fill in absent forecasters
    from a real-time unconditional mean and standard deviation.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if sd <= 0:
        raise ValidationError("sd must be positive")
    cdf = ndtr((edges - mean) / sd)
    probs = np.diff(cdf)
    probs[0] += cdf[0]
    probs[-1] += 1.0 - cdf[-1]
    return HistogramForecast(edges, probs / probs.sum())


def standard_adl_panel(indicator_labels: list[str], horizon: int = 1,
                       window: int = 80, **overrides) -> list[AdlModelSpec]:
    """The usual agent set: one homoskedastic and one SV model per indicator,
    plus the two AR-only counterparts."""
    specs = []
    for label in [*indicator_labels, "ar"]:
        for sv in (False, True):
            specs.append(AdlModelSpec(label=label, sv=sv, horizon=horizon,
                                      window=window, **overrides))
    return specs
