"""State-space sampling blocks: random-walk intercept, stochastic volatility,
and the vector random-walk used by the time-varying benchmark.

All smoothing draws are exact joint draws via forward filtering backward
sampling (FFBS).  Variances with gamma (not inverse-gamma) priors are updated
by an independence Metropolis step whose proposal is the conditionally
conjugate inverse gamma, so acceptance stays high while the prior family is
respected exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataShapeError
from .rng import _gen, sample_inverse_gamma

# 10-component normal mixture approximation to log chi^2_1 noise
# (Omori, Chib, Shephard, Nakajima 2007): weights, means, variances.
LOG_CHI2_MIX_P = np.array([0.00609, 0.04775, 0.13057, 0.20674, 0.22715,
                           0.18842, 0.12047, 0.05591, 0.01575, 0.00115])
LOG_CHI2_MIX_M = np.array([1.92677, 1.34744, 0.73504, 0.02266, -0.85173,
                           -1.97278, -3.46788, -5.55246, -8.68384, -14.65000])
LOG_CHI2_MIX_V = np.array([0.11265, 0.17788, 0.26768, 0.40611, 0.62699,
                           0.98583, 1.57469, 2.54498, 4.16591, 7.33342])

SV_OFFSET = 1e-8  # added to squared residuals before taking logs


@dataclass
class InterceptPath:
    """Random-walk intercept draw and its innovation variance."""

    c: np.ndarray
    sigma2: float


@dataclass
class SvState:
    """Log-volatility path with AR(1) parameters.

    In homoskedastic mode the path is flat at log(sigma2) and only ``sigma2``
    is sampled (inverse-gamma 0.01/0.01 prior); otherwise the path follows
    varsigma_t = mu + rho (varsigma_{t-1} - mu) + N(0, sigma2) with priors
    mu ~ N(0, 100), (rho+1)/2 ~ Beta(5, 1.5), sigma2 ~ Gamma(0.5, rate 0.5).
    """

    log_vol: np.ndarray
    mu: float = 0.0
    rho: float = 0.95
    sigma2: float = 0.1
    homoskedastic: bool = False

    @staticmethod
    def initial(n_obs: int, scale: float = 1.0, homoskedastic: bool = False) -> "SvState":
        base = math.log(max(scale, 1e-8))
        return SvState(np.full(n_obs, base), mu=base, homoskedastic=homoskedastic,
                       sigma2=(max(scale, 1e-8) if homoskedastic else 0.1))

    @property
    def obs_var(self) -> np.ndarray:
        if self.homoskedastic:
            return np.full(self.log_vol.size, self.sigma2)
        return np.exp(self.log_vol)


def ffbs_intercept(y: np.ndarray, obs_var: np.ndarray, state_var: float, rng,
                   init_mean: float = 0.0, init_var: float = 10.0) -> np.ndarray:
    """Joint smoothing draw of a local-level path.

    Model: y_t = c_t + N(0, obs_var_t), c_t = c_{t-1} + N(0, state_var),
    c_1 ~ N(init_mean, init_var).  ``state_var = 0`` collapses the draw to a
    constant path.
    """
    y = np.asarray(y, dtype=np.float64)
    obs_var = np.asarray(obs_var, dtype=np.float64)
    if y.shape != obs_var.shape or y.ndim != 1:
        raise DataShapeError("y and obs_var must be matching 1-d arrays")
    g = _gen(rng)
    n = y.size
    m = np.empty(n)
    p = np.empty(n)
    mean, var = init_mean, init_var
    for t in range(n):
        if t > 0:
            var = var + state_var
        gain = var / (var + obs_var[t])
        mean = mean + gain * (y[t] - mean)
        var = var * (1.0 - gain)
        m[t], p[t] = mean, var

    c = np.empty(n)
    c[-1] = m[-1] + math.sqrt(max(p[-1], 0.0)) * g.standard_normal()
    for t in range(n - 2, -1, -1):
        denom = p[t] + state_var
        if denom <= 0.0:
            c[t] = c[t + 1]
            continue
        gain = p[t] / denom
        mean = m[t] + gain * (c[t + 1] - m[t])
        var = p[t] * state_var / denom
        c[t] = mean + math.sqrt(max(var, 0.0)) * g.standard_normal()
    return c


def mh_update_variance_gamma_prior(current: float, ssq: float, n: int,
                                   prior_shape: float, prior_rate: float, rng) -> tuple[float, bool]:
    """Independence MH for a variance with a Gamma(shape, rate) prior.

    The proposal is the inverse gamma iG(n/2, ssq/2) implied by the Gaussian
    increments alone; the acceptance ratio then reduces to
    (v*/v)^shape * exp(-rate (v* - v)).
    """
    if n < 1:
        return current, False
    g = _gen(rng)
    prop = float(sample_inverse_gamma(0.5 * n, max(0.5 * ssq, 1e-300), g))
    if not np.isfinite(prop) or prop <= 0.0:
        return current, False
    log_alpha = prior_shape * math.log(prop / current) - prior_rate * (prop - current)
    if math.log(g.uniform()) < log_alpha:
        return prop, True
    return current, False


def gibbs_update_sigma2_c(c_path: np.ndarray, current: float, rng,
                          prior_shape: float = 1.0, prior_rate: float = 100.0) -> tuple[float, bool]:
    """Update the intercept innovation variance from its path increments.

    The tight Gamma(1, rate 100) default keeps the random-walk intercept a
    slow drift (prior mean 0.01).
    """
    c_path = np.asarray(c_path, dtype=np.float64)
    if c_path.size < 2:
        return current, False
    inc = np.diff(c_path)
    return mh_update_variance_gamma_prior(current, float(inc @ inc), inc.size,
                                          prior_shape, prior_rate, rng)


def _ffbs_ar1(obs: np.ndarray, obs_var: np.ndarray, rho: float, innov_var: float,
              init_var: float, g) -> np.ndarray:
    """FFBS for a zero-mean AR(1) state observed with additive noise."""
    n = obs.size
    m = np.empty(n)
    p = np.empty(n)
    mean, var = 0.0, init_var
    for t in range(n):
        if t > 0:
            mean = rho * mean
            var = rho * rho * var + innov_var
        gain = var / (var + obs_var[t])
        mean = mean + gain * (obs[t] - mean)
        var = var * (1.0 - gain)
        m[t], p[t] = mean, var

    a = np.empty(n)
    a[-1] = m[-1] + math.sqrt(max(p[-1], 0.0)) * g.standard_normal()
    for t in range(n - 2, -1, -1):
        denom = rho * rho * p[t] + innov_var
        if denom <= 0.0:
            a[t] = a[t + 1] / rho if rho != 0.0 else m[t]
            continue
        gain = rho * p[t] / denom
        mean = m[t] + gain * (a[t + 1] - rho * m[t])
        var = p[t] - gain * rho * p[t]
        a[t] = mean + math.sqrt(max(var, 0.0)) * g.standard_normal()
    return a


def sv_update(state: SvState, residuals: np.ndarray, rng,
              offset: float = SV_OFFSET) -> SvState:
    """One Gibbs scan of the volatility block given observation residuals.

    Heteroskedastic mode linearizes log(r_t^2 + offset) = varsigma_t + noise,
    draws the 10-component mixture indicators, runs FFBS on the resulting
    linear Gaussian model, then refreshes (mu, rho, sigma2).  Homoskedastic
    mode is the conjugate inverse-gamma update.
    """
    g = _gen(rng)
    r = np.asarray(residuals, dtype=np.float64)
    n = r.size

    if state.homoskedastic:
        ssq = float(r @ r)
        state.sigma2 = float(sample_inverse_gamma(0.01 + 0.5 * n, 0.01 + 0.5 * ssq, g))
        state.log_vol = np.full(n, math.log(state.sigma2))
        return state

    ystar = np.log(r * r + offset)

    # mixture indicators, one categorical per observation
    resid_k = ystar[:, None] - state.log_vol[:, None] - LOG_CHI2_MIX_M[None, :]
    logp = np.log(LOG_CHI2_MIX_P)[None, :] - 0.5 * np.log(LOG_CHI2_MIX_V)[None, :] \
        - 0.5 * resid_k ** 2 / LOG_CHI2_MIX_V[None, :]
    logp -= logp.max(axis=1, keepdims=True)
    probs = np.exp(logp)
    probs /= probs.sum(axis=1, keepdims=True)
    u = g.uniform(size=n)
    idx = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
    idx = np.minimum(idx, LOG_CHI2_MIX_P.size - 1)

    # FFBS on the centered path a_t = varsigma_t - mu
    obs = ystar - LOG_CHI2_MIX_M[idx] - state.mu
    obs_var = LOG_CHI2_MIX_V[idx]
    init_var = state.sigma2 / max(1.0 - state.rho ** 2, 1e-8)
    a = _ffbs_ar1(obs, obs_var, state.rho, state.sigma2, min(init_var, 1e8), g)
    state.log_vol = a + state.mu

    # mu | path: Gaussian with the stationary initial condition included
    h = state.log_vol
    rho, s2 = state.rho, state.sigma2
    prec = (1.0 - rho ** 2) / s2 + (n - 1) * (1.0 - rho) ** 2 / s2 + 1.0 / 100.0
    lin = h[0] * (1.0 - rho ** 2) / s2 + (1.0 - rho) * float(np.sum(h[1:] - rho * h[:-1])) / s2
    mu_var = 1.0 / prec
    state.mu = float(mu_var * lin + math.sqrt(mu_var) * g.standard_normal())

    # rho | path: independence MH from the conditional-likelihood Gaussian;
    # the Gaussian factors cancel, leaving prior and stationarity terms.
    a = h - state.mu
    denom = float(a[:-1] @ a[:-1])
    if denom > 0.0:
        rho_hat = float(a[1:] @ a[:-1]) / denom
        rho_sd = math.sqrt(s2 / denom)
        prop = rho_hat + rho_sd * g.standard_normal()
        if abs(prop) < 0.9999:
            def log_extra(r_):
                return (4.0 * math.log1p(r_) + 0.5 * math.log(1.0 - r_)
                        + 0.5 * math.log(1.0 - r_ ** 2)
                        - a[0] ** 2 * (1.0 - r_ ** 2) / (2.0 * s2))
            if math.log(g.uniform()) < log_extra(prop) - log_extra(state.rho):
                state.rho = prop

    # sigma2 | path: Gamma(0.5, rate 0.5) prior; initial condition counts as
    # one extra pseudo-increment.
    a = h - state.mu
    eta = a[1:] - state.rho * a[:-1]
    ssq = float(eta @ eta) + a[0] ** 2 * (1.0 - state.rho ** 2)
    state.sigma2, _ = mh_update_variance_gamma_prior(state.sigma2, ssq, n, 0.5, 0.5, g)
    return state


def project_log_vol(state: SvState, steps: int, rng) -> float:
    """Simulate the log-volatility ``steps`` periods past the end of its path."""
    g = _gen(rng)
    if state.homoskedastic:
        return math.log(state.sigma2)
    a = float(state.log_vol[-1]) - state.mu
    sd = math.sqrt(state.sigma2)
    for _ in range(steps):
        a = state.rho * a + sd * g.standard_normal()
    return state.mu + a


def _chol_psd(mat: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * max(float(np.trace(mat)) / mat.shape[0], 1.0)
        return np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0]))


def ffbs_random_walk_vector(y: np.ndarray, X: np.ndarray, obs_var: np.ndarray,
                            innov_var: np.ndarray, rng,
                            init_var: float = 10.0) -> np.ndarray:
    """Joint smoothing draw of a J-dimensional random-walk coefficient path.

    Model: y_t = x_t' b_t + N(0, obs_var_t), b_t = b_{t-1} + N(0, diag(innov_var)),
    b_1 ~ N(0, init_var I).  Returns the (T, J) path.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    obs_var = np.asarray(obs_var, dtype=np.float64)
    n, j = X.shape
    if y.size != n or obs_var.size != n:
        raise DataShapeError("y, X, obs_var must share their time dimension")
    q = np.diag(np.asarray(innov_var, dtype=np.float64))
    g = _gen(rng)

    means = np.empty((n, j))
    covs = np.empty((n, j, j))
    mean = np.zeros(j)
    cov = init_var * np.eye(j)
    for t in range(n):
        if t > 0:
            cov = cov + q
        x = X[t]
        s = float(x @ cov @ x) + obs_var[t]
        k = cov @ x / s
        mean = mean + k * (y[t] - float(x @ mean))
        cov = cov - np.outer(k, x @ cov)
        cov = 0.5 * (cov + cov.T)
        means[t], covs[t] = mean, cov

    path = np.empty((n, j))
    path[-1] = means[-1] + _chol_psd(covs[-1]) @ g.standard_normal(j)
    for t in range(n - 2, -1, -1):
        p = covs[t]
        gain = np.linalg.solve((p + q).T, p.T).T
        mean = means[t] + gain @ (path[t + 1] - means[t])
        cov = p - gain @ p
        cov = 0.5 * (cov + cov.T)
        path[t] = mean + _chol_psd(cov) @ g.standard_normal(j)
    return path
