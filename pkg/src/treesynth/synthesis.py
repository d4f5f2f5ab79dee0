"""The density-combination engine.

The observation equation, written over the estimation rows t = 1..T (each row
one forecast target),

    y_t = c_t + sum_j (gamma_j + beta_jt) x_jt + sigma_t nu_t ,

treats the agent draws x_jt as latent variables distributed per the agents'
predictive densities.  The intercept c_t is a random walk (it absorbs what no
agent explains), sigma_t is constant or stochastic-volatility, and the weights
decompose into a time-invariant part gamma and deviations beta_t.  Weight
priors are hierarchical: gamma_j ~ N(mu_gamma_j(z), tau_gamma_j) and
beta_jt ~ N(mu_beta_j(z_t), tau_beta_j), with the prior means given by
sum-of-trees surfaces over the modifier panel and the prior variances given
the half-Cauchy product shrinkage prior.

Variants: "tree" is the full model; "rw" replaces the tree/shrinkage beta
block with a diagonal random walk (its innovation variances carry tight
Gamma(1, 100) priors); "const" sets beta = 0.  All share the intercept,
volatility, gamma, and latent-agent-draw machinery.

One Gibbs sweep updates, in order: (1) intercept path and its innovation
variance, (2) gamma, (3) beta, (4) volatility, (5) agent draws by adaptive
Metropolis-Hastings, (6) the tree ensembles, (7) the shrinkage variances.
The Metropolis proposal covariance adapts during burn-in only and is frozen
when burn-in ends, so retained draws come from a fixed kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .errors import DataShapeError, NumericalAbort, ValidationError
from .horseshoe import HorseshoeState, gibbs_update_horseshoe
from .modifiers import ModifierPanel
from .rng import RngHandle, _gen
from .series import AgentForecastArchive, McmcConfig, TimeSeriesF, draw_from_histogram
from .statespace import (SvState, ffbs_intercept, ffbs_random_walk_vector,
                         gibbs_update_sigma2_c, mh_update_variance_gamma_prior,
                         sv_update)
from .trees import (TreeEnsemble, TreePriorConfig, gibbs_update_ensemble,
                    split_candidates)

KINDS = ("const", "rw", "tree")

SIGMA2_C_PRIOR = (1.0, 100.0)   # Gamma(shape, rate) on the intercept innovation variance
RW_VAR_PRIOR = (1.0, 100.0)     # Gamma(shape, rate) on each random-walk innovation variance
INIT_STATE_VAR = 10.0           # diffuse-but-proper variance for initial states
MH_ACCEPT_BAND = (0.05, 0.60)   # acceptance-rate band outside which a diagnostic fires


@dataclass(frozen=True)
class SynthesisSpec:
    """Model variant, budgets, and test pins for one synthesis fit.

    The ``fix_*`` and ``pin_*`` fields hold named pieces of the sampler at
    known values; they exist for calibration and verification runs and default
    to fully sampled behavior.
    """

    kind: str = "tree"
    n_trees: int = 1
    sv: bool = False
    modifier_spec: str | None = None
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    tree_prior: TreePriorConfig = field(default_factory=TreePriorConfig)
    gamma_enabled: bool = True
    mh_kappa: float = 0.05
    mh_proposal_draws: int = 0      # reserved; adaptation always uses burn-in sweeps
    exact_x_updates: bool = False   # conjugate agent-draw updates (needs gaussian params)
    pin_tau_gamma: float | None = None
    pin_tau_beta: float | None = None
    fix_trees: bool = False
    fix_sigma2: float | None = None
    fix_intercept: float | None = None
    fix_x: bool = False
    fix_rw_var: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}")
        if self.kind == "tree" and self.n_trees < 1:
            raise ValidationError("tree kind needs n_trees >= 1")
        if not 0.0 <= self.mh_kappa <= 1.0:
            raise ValidationError("mh_kappa must lie in [0, 1]")


class _AgentDensities:
    """Log densities of the agents' archived forecasts, evaluated at (T, J) points."""

    def __init__(self, kind, draws=None, bandwidths=None, gaussians=None, histograms=None):
        self.kind = kind
        self.draws = draws
        self.bandwidths = bandwidths
        self.gaussians = gaussians
        self.histograms = histograms

    def logpdf(self, points: np.ndarray) -> np.ndarray:
        if self.kind == "gaussian":
            m, s = self.gaussians[:, :, 0], self.gaussians[:, :, 1]
            return -0.5 * ((points - m) / s) ** 2 - np.log(s) - 0.5 * math.log(2 * math.pi)
        if self.kind == "kde":
            z = (points[:, :, None] - self.draws) / self.bandwidths[:, :, None]
            comp = -0.5 * z ** 2 - np.log(self.bandwidths)[:, :, None] - 0.5 * math.log(2 * math.pi)
            return logsumexp(comp, axis=2) - math.log(self.draws.shape[2])
        out = np.empty_like(points)
        for t, row in enumerate(self.histograms):
            for j, hist in enumerate(row):
                out[t, j] = hist.log_density(points[t, j])
        return out


def _silverman_bandwidths(draws: np.ndarray) -> np.ndarray:
    """0.9 min(sd, IQR/1.34) R^(-1/5) per (t, j), floored at 1e-6."""
    r = draws.shape[2]
    sd = draws.std(axis=2)
    q75, q25 = np.quantile(draws, [0.75, 0.25], axis=2)
    spread = np.minimum(sd, (q75 - q25) / 1.34)
    return np.maximum(0.9 * spread * r ** (-0.2), 1e-6)


@dataclass
class SynthesisData:
    """Aligned estimation inputs for one fit."""

    y: np.ndarray                 # (T,) realized targets
    targets: np.ndarray           # (T,) target periods
    agents: tuple[str, ...]
    x_draws: np.ndarray           # (T, J, R) archived draws per target row
    densities: _AgentDensities
    panel: ModifierPanel | None
    horizon: int

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def n_agents(self) -> int:
        return len(self.agents)


def prepare_synthesis_data(y: TimeSeriesF, archive: AgentForecastArchive, targets,
                           panel: ModifierPanel | None, spec: SynthesisSpec,
                           rng: RngHandle | None = None,
                           n_hist_draws: int = 512) -> SynthesisData:
    """Align realizations, archived forecasts, and the modifier panel.

    Each estimation target tau must be realized in ``y`` and forecast from
    origin tau - horizon in the archive.  Histogram archives are materialized
    into draws (deterministically from ``rng``) for initialization and
    statistics; their densities stay exact.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0 or np.any(np.diff(targets) <= 0):
        raise ValidationError("targets must be nonempty and strictly ascending")
    h = archive.horizon
    yv = np.array([y.at(int(t)) for t in targets])
    jn = archive.n_agents

    if spec.kind == "const" and panel is not None and panel.k_beta > 0:
        raise ValidationError("const kind forbids time-varying modifiers (z_beta)")
    if spec.kind == "tree":
        if panel is None:
            raise ValidationError("tree kind requires a modifier panel")
        if panel.targets.size != targets.size or np.any(panel.targets != targets):
            raise ValidationError("panel targets must match estimation targets")
        if panel.n_agents != jn:
            raise ValidationError("panel agent count must match the archive")

    if archive.kind == "draws":
        mats = []
        for t in targets:
            origin = int(t) - h
            if origin not in archive.draws:
                raise DataShapeError(f"no archived forecast for target {t}")
            mats.append(archive.draws[origin])
        x_draws = np.stack(mats)
        if spec.exact_x_updates or all(int(t) - h in archive.gaussians for t in targets):
            have_gauss = all(int(t) - h in archive.gaussians for t in targets)
        else:
            have_gauss = False
        if spec.exact_x_updates and not have_gauss:
            raise ValidationError("exact_x_updates needs gaussian parameters for every origin")
        if have_gauss:
            gp = np.stack([archive.gaussians[int(t) - h] for t in targets])
            densities = _AgentDensities("gaussian", gaussians=gp)
        else:
            densities = _AgentDensities("kde", draws=x_draws,
                                        bandwidths=_silverman_bandwidths(x_draws))
    else:
        rows = []
        hists = []
        child = (rng or RngHandle(0)).derive("hist-draws")
        for t in targets:
            origin = int(t) - h
            if origin not in archive.histograms:
                raise DataShapeError(f"no archived forecast for target {t}")
            row = archive.histograms[origin]
            hists.append(row)
            rows.append(np.stack([draw_from_histogram(hh, n_hist_draws, child) for hh in row]))
        x_draws = np.stack(rows)
        densities = _AgentDensities("histogram", histograms=hists)

    return SynthesisData(yv, targets, archive.agents, x_draws, densities, panel, h)


@dataclass
class _MhAdapt:
    """Per-row adaptive proposal state; adaptation happens in burn-in only."""

    count: int
    mean: np.ndarray            # (T, J)
    m2: np.ndarray              # (T, J, J)
    chol: np.ndarray | None     # (T, J, J) scaled proposal factor, None until warm
    frozen: bool = False
    accepted: int = 0           # post-burn-in totals over all rows
    proposed: int = 0

    @staticmethod
    def initial(n_obs: int, n_agents: int) -> "_MhAdapt":
        return _MhAdapt(0, np.zeros((n_obs, n_agents)), np.zeros((n_obs, n_agents, n_agents)), None)

    def observe(self, x: np.ndarray) -> None:
        if self.frozen:
            return
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta[:, :, None] * (x - self.mean)[:, None, :]

    def refresh_chol(self) -> None:
        j = self.mean.shape[1]
        if self.count < j + 2:
            return
        cov = self.m2 / (self.count - 1)
        cov = cov + 1e-10 * np.eye(j)
        try:
            self.chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            diag = np.sqrt(np.maximum(np.diagonal(cov, axis1=1, axis2=2), 1e-12))
            self.chol = np.zeros_like(cov)
            idx = np.arange(j)
            self.chol[:, idx, idx] = diag


@dataclass
class SynthesisState:
    """Everything one Gibbs sweep reads and writes."""

    gamma: np.ndarray           # (J,)
    beta: np.ndarray            # (T, J)
    c: np.ndarray               # (T,)
    sigma2_c: float
    sv: SvState
    x: np.ndarray               # (T, J) current agent draws
    tau_gamma: np.ndarray       # (J,)
    tau_beta: np.ndarray        # (J,)
    hs_gamma: HorseshoeState
    hs_beta: HorseshoeState
    ens_gamma: TreeEnsemble | None
    ens_beta: TreeEnsemble | None
    fits_gamma: np.ndarray | None
    fits_beta: np.ndarray | None
    mu_gamma: np.ndarray        # (J,)
    mu_beta: np.ndarray         # (T, J)
    rw_var: np.ndarray | None   # (J,) random-walk innovation variances (rw kind)
    mh: _MhAdapt
    iteration: int = 0
    tree_moves_accepted: int = 0
    tree_moves_proposed: int = 0

    def weights(self) -> np.ndarray:
        return self.gamma[None, :] + self.beta


def initial_state(spec: SynthesisSpec, data: SynthesisData) -> SynthesisState:
    t, j = data.n_obs, data.n_agents
    x0 = data.x_draws.mean(axis=2)
    scale = float(np.var(data.y)) + 1e-6
    sv = SvState.initial(t, scale=scale, homoskedastic=not spec.sv)
    if spec.fix_sigma2 is not None:
        sv = SvState.initial(t, scale=spec.fix_sigma2, homoskedastic=True)
        sv.sigma2 = spec.fix_sigma2
        sv.log_vol = np.full(t, math.log(spec.fix_sigma2))
    tau_g = np.full(j, spec.pin_tau_gamma) if spec.pin_tau_gamma is not None else np.ones(j)
    tau_b = np.full(j, spec.pin_tau_beta) if spec.pin_tau_beta is not None else np.ones(j)

    ens_g = ens_b = None
    fits_g = fits_b = None
    mu_g = np.zeros(j)
    mu_b = np.zeros((t, j))
    if spec.kind == "tree":
        ens_g = TreeEnsemble.root_only(spec.n_trees, spec.tree_prior)
        ens_b = TreeEnsemble.root_only(spec.n_trees, spec.tree_prior)
        fits_g = np.zeros((spec.n_trees, j))
        fits_b = np.zeros((spec.n_trees, t * j))

    c0 = np.zeros(t) if spec.fix_intercept is None else np.full(t, spec.fix_intercept)
    rw = None
    if spec.kind == "rw":
        rw = np.full(j, spec.fix_rw_var if spec.fix_rw_var is not None else 0.01)

    return SynthesisState(
        gamma=np.zeros(j), beta=np.zeros((t, j)), c=c0, sigma2_c=0.01, sv=sv,
        x=x0, tau_gamma=tau_g, tau_beta=tau_b,
        hs_gamma=HorseshoeState.initial(j), hs_beta=HorseshoeState.initial(j),
        ens_gamma=ens_g, ens_beta=ens_b, fits_gamma=fits_g, fits_beta=fits_b,
        mu_gamma=mu_g, mu_beta=mu_b, rw_var=rw, mh=_MhAdapt.initial(t, j))


def _check_finite(step: str, arr, iteration: int) -> None:
    a = np.asarray(arr, dtype=float)
    if np.all(np.isfinite(a)):
        return
    bad = np.argwhere(~np.isfinite(a))
    index = tuple(int(v) for v in bad[0]) if bad.size else ()
    raise NumericalAbort(step, index if len(index) != 1 else index[0], iteration)


def _draw_mvn_batched(prec: np.ndarray, lin: np.ndarray, rng) -> np.ndarray:
    """Draw from N(prec^-1 lin, prec^-1) for a (T, J, J) batch of precisions."""
    gen = _gen(rng)
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        prec = prec + 1e-10 * np.eye(prec.shape[-1])
        chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, lin[..., None])[..., 0]
    z = gen.standard_normal(lin.shape)
    noise = np.linalg.solve(np.transpose(chol, (0, 2, 1)), z[..., None])[..., 0]
    return mean + noise


def _draw_mvn(prec: np.ndarray, lin: np.ndarray, rng) -> np.ndarray:
    gen = _gen(rng)
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(prec + 1e-10 * np.eye(prec.shape[0]))
    mean = np.linalg.solve(prec, lin)
    z = gen.standard_normal(lin.shape)
    from scipy.linalg import solve_triangular
    noise = solve_triangular(chol.T, z, lower=False)
    return mean + noise


def _step_intercept(state: SynthesisState, spec: SynthesisSpec, data: SynthesisData,
                    rng: RngHandle) -> None:
    if spec.fix_intercept is not None:
        return
    resid = data.y - np.sum(state.weights() * state.x, axis=1)
    obs_var = state.sv.obs_var
    state.c = ffbs_intercept(resid, obs_var, state.sigma2_c, rng.derive("ffbs-c"),
                             init_mean=0.0, init_var=INIT_STATE_VAR)
    _check_finite("intercept", state.c, state.iteration)
    state.sigma2_c, _ = gibbs_update_sigma2_c(
        state.c, state.sigma2_c, rng.derive("sigma2-c"),
        prior_shape=SIGMA2_C_PRIOR[0], prior_rate=SIGMA2_C_PRIOR[1])
    _check_finite("sigma2_c", state.sigma2_c, state.iteration)


def _step_gamma(state: SynthesisState, spec: SynthesisSpec, data: SynthesisData,
                rng: RngHandle) -> None:
    if not spec.gamma_enabled:
        state.gamma = np.zeros(data.n_agents)
        return
    obs_var = state.sv.obs_var
    resid = data.y - state.c - np.sum(state.beta * state.x, axis=1)
    xw = state.x / obs_var[:, None]
    prec = xw.T @ state.x + np.diag(1.0 / state.tau_gamma)
    lin = xw.T @ resid + state.mu_gamma / state.tau_gamma
    state.gamma = _draw_mvn(prec, lin, rng.derive("gamma"))
    _check_finite("gamma", state.gamma, state.iteration)


def _step_beta_tree(state: SynthesisState, spec: SynthesisSpec, data: SynthesisData,
                    rng: RngHandle) -> None:
    t, j = data.n_obs, data.n_agents
    obs_var = state.sv.obs_var
    resid = data.y - state.c - state.x @ state.gamma
    inv_tau = 1.0 / state.tau_beta
    prec = state.x[:, :, None] * state.x[:, None, :] / obs_var[:, None, None]
    prec = prec + np.diag(inv_tau)[None, :, :]
    lin = state.x * (resid / obs_var)[:, None] + state.mu_beta * inv_tau[None, :]
    state.beta = _draw_mvn_batched(prec, lin, rng.derive("beta"))
    _check_finite("beta", state.beta, state.iteration)


def _step_beta_rw(state: SynthesisState, spec: SynthesisSpec, data: SynthesisData,
                  rng: RngHandle) -> None:
    obs_var = state.sv.obs_var
    resid = data.y - state.c - state.x @ state.gamma
    state.beta = ffbs_random_walk_vector(resid, state.x, obs_var, state.rw_var,
                                         rng.derive("beta-rw"), init_var=INIT_STATE_VAR)
    _check_finite("beta", state.beta, state.iteration)
    if spec.fix_rw_var is None:
        child = rng.derive("rw-var")
        diffs = np.diff(state.beta, axis=0)
        n = diffs.shape[0]
        for jj in range(state.rw_var.size):
            ssq = float(np.sum(diffs[:, jj] ** 2))
            state.rw_var[jj], _ = mh_update_variance_gamma_prior(
                float(state.rw_var[jj]), ssq, n, RW_VAR_PRIOR[0], RW_VAR_PRIOR[1],
                child.derive(f"v{jj}"))
        _check_finite("rw_var", state.rw_var, state.iteration)


def _step_volatility(state: SynthesisState, spec: SynthesisSpec, data: SynthesisData,
                     rng: RngHandle) -> None:
    if spec.fix_sigma2 is not None:
        return
    resid = data.y - state.c - np.sum(state.weights() * state.x, axis=1)
    sv_update(state.sv, resid, rng.derive("sv"))
    _check_finite("volatility", state.sv.log_vol, state.iteration)


def _step_agent_draws(state: SynthesisState, spec: SynthesisSpec, data: SynthesisData,
                      rng: RngHandle) -> None:
    if spec.fix_x:
        return
    if spec.exact_x_updates:
        _exact_agent_update(state, data, rng)
        return
    gen = _gen(rng.derive("mh"))
    t, j = data.n_obs, data.n_agents
    obs_var = state.sv.obs_var
    w = state.weights()

    def log_target(x):
        quad = -0.5 * (data.y - state.c - np.sum(w * x, axis=1)) ** 2 / obs_var
        return quad + data.densities.logpdf(x).sum(axis=1)

    mh = state.mh
    small_sd = 0.1 / math.sqrt(j)
    big_scale = 2.38 / math.sqrt(j)
    z = gen.standard_normal((t, j))
    if mh.chol is None:
        step = small_sd * z
    else:
        use_small = gen.random(t) < spec.mh_kappa
        big = big_scale * np.einsum("tjk,tk->tj", mh.chol, z)
        step = np.where(use_small[:, None], small_sd * z, big)
    prop = state.x + step
    lt_curr = log_target(state.x)
    lt_prop = log_target(prop)
    accept = np.log(gen.random(t)) < lt_prop - lt_curr
    state.x = np.where(accept[:, None], prop, state.x)
    _check_finite("agent_draws", state.x, state.iteration)

    burn = spec.mcmc.n_burn
    if state.iteration < burn:
        mh.observe(state.x)
        mh.refresh_chol()
    elif not mh.frozen:
        mh.refresh_chol()
        mh.frozen = True
    if state.iteration >= burn:
        mh.accepted += int(accept.sum())
        mh.proposed += t


def _exact_agent_update(state: SynthesisState, data: SynthesisData, rng: RngHandle) -> None:
    """Conjugate agent-draw update when every agent density is exactly Gaussian."""
    g = data.densities.gaussians
    m, s2 = g[:, :, 0], g[:, :, 1] ** 2
    obs_var = state.sv.obs_var
    w = state.weights()
    prec = w[:, :, None] * w[:, None, :] / obs_var[:, None, None]
    idx = np.arange(data.n_agents)
    prec[:, idx, idx] += 1.0 / s2
    lin = w * ((data.y - state.c) / obs_var)[:, None] + m / s2
    state.x = _draw_mvn_batched(prec, lin, rng.derive("x-exact"))
    _check_finite("agent_draws", state.x, state.iteration)


def _step_trees(state: SynthesisState, spec: SynthesisSpec, data: SynthesisData,
                rng: RngHandle, candidates_gamma, candidates_beta) -> None:
    t, j = data.n_obs, data.n_agents
    panel = data.panel
    structural = not spec.fix_trees
    if spec.gamma_enabled:
        fits, acc = gibbs_update_ensemble(
            state.ens_gamma, panel.z_gamma, state.gamma, state.tau_gamma,
            rng.derive("trees-gamma"), candidates=candidates_gamma,
            fits=state.fits_gamma,
            structure_updates=structural and panel.k_gamma > 0)
        state.fits_gamma = fits
        state.mu_gamma = fits.sum(axis=0)
        state.tree_moves_accepted += acc
        state.tree_moves_proposed += len(state.ens_gamma.trees)
    resp = state.beta.reshape(t * j)
    variances = np.tile(state.tau_beta, t)
    fits, acc = gibbs_update_ensemble(
        state.ens_beta, panel.z_beta, resp, variances,
        rng.derive("trees-beta"), candidates=candidates_beta,
        fits=state.fits_beta,
        structure_updates=structural and panel.k_beta > 0)
    state.fits_beta = fits
    state.mu_beta = fits.sum(axis=0).reshape(t, j)
    state.tree_moves_accepted += acc
    state.tree_moves_proposed += len(state.ens_beta.trees)
    _check_finite("trees", state.mu_beta, state.iteration)


def _step_horseshoe(state: SynthesisState, spec: SynthesisSpec, data: SynthesisData,
                    rng: RngHandle) -> None:
    if spec.pin_tau_gamma is None and spec.gamma_enabled:
        gibbs_update_horseshoe(state.hs_gamma, state.gamma - state.mu_gamma,
                               rng.derive("hs-gamma"))
        state.tau_gamma = state.hs_gamma.tau
    if spec.kind == "tree" and spec.pin_tau_beta is None:
        gibbs_update_horseshoe(state.hs_beta, state.beta - state.mu_beta,
                               rng.derive("hs-beta"))
        state.tau_beta = state.hs_beta.tau
    _check_finite("horseshoe", np.concatenate([state.tau_gamma, state.tau_beta]),
                  state.iteration)


def gibbs_sweep(state: SynthesisState, spec: SynthesisSpec, data: SynthesisData,
                rng: RngHandle, candidates_gamma=None, candidates_beta=None) -> SynthesisState:
    """One full scan in the documented order.  Mutates and returns ``state``."""
    _step_intercept(state, spec, data, rng)
    _step_gamma(state, spec, data, rng)
    if spec.kind == "tree":
        _step_beta_tree(state, spec, data, rng)
    elif spec.kind == "rw":
        _step_beta_rw(state, spec, data, rng)
    _step_volatility(state, spec, data, rng)
    _step_agent_draws(state, spec, data, rng)
    if spec.kind == "tree":
        _step_trees(state, spec, data, rng, candidates_gamma, candidates_beta)
    _step_horseshoe(state, spec, data, rng)
    state.iteration += 1
    return state


@dataclass
class ChainTelemetry:
    """Lightweight progress callback wiring; ``emit`` may be None."""

    emit: object = None
    every: int = 500

    def maybe(self, payload: dict) -> None:
        if self.emit is not None:
            self.emit(payload)


@dataclass
class DrawArchive:
    """Retained posterior draws from one or more chains, all arrays draw-major."""

    spec: SynthesisSpec
    agents: tuple[str, ...]
    targets: np.ndarray         # (T,)
    y: np.ndarray               # (T,)
    horizon: int
    gamma: np.ndarray           # (D, J)
    beta: np.ndarray            # (D, T, J)
    c: np.ndarray               # (D, T)
    sigma2_c: np.ndarray        # (D,)
    log_vol: np.ndarray         # (D, T)
    sv_params: np.ndarray       # (D, 3) mu, rho, sigma2_innov
    x: np.ndarray               # (D, T, J)
    tau_gamma: np.ndarray       # (D, J)
    tau_beta: np.ndarray        # (D, J)
    mu_gamma: np.ndarray        # (D, J)
    mu_beta: np.ndarray         # (D, T, J)
    rw_var: np.ndarray | None   # (D, J) for the rw kind
    beta_pred_mu: np.ndarray | None   # (D, J) tree surface at the prediction rows
    trees_gamma: list | None    # per-draw ensemble jsonables (tree kind)
    trees_beta: list | None
    split_counts_gamma: np.ndarray | None  # (D, K_gamma)
    split_counts_beta: np.ndarray | None   # (D, K_beta)
    chain_ids: np.ndarray       # (D,)
    mh_accept_rate: float
    tree_accept_rate: float
    panel: ModifierPanel | None = None
    diagnostics: tuple[str, ...] = ()

    @property
    def n_draws(self) -> int:
        return self.gamma.shape[0]

    @property
    def n_agents(self) -> int:
        return self.gamma.shape[1]

    def weight_draws(self) -> np.ndarray:
        """(D, T, J) posterior draws of the full combination weights."""
        return self.gamma[:, None, :] + self.beta


def run_chain(spec: SynthesisSpec, data: SynthesisData, rng: RngHandle,
              chain_id: int = 0, telemetry: ChainTelemetry | None = None,
              initial: SynthesisState | None = None) -> DrawArchive:
    """Run one chain and return its retained draws."""
    mc = spec.mcmc
    t, j = data.n_obs, data.n_agents
    state = initial if initial is not None else initial_state(spec, data)
    cand_g = cand_b = None
    if spec.kind == "tree":
        cand_g = split_candidates(data.panel.z_gamma)
        cand_b = split_candidates(data.panel.z_beta)

    d = mc.n_retained
    out = {
        "gamma": np.empty((d, j)), "beta": np.empty((d, t, j)), "c": np.empty((d, t)),
        "sigma2_c": np.empty(d), "log_vol": np.empty((d, t)), "sv_params": np.empty((d, 3)),
        "x": np.empty((d, t, j)), "tau_gamma": np.empty((d, j)), "tau_beta": np.empty((d, j)),
        "mu_gamma": np.empty((d, j)), "mu_beta": np.empty((d, t, j)),
    }
    rw_out = np.empty((d, j)) if spec.kind == "rw" else None
    tree_kind = spec.kind == "tree"
    pred_rows = data.panel.z_beta_pred if (tree_kind and data.panel is not None) else None
    bp_out = np.empty((d, j)) if (tree_kind and pred_rows is not None) else None
    tg_list = [] if tree_kind else None
    tb_list = [] if tree_kind else None
    kg = data.panel.k_gamma if tree_kind else 0
    kb = data.panel.k_beta if tree_kind else 0
    sc_g = np.zeros((d, kg), dtype=np.int64) if tree_kind else None
    sc_b = np.zeros((d, kb), dtype=np.int64) if tree_kind else None

    keep = 0
    for i in range(mc.n_total):
        gibbs_sweep(state, spec, data, rng.derive(f"sweep{i}"), cand_g, cand_b)
        done = state.iteration
        if telemetry is not None and done % telemetry.every == 0:
            rate = state.mh.accepted / max(state.mh.proposed, 1)
            telemetry.maybe({"chain": chain_id, "iteration": done, "retained": keep,
                             "mh_accept_rate": round(rate, 4)})
        if done > mc.n_burn and (done - mc.n_burn) % mc.thin == 0:
            out["gamma"][keep] = state.gamma
            out["beta"][keep] = state.beta
            out["c"][keep] = state.c
            out["sigma2_c"][keep] = state.sigma2_c
            out["log_vol"][keep] = state.sv.log_vol
            out["sv_params"][keep] = (state.sv.mu, state.sv.rho, state.sv.sigma2)
            out["x"][keep] = state.x
            out["tau_gamma"][keep] = state.tau_gamma
            out["tau_beta"][keep] = state.tau_beta
            out["mu_gamma"][keep] = state.mu_gamma
            out["mu_beta"][keep] = state.mu_beta
            if rw_out is not None:
                rw_out[keep] = state.rw_var
            if tree_kind:
                tg_list.append(state.ens_gamma.to_jsonable())
                tb_list.append(state.ens_beta.to_jsonable())
                if kg:
                    sc_g[keep] = state.ens_gamma.split_counts(kg)
                if kb:
                    sc_b[keep] = state.ens_beta.split_counts(kb)
                if bp_out is not None:
                    bp_out[keep] = state.ens_beta.evaluate(pred_rows)
            keep += 1
    if keep != d:
        raise RuntimeError(f"retention bookkeeping drift: kept {keep}, expected {d}")

    mh_rate = state.mh.accepted / max(state.mh.proposed, 1)
    tree_rate = state.tree_moves_accepted / max(state.tree_moves_proposed, 1)
    diags = []
    if not spec.fix_x and not spec.exact_x_updates and not (
            MH_ACCEPT_BAND[0] <= mh_rate <= MH_ACCEPT_BAND[1]):
        diags.append(f"chain {chain_id}: MH acceptance rate {mh_rate:.3f} outside "
                     f"[{MH_ACCEPT_BAND[0]}, {MH_ACCEPT_BAND[1]}]")

    return DrawArchive(
        spec=spec, agents=data.agents, targets=data.targets.copy(), y=data.y.copy(),
        horizon=data.horizon, gamma=out["gamma"], beta=out["beta"], c=out["c"],
        sigma2_c=out["sigma2_c"], log_vol=out["log_vol"], sv_params=out["sv_params"],
        x=out["x"], tau_gamma=out["tau_gamma"], tau_beta=out["tau_beta"],
        mu_gamma=out["mu_gamma"], mu_beta=out["mu_beta"], rw_var=rw_out,
        beta_pred_mu=bp_out, trees_gamma=tg_list, trees_beta=tb_list,
        split_counts_gamma=sc_g, split_counts_beta=sc_b,
        chain_ids=np.full(d, chain_id, dtype=np.int64),
        mh_accept_rate=mh_rate, tree_accept_rate=tree_rate,
        panel=data.panel, diagnostics=tuple(diags))


def merge_archives(archives: list[DrawArchive]) -> DrawArchive:
    """Concatenate chains fit to identical spec and data."""
    if not archives:
        raise ValidationError("nothing to merge")
    head = archives[0]
    for other in archives[1:]:
        if other.spec != head.spec:
            raise ValidationError("cannot merge draws from different specs")
        if other.agents != head.agents or not np.array_equal(other.targets, head.targets):
            raise ValidationError("cannot merge draws fit to different data")

    def cat(name):
        vals = [getattr(a, name) for a in archives]
        return None if vals[0] is None else np.concatenate(vals)

    trees_g = None if head.trees_gamma is None else sum((a.trees_gamma for a in archives), [])
    trees_b = None if head.trees_beta is None else sum((a.trees_beta for a in archives), [])
    total = sum(a.n_draws for a in archives)
    mh = sum(a.mh_accept_rate * a.n_draws for a in archives) / total
    tr = sum(a.tree_accept_rate * a.n_draws for a in archives) / total
    diags = tuple(d for a in archives for d in a.diagnostics)
    return replace(head, gamma=cat("gamma"), beta=cat("beta"), c=cat("c"),
                   sigma2_c=cat("sigma2_c"), log_vol=cat("log_vol"),
                   sv_params=cat("sv_params"), x=cat("x"), tau_gamma=cat("tau_gamma"),
                   tau_beta=cat("tau_beta"), mu_gamma=cat("mu_gamma"),
                   mu_beta=cat("mu_beta"), rw_var=cat("rw_var"),
                   beta_pred_mu=cat("beta_pred_mu"), trees_gamma=trees_g,
                   trees_beta=trees_b, split_counts_gamma=cat("split_counts_gamma"),
                   split_counts_beta=cat("split_counts_beta"), chain_ids=cat("chain_ids"),
                   mh_accept_rate=mh, tree_accept_rate=tr, diagnostics=diags)


def run_synthesis(spec: SynthesisSpec, data: SynthesisData, rng: RngHandle,
                  telemetry: ChainTelemetry | None = None) -> DrawArchive:
    """Run ``spec.mcmc.n_chains`` chains from derived streams and merge them."""
    chains = []
    for cid in range(spec.mcmc.n_chains):
        chains.append(run_chain(spec, data, rng.derive(f"chain{cid}"),
                                chain_id=cid, telemetry=telemetry))
    return merge_archives(chains)


@dataclass
class PredictiveDrawSet:
    """Draws from the combined predictive density for one origin."""

    origin: int
    target: int
    draws: np.ndarray           # (D,)
    weight_draws: np.ndarray    # (D, J) gamma + projected beta per draw
    intercept_draws: np.ndarray
    sd_draws: np.ndarray
    agents: tuple[str, ...]

    @property
    def point(self) -> float:
        return float(self.draws.mean())

    def quantiles(self, probs) -> np.ndarray:
        return np.quantile(self.draws, probs)


def _beta_pred_base(archive: DrawArchive, pred_rows) -> np.ndarray:
    if pred_rows is not None:
        base = np.empty((archive.n_draws, archive.n_agents))
        for i, obj in enumerate(archive.trees_beta):
            base[i] = TreeEnsemble.from_jsonable(obj, archive.spec.tree_prior).evaluate(pred_rows)
        return base
    if archive.beta_pred_mu is None:
        raise ValidationError(
            "no prediction rows: assemble the panel with include_prediction_row=True "
            "or pass pred_rows explicitly")
    return archive.beta_pred_mu


def predict(archive: DrawArchive, forecasts: AgentForecastArchive, origin: int,
            rng: RngHandle, pred_rows: np.ndarray | None = None,
            n_hist_draws: int = 512) -> PredictiveDrawSet:
    """Simulate the combined predictive density one target step ahead.

    Per retained draw: the intercept takes one random-walk step from its last
    estimation value, the log volatility is projected one step (constant when
    homoskedastic), the weight deviation comes from the tree surface at the
    prediction-origin modifier rows plus prior noise (random-walk step for the
    rw kind, zero for const), and each agent's value is drawn unconditionally
    from its archived forecast for this origin.
    """
    if forecasts.horizon != archive.horizon:
        raise ValidationError("forecast archive horizon differs from the fit")
    if tuple(forecasts.agents) != tuple(archive.agents):
        raise ValidationError("agent list differs from the fit")
    mat = forecasts.draw_matrix(origin, n_hist_draws, rng.derive("x-mat"))
    gen = _gen(rng.derive("predict"))
    d, j = archive.n_draws, archive.n_agents

    c_pred = archive.c[:, -1] + np.sqrt(archive.sigma2_c) * gen.standard_normal(d)
    lv_last = archive.log_vol[:, -1]
    if archive.spec.sv:
        mu, rho, s2 = archive.sv_params.T
        lv = mu + rho * (lv_last - mu) + np.sqrt(s2) * gen.standard_normal(d)
    else:
        lv = lv_last
    sd = np.exp(0.5 * lv)

    if archive.spec.kind == "tree":
        base = _beta_pred_base(archive, pred_rows)
        beta_pred = base + np.sqrt(archive.tau_beta) * gen.standard_normal((d, j))
    elif archive.spec.kind == "rw":
        beta_pred = archive.beta[:, -1, :] + np.sqrt(archive.rw_var) * gen.standard_normal((d, j))
    else:
        beta_pred = np.zeros((d, j))
    w = archive.gamma + beta_pred

    idx = gen.integers(mat.shape[1], size=d)
    x = mat[:, idx].T
    y = c_pred + np.sum(w * x, axis=1) + sd * gen.standard_normal(d)
    _check_finite("predict", y, 0)
    return PredictiveDrawSet(origin=origin, target=origin + archive.horizon,
                             draws=y, weight_draws=w, intercept_draws=c_pred,
                             sd_draws=sd, agents=archive.agents)


def incompleteness_r2(archive: DrawArchive) -> tuple[np.ndarray, float]:
    """Share of target variance carried by the weighted combination.

    Per draw: Var_t(sum_j (gamma_j + beta_jt) x_jt) / Var_t(y_t), clamped to
    [0, 1].  Values well below one mean the intercept (and noise) are doing
    work the agents cannot.  Returns (per-draw values, posterior median).
    """
    m = np.sum(archive.weight_draws() * archive.x, axis=2)   # (D, T)
    num = m.var(axis=1)
    den = float(np.var(archive.y))
    if den <= 0:
        raise ValidationError("degenerate target series (zero variance)")
    r2 = np.clip(num / den, 0.0, 1.0)
    return r2, float(np.median(r2))


def shrinkage_r2(archive: DrawArchive) -> dict:
    """How much of each weight block the tree surfaces explain.

    Per draw and block: Var(prior mean surface) / Var(coefficients), clamped
    to [0, 1]; a degenerate 0/0 block (coefficients collapsed onto the
    surface) reports 1.0.  Returns per-block (draws, median).
    """
    out = {}
    for name, mu, coef in (("gamma", archive.mu_gamma, archive.gamma),
                           ("beta", archive.mu_beta.reshape(archive.n_draws, -1),
                            archive.beta.reshape(archive.n_draws, -1))):
        num = mu.var(axis=1)
        den = coef.var(axis=1)
        r2 = np.where(den > 1e-300, np.clip(num / np.maximum(den, 1e-300), 0.0, 1.0), 1.0)
        out[name] = (r2, float(np.median(r2)))
    return out
