"""Sampler-level tests for the combination engine.

The strategy throughout: pin every block except one with the spec's fix_*/pin_*
fields, so the remaining conditional is the exact posterior of a model with a
closed form (or an independently coded smoother), then compare retained draws
against that oracle.
"""

import math

import numpy as np
import pytest

from treesynth.errors import DataShapeError, NumericalAbort, ValidationError
from treesynth.modifiers import ModifierPanel
from treesynth.rng import RngHandle
from treesynth.series import (AgentForecastArchive, HistogramForecast, McmcConfig,
                              TimeSeriesF)
from treesynth.synthesis import (ChainTelemetry, SynthesisSpec, incompleteness_r2,
                                 merge_archives, predict, prepare_synthesis_data,
                                 run_chain, run_synthesis, shrinkage_r2)


def _degenerate_inputs(X, y_vals, horizon=1, gaussians=None, extra_origins=None):
    """Targets 1..T whose agent draws are point masses at X[t-1, j].

    With fix_x the sampler then conditions on exactly these values, which makes
    the gamma block an ordinary Bayesian regression.  ``extra_origins`` maps
    origin -> (J,) points for forecasts beyond the estimation window.
    """
    t_n, j = X.shape
    targets = np.arange(1, t_n + 1)
    draws = {int(tt) - horizon: np.repeat(X[i][:, None], 8, axis=1)
             for i, tt in enumerate(targets)}
    if extra_origins:
        for o, pts in extra_origins.items():
            draws[o] = np.repeat(np.asarray(pts, dtype=float)[:, None], 8, axis=1)
    gd = {}
    if gaussians is not None:
        gd = {int(tt) - horizon: gaussians[i] for i, tt in enumerate(targets)}
    archive = AgentForecastArchive(horizon=horizon,
                                   agents=tuple(f"a{k}" for k in range(j)),
                                   kind="draws", draws=draws, gaussians=gd)
    return TimeSeriesF(np.asarray(y_vals, dtype=float), start=1), archive, targets


def _small_panel(t_n, j, g, pred=True):
    z_pred = g.normal(size=(j, 2)) if pred else None
    return ModifierPanel(j, np.arange(1, t_n + 1), g.normal(size=(j, 1)),
                         g.normal(size=(t_n * j, 2)), z_beta_pred=z_pred)


def _rts_path(y, X, obs_var, q_diag, init_var):
    """Fixed-interval smoother for y_t = x_t' b_t + noise, b random walk,
    b_1 ~ N(0, init_var I).  Independent of the sampler's FFBS code."""
    n, j = X.shape
    q = np.diag(q_diag)
    m = np.empty((n, j))
    p = np.empty((n, j, j))
    m_pred = np.empty((n, j))
    p_pred = np.empty((n, j, j))
    mean = np.zeros(j)
    cov = init_var * np.eye(j)
    for t in range(n):
        if t > 0:
            cov = cov + q
        m_pred[t], p_pred[t] = mean, cov
        x = X[t]
        s = float(x @ cov @ x) + obs_var[t]
        k = cov @ x / s
        mean = mean + k * (y[t] - float(x @ mean))
        cov = cov - np.outer(k, x @ cov)
        m[t], p[t] = mean, 0.5 * (cov + cov.T)
    ms = m.copy()
    ps = p.copy()
    for t in range(n - 2, -1, -1):
        c = np.linalg.solve(p_pred[t + 1].T, p[t].T).T
        ms[t] = m[t] + c @ (ms[t + 1] - m_pred[t + 1])
        ps[t] = p[t] + c @ (ps[t + 1] - p_pred[t + 1]) @ c.T
    return ms, ps


# ---------------------------------------------------------------------------
# conjugate oracle for the const kind


def test_const_gamma_matches_conjugate_posterior():
    # with x, intercept, sigma2 and tau all pinned, the gamma conditional is
    # the whole posterior: N((X'X/v + I/tau)^-1 X'y/v, (X'X/v + I/tau)^-1),
    # and retained draws are iid from it
    g = np.random.default_rng(120)
    t_n, j = 100, 3
    X = g.normal(size=(t_n, j))
    w_true = np.array([0.8, -0.3, 0.4])
    v, tau = 0.5, 4.0
    y_vals = X @ w_true + g.normal(0.0, math.sqrt(v), size=t_n)

    spec = SynthesisSpec(kind="const",
                         mcmc=McmcConfig(n_total=6300, n_burn=300, thin=1, n_chains=1),
                         fix_intercept=0.0, fix_sigma2=v, fix_x=True,
                         pin_tau_gamma=tau)
    y, archive, targets = _degenerate_inputs(X, y_vals)
    data = prepare_synthesis_data(y, archive, targets, None, spec)
    arch = run_chain(spec, data, RngHandle(121))

    prec = X.T @ X / v + np.eye(j) / tau
    cov = np.linalg.inv(prec)
    mean = cov @ (X.T @ y_vals / v)

    n = arch.n_draws
    assert n == 6000
    se = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(arch.gamma.mean(axis=0) - mean) < 4.0 * se)
    assert arch.gamma.std(axis=0) == pytest.approx(np.sqrt(np.diag(cov)), rel=0.05)
    emp = np.cov(arch.gamma.T)
    assert np.max(np.abs(emp - cov)) < 8.0 * np.max(np.diag(cov)) / math.sqrt(n)

    # every pinned block must have stayed pinned
    assert np.all(arch.c == 0.0)
    assert np.all(arch.beta == 0.0)
    assert np.all(arch.log_vol == math.log(v))
    assert np.all(arch.tau_gamma == tau)
    assert np.all(arch.x == X)


def test_const_shrinkage_and_incompleteness_summaries():
    g = np.random.default_rng(122)
    t_n, j = 100, 3
    X = g.normal(size=(t_n, j))
    w_true = np.array([0.8, -0.3, 0.4])
    y_vals = X @ w_true + g.normal(0.0, math.sqrt(0.5), size=t_n)

    spec = SynthesisSpec(kind="const",
                         mcmc=McmcConfig(n_total=600, n_burn=100, thin=1, n_chains=1),
                         fix_intercept=0.0, fix_sigma2=0.5, fix_x=True,
                         pin_tau_gamma=4.0)
    y, archive, targets = _degenerate_inputs(X, y_vals)
    data = prepare_synthesis_data(y, archive, targets, None, spec)
    arch = run_chain(spec, data, RngHandle(123))

    # const kind: flat zero prior surfaces, so the gamma block explains
    # nothing and the (all-zero) beta block is degenerate-complete
    sr = shrinkage_r2(arch)
    assert set(sr) == {"gamma", "beta"}
    r2g, medg = sr["gamma"]
    assert np.all(r2g == 0.0) and medg == 0.0
    r2b, medb = sr["beta"]
    assert np.all(r2b == 1.0) and medb == 1.0

    # weighted combination carries var(X @ gamma) / var(y) of the target
    # variance; the closed-form posterior mean gives the reference point
    r2, med = incompleteness_r2(arch)
    assert r2.shape == (arch.n_draws,)
    assert np.all((r2 >= 0.0) & (r2 <= 1.0))
    prec = X.T @ X / 0.5 + np.eye(j) / 4.0
    post_mean = np.linalg.solve(prec, X.T @ y_vals / 0.5)
    want = np.var(X @ post_mean) / np.var(y_vals)
    assert med == pytest.approx(want, abs=0.05)

    assert np.array_equal(arch.weight_draws(), arch.gamma[:, None, :] + arch.beta)


def test_gamma_disabled_pins_gamma_at_zero():
    g = np.random.default_rng(124)
    X = g.normal(size=(30, 2))
    y_vals = X @ np.array([0.5, 0.5])
    spec = SynthesisSpec(kind="const",
                         mcmc=McmcConfig(n_total=60, n_burn=10, thin=1, n_chains=1),
                         gamma_enabled=False, fix_intercept=0.0, fix_sigma2=1.0,
                         fix_x=True)
    y, archive, targets = _degenerate_inputs(X, y_vals)
    data = prepare_synthesis_data(y, archive, targets, None, spec)
    arch = run_chain(spec, data, RngHandle(125))
    assert np.all(arch.gamma == 0.0)


# ---------------------------------------------------------------------------
# beta block


def test_tree_kind_tiny_tau_collapses_beta_onto_surface():
    # prior variance pinned at 1e-14 with fixed root trees: beta must sit on
    # the (near-zero) surface to machine-level tolerance
    g = np.random.default_rng(126)
    t_n, j = 40, 2
    X = g.normal(size=(t_n, j))
    y_vals = X @ np.array([1.0, -0.5]) + g.normal(0.0, 0.3, size=t_n)
    panel = _small_panel(t_n, j, g)

    spec = SynthesisSpec(kind="tree", n_trees=1,
                         mcmc=McmcConfig(n_total=200, n_burn=50, thin=1, n_chains=1),
                         fix_intercept=0.0, fix_sigma2=0.25, fix_x=True,
                         pin_tau_gamma=4.0, pin_tau_beta=1e-14, fix_trees=True)
    y, archive, targets = _degenerate_inputs(X, y_vals)
    data = prepare_synthesis_data(y, archive, targets, panel, spec)
    arch = run_chain(spec, data, RngHandle(127))

    assert np.max(np.abs(arch.beta)) < 1e-6
    assert np.max(np.abs(arch.mu_beta)) < 1e-6
    assert arch.beta_pred_mu is not None
    assert np.max(np.abs(arch.beta_pred_mu)) < 1e-6
    # structure frozen at the root: no split ever recorded
    assert np.all(arch.split_counts_gamma == 0)
    assert np.all(arch.split_counts_beta == 0)
    assert len(arch.trees_beta) == arch.n_draws


def test_rw_kind_with_tiny_innovation_is_flat():
    g = np.random.default_rng(128)
    t_n, j = 60, 2
    X = g.normal(size=(t_n, j))
    w_true = np.array([0.7, -0.4])
    y_vals = X @ w_true + g.normal(0.0, 0.5, size=t_n)

    spec = SynthesisSpec(kind="rw",
                         mcmc=McmcConfig(n_total=400, n_burn=100, thin=1, n_chains=1),
                         fix_intercept=0.0, fix_sigma2=0.25, fix_x=True,
                         pin_tau_gamma=4.0, fix_rw_var=1e-12)
    y, archive, targets = _degenerate_inputs(X, y_vals)
    data = prepare_synthesis_data(y, archive, targets, None, spec)
    arch = run_chain(spec, data, RngHandle(129))

    assert arch.rw_var is not None and np.all(arch.rw_var == 1e-12)
    # paths cannot move: the rw kind degenerates to the const kind
    drift = np.max(np.abs(arch.beta - arch.beta[:, :1, :]))
    assert drift < 1e-3
    # gamma and the flat beta level share w_true; only their sum is identified
    total = arch.gamma.mean(axis=0) + arch.beta.mean(axis=(0, 1))
    assert total == pytest.approx(w_true, abs=0.15)


def test_rw_single_agent_matches_smoother_oracle():
    # everything pinned except the beta path, so each retained draw is an
    # independent draw from the exact smoothing posterior
    g = np.random.default_rng(130)
    t_n = 30
    V, s2 = 0.04, 0.3
    truth = 0.8 + np.cumsum(g.normal(0.0, math.sqrt(V), size=t_n))
    X = g.normal(1.0, 1.0, size=(t_n, 1))
    y_vals = truth * X[:, 0] + g.normal(0.0, math.sqrt(s2), size=t_n)

    spec = SynthesisSpec(kind="rw", gamma_enabled=False,
                         mcmc=McmcConfig(n_total=3200, n_burn=200, thin=1, n_chains=1),
                         fix_intercept=0.0, fix_sigma2=s2, fix_x=True,
                         fix_rw_var=V)
    y, archive, targets = _degenerate_inputs(X, y_vals)
    data = prepare_synthesis_data(y, archive, targets, None, spec)
    arch = run_chain(spec, data, RngHandle(131))

    ms, ps = _rts_path(y_vals, X, np.full(t_n, s2), np.array([V]), 10.0)
    n = arch.n_draws
    se = np.sqrt(ps[:, 0, 0] / n)
    assert np.all(np.abs(arch.beta[:, :, 0].mean(axis=0) - ms[:, 0]) < 4.5 * se)
    assert arch.beta[:, :, 0].var(axis=0) == pytest.approx(ps[:, 0, 0], rel=0.15)


# ---------------------------------------------------------------------------
# agent draws


def test_single_truthful_agent_gets_unit_weight():
    g = np.random.default_rng(132)
    t_n = 120
    y_vals = g.normal(0.0, 2.0, size=t_n)
    X = y_vals[:, None] + g.normal(0.0, 1e-3, size=(t_n, 1))
    gaussians = [np.array([[y_vals[i], 0.05]]) for i in range(t_n)]

    spec = SynthesisSpec(kind="const", exact_x_updates=True,
                         mcmc=McmcConfig(n_total=1500, n_burn=500, thin=1, n_chains=1))
    y, archive, targets = _degenerate_inputs(X, y_vals, gaussians=gaussians)
    data = prepare_synthesis_data(y, archive, targets, None, spec)
    arch = run_chain(spec, data, RngHandle(133))

    assert 0.9 < arch.gamma.mean() < 1.1
    _, med = incompleteness_r2(arch)
    assert med > 0.9
    assert arch.diagnostics == ()


def test_mh_agent_draws_recover_forecast_moments():
    # a huge pinned observation variance removes the likelihood term, so the
    # Metropolis chain should reproduce each archived forecast density
    g = np.random.default_rng(134)
    t_n, j = 30, 2
    m = g.normal(0.0, 2.0, size=(t_n, j))
    s = g.uniform(0.5, 1.5, size=(t_n, j))
    draws = {}
    gaussians = []
    for i in range(t_n):
        draws[i] = m[i][:, None] + s[i][:, None] * g.normal(size=(j, 200))
        gaussians.append(np.stack([m[i], s[i]], axis=1))
    archive = AgentForecastArchive(horizon=1, agents=("a0", "a1"), kind="draws",
                                   draws=draws,
                                   gaussians={i: gaussians[i] for i in range(t_n)})
    y = TimeSeriesF(np.zeros(t_n), start=1)

    spec = SynthesisSpec(kind="const", gamma_enabled=False,
                         mcmc=McmcConfig(n_total=4000, n_burn=1000, thin=2, n_chains=1),
                         fix_intercept=0.0, fix_sigma2=1e8)
    data = prepare_synthesis_data(y, archive, np.arange(1, t_n + 1), None, spec)
    assert data.densities.kind == "gaussian"
    arch = run_chain(spec, data, RngHandle(135))

    xm = arch.x.mean(axis=0)
    xs = arch.x.std(axis=0)
    assert np.max(np.abs(xm - m) / s) < 0.25
    assert np.mean(np.abs(xm - m) / s) < 0.07
    ratio = xs / s
    assert np.all((ratio > 0.75) & (ratio < 1.25))
    assert abs(float(ratio.mean()) - 1.0) < 0.08
    # adapted kernel should land in the healthy band, so no diagnostic
    assert 0.05 <= arch.mh_accept_rate <= 0.60
    assert arch.diagnostics == ()


def test_mh_kappa_one_runs_with_small_steps_only():
    g = np.random.default_rng(136)
    t_n, j = 12, 2
    m = g.normal(size=(t_n, j))
    draws = {i: m[i][:, None] + 0.8 * g.normal(size=(j, 50)) for i in range(t_n)}
    archive = AgentForecastArchive(horizon=1, agents=("a0", "a1"), kind="draws",
                                   draws=draws)
    y = TimeSeriesF(np.zeros(t_n), start=1)
    spec = SynthesisSpec(kind="const", gamma_enabled=False, mh_kappa=1.0,
                         mcmc=McmcConfig(n_total=80, n_burn=20, thin=1, n_chains=1),
                         fix_intercept=0.0, fix_sigma2=1e6)
    data = prepare_synthesis_data(y, archive, np.arange(1, t_n + 1), None, spec)
    arch = run_chain(spec, data, RngHandle(137))
    assert np.all(np.isfinite(arch.x))
    assert 0.0 <= arch.mh_accept_rate <= 1.0


def test_stuck_chain_raises_acceptance_diagnostic():
    # near-point-mass forecasts with the fixed-scale kernel reject everything,
    # which must surface as an out-of-band acceptance diagnostic
    g = np.random.default_rng(138)
    t_n = 10
    m = g.normal(size=(t_n, 1))
    draws = {i: m[i][:, None] + 1e-4 * g.normal(size=(1, 50)) for i in range(t_n)}
    archive = AgentForecastArchive(horizon=1, agents=("a0",), kind="draws",
                                   draws=draws)
    y = TimeSeriesF(np.zeros(t_n), start=1)
    spec = SynthesisSpec(kind="const", gamma_enabled=False, mh_kappa=1.0,
                         mcmc=McmcConfig(n_total=60, n_burn=20, thin=1, n_chains=1),
                         fix_intercept=0.0, fix_sigma2=1e8)
    data = prepare_synthesis_data(y, archive, np.arange(1, t_n + 1), None, spec)
    arch = run_chain(spec, data, RngHandle(139))
    assert arch.mh_accept_rate < 0.05
    assert len(arch.diagnostics) == 1
    assert "acceptance" in arch.diagnostics[0]


def test_agent_order_equivariance():
    g = np.random.default_rng(140)
    t_n = 80
    m = np.stack([g.normal(1.0, 1.0, size=t_n), g.normal(-1.0, 1.0, size=t_n)], axis=1)
    s = np.full((t_n, 2), 0.6)
    y_vals = 0.9 * m[:, 0] + 0.3 * m[:, 1] + g.normal(0.0, 0.4, size=t_n)

    def fit(order):
        draws = {i: np.repeat(m[i][order][:, None], 8, axis=1) for i in range(t_n)}
        gaussians = {i: np.stack([m[i][order], s[i][order]], axis=1) for i in range(t_n)}
        archive = AgentForecastArchive(horizon=1,
                                       agents=tuple(f"a{k}" for k in order),
                                       kind="draws", draws=draws, gaussians=gaussians)
        spec = SynthesisSpec(kind="const", exact_x_updates=True,
                             mcmc=McmcConfig(n_total=2500, n_burn=500, thin=1,
                                             n_chains=1))
        data = prepare_synthesis_data(TimeSeriesF(y_vals, start=1), archive,
                                      np.arange(1, t_n + 1), None, spec)
        return run_chain(spec, data, RngHandle(141))

    fwd = fit([0, 1]).gamma.mean(axis=0)
    rev = fit([1, 0]).gamma.mean(axis=0)
    assert fwd == pytest.approx(rev[::-1], abs=0.08)


# ---------------------------------------------------------------------------
# bookkeeping, merging, aborts


def test_run_synthesis_budget_chain_ids_and_telemetry():
    g = np.random.default_rng(142)
    X = g.normal(size=(10, 1))
    y_vals = X[:, 0] * 0.5
    spec = SynthesisSpec(kind="const",
                         mcmc=McmcConfig(n_total=240, n_burn=40, thin=2, n_chains=2),
                         fix_intercept=0.0, fix_sigma2=1.0, fix_x=True,
                         pin_tau_gamma=4.0)
    y, archive, targets = _degenerate_inputs(X, y_vals)
    data = prepare_synthesis_data(y, archive, targets, None, spec)

    seen = []
    arch = run_synthesis(spec, data, RngHandle(143),
                         telemetry=ChainTelemetry(emit=seen.append, every=100))
    assert spec.mcmc.n_retained == 100
    assert arch.n_draws == 200
    assert np.all(arch.chain_ids[:100] == 0)
    assert np.all(arch.chain_ids[100:] == 1)
    # 240 sweeps per chain at every=100 reports twice per chain
    assert len(seen) == 4
    assert {"chain", "iteration", "retained", "mh_accept_rate"} <= set(seen[0])


def test_merge_rejects_mismatched_chains():
    g = np.random.default_rng(144)
    X = g.normal(size=(10, 1))
    y_vals = X[:, 0] * 0.5
    mc = McmcConfig(n_total=30, n_burn=10, thin=1, n_chains=1)

    def fit(tau, start_shift=0):
        targets = np.arange(1 + start_shift, 11 + start_shift)
        draws = {int(t) - 1: np.repeat(X[i][:, None], 8, axis=1)
                 for i, t in enumerate(targets)}
        archive = AgentForecastArchive(horizon=1, agents=("a0",), kind="draws",
                                       draws=draws)
        spec = SynthesisSpec(kind="const", mcmc=mc, fix_intercept=0.0,
                             fix_sigma2=1.0, fix_x=True, pin_tau_gamma=tau)
        y = TimeSeriesF(y_vals, start=1 + start_shift)
        data = prepare_synthesis_data(y, archive, targets, None, spec)
        return run_chain(spec, data, RngHandle(145))

    a = fit(4.0)
    with pytest.raises(ValidationError):
        merge_archives([a, fit(2.0)])
    with pytest.raises(ValidationError):
        merge_archives([a, fit(4.0, start_shift=1)])
    with pytest.raises(ValidationError):
        merge_archives([])
    merged = merge_archives([a, fit(4.0)])
    assert merged.n_draws == 2 * a.n_draws


def test_non_finite_input_aborts_with_context():
    g = np.random.default_rng(146)
    X = g.normal(size=(12, 1))
    y_vals = X[:, 0].copy()
    spec = SynthesisSpec(kind="const",
                         mcmc=McmcConfig(n_total=30, n_burn=10, thin=1, n_chains=1))
    y, archive, targets = _degenerate_inputs(X, y_vals)
    data = prepare_synthesis_data(y, archive, targets, None, spec)
    data.y[5] = np.nan

    with pytest.raises(NumericalAbort) as ei:
        run_chain(spec, data, RngHandle(147))
    err = ei.value
    assert err.step == "intercept"
    assert err.iteration == 0
    assert isinstance(err.index, int)
    assert "intercept" in str(err)


# ---------------------------------------------------------------------------
# prediction


def test_predict_const_is_deterministic_and_uses_weights():
    g = np.random.default_rng(148)
    t_n, j = 40, 2
    X = g.normal(size=(t_n, j))
    w_true = np.array([0.9, -0.4])
    v = 0.25
    y_vals = X @ w_true + g.normal(0.0, math.sqrt(v), size=t_n)
    point = np.array([2.0, -1.0])

    spec = SynthesisSpec(kind="const",
                         mcmc=McmcConfig(n_total=2100, n_burn=100, thin=1, n_chains=1),
                         fix_intercept=0.0, fix_sigma2=v, fix_x=True,
                         pin_tau_gamma=4.0)
    y, archive, targets = _degenerate_inputs(X, y_vals, extra_origins={t_n: point})
    data = prepare_synthesis_data(y, archive, targets, None, spec)
    arch = run_chain(spec, data, RngHandle(149))

    pred = predict(arch, archive, t_n, RngHandle(150))
    again = predict(arch, archive, t_n, RngHandle(150))
    assert np.array_equal(pred.draws, again.draws)

    assert pred.origin == t_n and pred.target == t_n + 1
    assert pred.draws.shape == (arch.n_draws,)
    assert pred.weight_draws.shape == (arch.n_draws, j)
    # const kind adds no deviation at the prediction step
    assert np.array_equal(pred.weight_draws, arch.gamma)
    assert pred.sd_draws == pytest.approx(math.sqrt(v), abs=1e-12)
    assert pred.point == pytest.approx(float(pred.draws.mean()))

    q = pred.quantiles([0.1, 0.5, 0.9])
    assert q[0] < q[1] < q[2]
    # agents are point masses here, so the predictive mean is gamma-bar @ point
    want = float(arch.gamma.mean(axis=0) @ point)
    assert pred.draws.mean() == pytest.approx(want, abs=0.05)

    wrong_h = AgentForecastArchive(horizon=2, agents=archive.agents, kind="draws",
                                   draws={t_n: archive.draws[t_n]})
    with pytest.raises(ValidationError):
        predict(arch, wrong_h, t_n, RngHandle(151))
    renamed = AgentForecastArchive(horizon=1, agents=("zz", "a1"), kind="draws",
                                   draws={t_n: archive.draws[t_n]})
    with pytest.raises(ValidationError):
        predict(arch, renamed, t_n, RngHandle(151))


def test_predict_tree_uses_stored_surface_or_recomputes():
    g = np.random.default_rng(152)
    t_n, j = 20, 2
    X = g.normal(size=(t_n, j))
    y_vals = X @ np.array([0.8, -0.2]) + g.normal(0.0, 0.3, size=t_n)
    panel = _small_panel(t_n, j, g)

    spec = SynthesisSpec(kind="tree", n_trees=1,
                         mcmc=McmcConfig(n_total=120, n_burn=40, thin=2, n_chains=1),
                         fix_intercept=0.0, fix_sigma2=0.25, fix_x=True,
                         pin_tau_gamma=4.0, pin_tau_beta=0.01)
    y, archive, targets = _degenerate_inputs(X, y_vals,
                                             extra_origins={t_n: np.array([1.0, 1.0])})
    data = prepare_synthesis_data(y, archive, targets, panel, spec)
    arch = run_chain(spec, data, RngHandle(153))

    assert len(arch.trees_gamma) == arch.n_draws
    assert arch.split_counts_gamma.shape == (arch.n_draws, panel.k_gamma)
    assert arch.split_counts_beta.shape == (arch.n_draws, panel.k_beta)

    # stored surface and a recomputation from the stored trees must agree
    p1 = predict(arch, archive, t_n, RngHandle(154))
    p2 = predict(arch, archive, t_n, RngHandle(154), pred_rows=panel.z_beta_pred)
    assert np.array_equal(p1.draws, p2.draws)

    bare = _small_panel(t_n, j, np.random.default_rng(155), pred=False)
    data2 = prepare_synthesis_data(y, archive, targets, bare, spec)
    arch2 = run_chain(spec, data2, RngHandle(156))
    with pytest.raises(ValidationError, match="prediction rows"):
        predict(arch2, archive, t_n, RngHandle(157))


# ---------------------------------------------------------------------------
# data preparation


def test_prepare_validation_paths():
    g = np.random.default_rng(158)
    X = g.normal(size=(10, 2))
    y_vals = X @ np.array([0.5, 0.5])
    y, archive, targets = _degenerate_inputs(X, y_vals)
    spec = SynthesisSpec(kind="const")

    with pytest.raises(ValidationError, match="ascending"):
        prepare_synthesis_data(y, archive, [3, 2, 5], None, spec)
    # target 12 is realized but was never forecast (no origin-11 entry)
    longer = TimeSeriesF(np.concatenate([y_vals, [0.0, 0.0]]), start=1)
    with pytest.raises(DataShapeError, match="no archived forecast"):
        prepare_synthesis_data(longer, archive, [1, 2, 3, 12], None, spec)
    with pytest.raises(KeyError):
        prepare_synthesis_data(TimeSeriesF(y_vals[:5], start=1), archive,
                               targets, None, spec)

    panel = _small_panel(10, 2, g)
    with pytest.raises(ValidationError, match="const kind"):
        prepare_synthesis_data(y, archive, targets, panel, spec)

    tree_spec = SynthesisSpec(kind="tree")
    with pytest.raises(ValidationError, match="modifier panel"):
        prepare_synthesis_data(y, archive, targets, None, tree_spec)
    short = _small_panel(9, 2, g)
    with pytest.raises(ValidationError, match="panel targets"):
        prepare_synthesis_data(y, archive, targets, short, tree_spec)
    wide = _small_panel(10, 3, g)
    with pytest.raises(ValidationError, match="agent count"):
        prepare_synthesis_data(y, archive, targets, wide, tree_spec)

    exact = SynthesisSpec(kind="const", exact_x_updates=True)
    with pytest.raises(ValidationError, match="gaussian"):
        prepare_synthesis_data(y, archive, targets, None, exact)


def test_prepare_materializes_histograms_deterministically():
    edges = np.linspace(-2.0, 2.0, 9)
    probs = np.full(8, 0.125)
    hists = {o: (HistogramForecast(edges, probs),
                 HistogramForecast(edges + 1.0, probs)) for o in range(5)}
    archive = AgentForecastArchive(horizon=1, agents=("a0", "a1"),
                                   kind="histograms", histograms=hists)
    y = TimeSeriesF(np.zeros(5), start=1)
    spec = SynthesisSpec(kind="const", fix_x=True)

    d1 = prepare_synthesis_data(y, archive, np.arange(1, 6), None, spec,
                                rng=RngHandle(159), n_hist_draws=64)
    d2 = prepare_synthesis_data(y, archive, np.arange(1, 6), None, spec,
                                rng=RngHandle(159), n_hist_draws=64)
    assert d1.x_draws.shape == (5, 2, 64)
    assert np.array_equal(d1.x_draws, d2.x_draws)
    assert d1.densities.kind == "histogram"
    # agent 1's grid sits one unit right of agent 0's
    assert d1.x_draws[:, 1, :].mean() - d1.x_draws[:, 0, :].mean() == pytest.approx(
        1.0, abs=0.25)

    spec_validation = SynthesisSpec(kind="rw", mh_kappa=0.5)
    assert spec_validation.kind == "rw"
    with pytest.raises(ValidationError):
        SynthesisSpec(kind="nope")
    with pytest.raises(ValidationError):
        SynthesisSpec(mh_kappa=1.5)
    with pytest.raises(ValidationError):
        SynthesisSpec(kind="tree", n_trees=0)
