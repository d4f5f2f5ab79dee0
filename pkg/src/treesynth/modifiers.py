"""Weight-modifier panels: the covariates the weight trees split on.

A panel carries z_gamma (one row per agent, driving time-invariant weights)
and z_beta (one row per (target period, agent) pair, target-major, driving
time-varying weights).  Every builder takes an explicit information cutoff
and touches nothing dated after it: scores enter lagged by the forecast
horizon, exogenous indicators are lagged by the horizon, and density features
describe forecasts that are on record at the cutoff.  Columns are left on
their native scale unless standardization is requested explicitly; the
applied affine maps are then recorded on the panel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataShapeError, ValidationError
from .scoring import sample_crps
from .series import AgentForecastArchive, HistogramForecast, TimeSeriesF

SPEC_NAMES = ("avg_scores", "exo_ind", "features", "all", "toy")


@dataclass
class ModifierPanel:
    """Covariate panel for the weight surfaces of one synthesis fit."""

    n_agents: int
    targets: np.ndarray                  # (T,) estimation target periods
    z_gamma: np.ndarray                  # (J, Kg)
    z_beta: np.ndarray                   # (T*J, Kb), row index t*J + j
    gamma_labels: tuple[str, ...] = ()
    beta_labels: tuple[str, ...] = ()
    gamma_tags: tuple[str, ...] = ()     # per column: score|feature|exogenous|trend
    beta_tags: tuple[str, ...] = ()
    z_beta_pred: np.ndarray | None = None  # (J, Kb) rows for the prediction target
    standardized: bool = False
    affine: dict = field(default_factory=dict)

    def __post_init__(self):
        t = self.targets.size
        j = self.n_agents
        self.z_gamma = np.atleast_2d(np.asarray(self.z_gamma, dtype=np.float64))
        self.z_beta = np.atleast_2d(np.asarray(self.z_beta, dtype=np.float64))
        if self.z_gamma.shape[0] != j:
            raise DataShapeError("z_gamma must have one row per agent")
        if self.z_beta.shape[0] != t * j:
            raise DataShapeError("z_beta must have T*J rows (target-major)")
        if len(self.gamma_labels) != self.z_gamma.shape[1]:
            self.gamma_labels = tuple(f"g{k}" for k in range(self.z_gamma.shape[1]))
        if len(self.beta_labels) != self.z_beta.shape[1]:
            self.beta_labels = tuple(f"b{k}" for k in range(self.z_beta.shape[1]))
        if self.z_beta_pred is not None:
            self.z_beta_pred = np.atleast_2d(np.asarray(self.z_beta_pred, dtype=np.float64))
            if self.z_beta_pred.shape != (j, self.z_beta.shape[1]):
                raise DataShapeError("prediction rows must be (J, Kb)")

    @property
    def k_gamma(self) -> int:
        return self.z_gamma.shape[1]

    @property
    def k_beta(self) -> int:
        return self.z_beta.shape[1]

    def standardize(self) -> "ModifierPanel":
        """Affine-rescale every column to zero mean, unit sd (estimation rows).

        The maps are recorded under ``affine`` and applied to the prediction
        rows as well; constant columns are left untouched.
        """
        if self.standardized:
            return self
        affine = {}

        def scale(mat, labels, kind):
            out = mat.copy()
            for k in range(mat.shape[1]):
                mu = float(mat[:, k].mean())
                sd = float(mat[:, k].std())
                if sd <= 0:
                    affine[f"{kind}:{labels[k]}"] = (0.0, 1.0)
                    continue
                out[:, k] = (mat[:, k] - mu) / sd
                affine[f"{kind}:{labels[k]}"] = (mu, sd)
            return out

        zg = scale(self.z_gamma, self.gamma_labels, "gamma") if self.k_gamma else self.z_gamma
        zb = scale(self.z_beta, self.beta_labels, "beta") if self.k_beta else self.z_beta
        pred = None
        if self.z_beta_pred is not None:
            pred = self.z_beta_pred.copy()
            for k in range(self.k_beta):
                mu, sd = affine[f"beta:{self.beta_labels[k]}"]
                pred[:, k] = (self.z_beta_pred[:, k] - mu) / sd
        return ModifierPanel(self.n_agents, self.targets, zg, zb,
                             self.gamma_labels, self.beta_labels,
                             self.gamma_tags, self.beta_tags, pred,
                             standardized=True, affine=affine)


def crps_histogram(hist: HistogramForecast, y: float) -> float:
    """Exact CRPS of a piecewise-uniform histogram forecast.

    Integrates (F(x) - 1{x >= y})^2 with F piecewise linear; deterministic,
    so score columns built from histograms stay bit-identical across runs.
    """
    edges, probs = hist.bin_edges, hist.probs
    cum = np.concatenate([[0.0], np.cumsum(probs)])
    total = max(edges[0] - y, 0.0) + max(y - edges[-1], 0.0)

    def seg(lo, hi, f_lo, slope, c):
        # integral over (lo, hi) of (f_lo + slope (x - lo) - c)^2
        width = hi - lo
        if width <= 0:
            return 0.0
        a = f_lo - c
        if slope == 0.0:
            return a * a * width
        b = a + slope * width
        return (b ** 3 - a ** 3) / (3.0 * slope)

    for i in range(probs.size):
        lo, hi = edges[i], edges[i + 1]
        slope = probs[i] / (hi - lo)
        if y <= lo:
            total += seg(lo, hi, cum[i], slope, 1.0)
        elif y >= hi:
            total += seg(lo, hi, cum[i], slope, 0.0)
        else:
            total += seg(lo, y, cum[i], slope, 0.0)
            total += seg(y, hi, cum[i] + slope * (y - lo), slope, 1.0)
    return float(total)


def _agent_point_and_crps(archive: AgentForecastArchive, origin: int, target_y: float) -> np.ndarray:
    """(J, 2) squared forecast errors and CRPS values for one scored origin."""
    out = np.empty((archive.n_agents, 2))
    if archive.kind == "draws":
        mat = archive.draws[origin]
        for j in range(archive.n_agents):
            point = float(mat[j].mean())
            out[j, 0] = (target_y - point) ** 2
            out[j, 1] = sample_crps(mat[j], target_y)
    else:
        for j, hist in enumerate(archive.histograms[origin]):
            out[j, 0] = (target_y - hist.mean()) ** 2
            out[j, 1] = crps_histogram(hist, target_y)
    return out


def realized_scores(archive: AgentForecastArchive, y: TimeSeriesF, cutoff: int) -> dict[int, np.ndarray]:
    """Scores of every archived forecast whose target is realized by ``cutoff``.

    Keys are target periods; values are (J, 2) [squared error, CRPS] blocks.
    Only origins on record at the cutoff enter, so the map is a prefix of any
    later-cutoff map.
    """
    h = archive.horizon
    out = {}
    first, last = y.start, y.start + len(y) - 1
    for origin in archive.origins:
        target = origin + h
        if origin > cutoff or target > cutoff or target < first or target > last:
            continue
        out[target] = _agent_point_and_crps(archive, origin, y.at(target))
    return out


def build_avg_scores(archive: AgentForecastArchive, y: TimeSeriesF, cutoff: int) -> np.ndarray:
    """(J, 2) running averages of squared error and CRPS through the cutoff.

    With no scored forecast on record yet the cold-start value is zero.
    """
    scores = realized_scores(archive, y, cutoff)
    if not scores:
        return np.zeros((archive.n_agents, 2))
    return np.mean(np.stack(list(scores.values())), axis=0)


def build_score_columns(archive: AgentForecastArchive, y: TimeSeriesF,
                        targets: np.ndarray, cutoff: int) -> np.ndarray:
    """(T, J, 2) horizon-lagged squared error and CRPS per panel row.

    Row for target tau carries the scores of target tau - h, the most recent
    forecast scored by the row's information date.  Rows before the first
    scored target are backfilled with the first available value, or zero when
    nothing is scored at all.
    """
    h = archive.horizon
    scores = realized_scores(archive, y, cutoff)
    out = np.zeros((targets.size, archive.n_agents, 2))
    first_seen = None
    for i, tau in enumerate(targets):
        lagged = int(tau) - h
        if lagged in scores:
            out[i] = scores[lagged]
            if first_seen is None:
                first_seen = i
        else:
            out[i] = np.nan  # placeholder; backfilled or forward-filled below
    if first_seen is None:
        out[:] = 0.0
    elif first_seen > 0:
        out[:first_seen] = out[first_seen]
    # fill any interior gaps with the previous row
    for i in range(1, targets.size):
        if np.isnan(out[i]).any():
            out[i] = out[i - 1]
    return out


def density_features(archive: AgentForecastArchive, origin: int) -> np.ndarray:
    """(J, 5) mean, variance, skewness, excess kurtosis, cross-section dispersion.

    The dispersion column is the standard deviation across the J agents' mean
    forecasts at this origin, replicated to every agent row.
    """
    jn = archive.n_agents
    out = np.empty((jn, 5))
    if archive.kind == "draws":
        mat = archive.draws[origin]
        if mat.shape[1] < 4:
            raise ValidationError("density features need at least 4 draws per agent")
        for j in range(jn):
            d = mat[j]
            m, sd = float(d.mean()), float(d.std())
            var = sd * sd
            if var <= 0:
                out[j, :4] = [m, 0.0, 0.0, 0.0]
            else:
                zc = d - m
                out[j, :4] = [m, var, float(np.mean(zc ** 3)) / var ** 1.5,
                              float(np.mean(zc ** 4)) / var ** 2 - 3.0]
    else:
        for j, hist in enumerate(archive.histograms[origin]):
            out[j, :4] = hist.moments()
    out[:, 4] = float(np.std(out[:, 0]))
    return out


def build_features(archive: AgentForecastArchive, targets: np.ndarray) -> np.ndarray:
    """(T, J, 5) density features of the forecasts targeting each panel row."""
    h = archive.horizon
    out = np.empty((targets.size, archive.n_agents, 5))
    for i, tau in enumerate(targets):
        origin = int(tau) - h
        if origin not in (archive.draws if archive.kind == "draws" else archive.histograms):
            raise DataShapeError(f"no archived forecast for target {tau} (origin {origin})")
        out[i] = density_features(archive, origin)
    return out


def build_exogenous(indicators: dict[str, TimeSeriesF], targets: np.ndarray,
                    horizon: int) -> tuple[np.ndarray, tuple[str, ...]]:
    """(T, K) indicator values lagged by the horizon, one column per series."""
    labels = tuple(sorted(indicators))
    out = np.empty((targets.size, len(labels)))
    for k, label in enumerate(labels):
        series = indicators[label]
        for i, tau in enumerate(targets):
            out[i, k] = series.at(int(tau) - horizon)
    return out, labels


def assemble_panel(spec_name: str, archive: AgentForecastArchive, y: TimeSeriesF,
                   targets, cutoff: int, indicators: dict[str, TimeSeriesF] | None = None,
                   include_prediction_row: bool = False,
                   standardize: bool = False) -> ModifierPanel:
    """Build the panel named by ``spec_name`` under the cutoff's information set.

    ``targets`` are the estimation target periods (ascending); each needs an
    archived forecast at target - horizon.  With ``include_prediction_row``
    the rows for target cutoff + horizon are built alongside, using only
    information dated at or before the cutoff.

    Specs: "avg_scores" drives gamma only (averaged squared error and CRPS);
    "exo_ind" drives beta with lagged indicators plus a trend; "features"
    drives gamma with averaged scores and beta with density moments,
    cross-section dispersion, and lagged scores; "all" is the union of the
    last two; "toy" is trend plus lagged scores.
    """
    if spec_name not in SPEC_NAMES:
        raise ValidationError(f"unknown modifier spec '{spec_name}'")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0 or np.any(np.diff(targets) <= 0):
        raise ValidationError("targets must be nonempty and strictly ascending")
    h = archive.horizon
    if int(targets[-1]) > cutoff + h:
        raise ValidationError("estimation targets run past the cutoff's reach")
    jn = archive.n_agents
    indicators = indicators or {}

    ext = np.append(targets, cutoff + h) if include_prediction_row else targets
    Text = ext.size

    beta_cols: list[np.ndarray] = []     # each (Text, J)
    beta_labels: list[str] = []
    beta_tags: list[str] = []

    def add_target_level(col: np.ndarray, label: str, tag: str):
        beta_cols.append(np.repeat(col[:, None], jn, axis=1))
        beta_labels.append(label)
        beta_tags.append(tag)

    def add_agent_level(block: np.ndarray, label: str, tag: str):
        beta_cols.append(block)
        beta_labels.append(label)
        beta_tags.append(tag)

    need_scores = spec_name in ("features", "all", "toy")
    need_features = spec_name in ("features", "all")
    need_exo = spec_name in ("exo_ind", "all")

    scores = build_score_columns(archive, y, ext, cutoff) if need_scores else None
    feats = build_features(archive, ext) if need_features else None

    if need_exo:
        exo, exo_labels = build_exogenous(indicators, ext, h)
        for k, label in enumerate(exo_labels):
            add_target_level(exo[:, k], label, "exogenous")
        add_target_level(ext.astype(np.float64), "trend", "trend")
    if spec_name == "toy":
        add_target_level(ext.astype(np.float64), "trend", "trend")
    if need_features:
        for k, label in enumerate(("mean", "variance", "skewness", "kurtosis")):
            add_agent_level(feats[:, :, k], label, "feature")
        add_agent_level(feats[:, :, 4], "dispersion", "feature")
    if need_scores:
        add_agent_level(scores[:, :, 0], "sq_error_lag", "score")
        add_agent_level(scores[:, :, 1], "crps_lag", "score")

    # drop duplicate labels (union specs share nothing today, but keep the rule)
    seen = {}
    for i, label in enumerate(beta_labels):
        if label not in seen:
            seen[label] = i
    order = sorted(seen.values())
    beta_cols = [beta_cols[i] for i in order]
    beta_labels = [beta_labels[i] for i in order]
    beta_tags = [beta_tags[i] for i in order]

    kb = len(beta_cols)
    stacked = np.empty((Text * jn, kb))
    for k, col in enumerate(beta_cols):
        stacked[:, k] = col.reshape(-1)

    if spec_name in ("avg_scores", "features", "all"):
        z_gamma = build_avg_scores(archive, y, cutoff)
        gamma_labels = ("avg_sq_error", "avg_crps")
        gamma_tags = ("score", "score")
    else:
        z_gamma = np.zeros((jn, 0))
        gamma_labels = ()
        gamma_tags = ()

    t_est = targets.size
    z_beta = stacked[: t_est * jn]
    pred = stacked[t_est * jn:].copy() if include_prediction_row else None
    if include_prediction_row and pred.shape[0] != jn:
        raise DataShapeError("prediction rows must cover every agent")

    panel = ModifierPanel(jn, targets, z_gamma, z_beta,
                          gamma_labels, tuple(beta_labels),
                          gamma_tags, tuple(beta_tags), pred)
    return panel.standardize() if standardize else panel
