"""On-disk formats: configs, series, agent archives, draw containers, tables.

Everything here is deterministic: identical inputs produce byte-identical
files.  Table files open with a single ``# {json}`` metadata line carrying
content digests (never timestamps), so reruns can be diffed.
"""

from __future__ import annotations

import hashlib
import io
import json
import re
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ArchiveFormatError, ConfigError, IncompatibilityError,
                     TruncationError, ValidationError)
from .modifiers import SPEC_NAMES, ModifierPanel
from .series import AgentForecastArchive, HistogramForecast, McmcConfig, TimeSeriesF
from .synthesis import DrawArchive, SynthesisSpec, merge_archives
from .trees import TreePriorConfig

FORMAT_VERSION = 1
OPEN_BIN_SD_MULTIPLE = 2.0   # open histogram edges resolve this many sds out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest_jsonable(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


_QUARTER_RE = re.compile(r"^(\d{4})Q([1-4])$")


def parse_period(token: str) -> int:
    """Integer period index from either a bare integer or a YYYYQn code."""
    token = token.strip()
    m = _QUARTER_RE.match(token)
    if m:
        year, q = int(m.group(1)), int(m.group(2))
        return year * 4 + (q - 1)
    try:
        return int(token)
    except ValueError:
        raise ValidationError(f"unparseable period {token!r}") from None


def format_quarter(period: int) -> str:
    return f"{period // 4:04d}Q{period % 4 + 1}"


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class WindowConfig:
    mode: str = "expanding"      # or "rolling"
    min_obs: int = 20            # expanding: first fit waits for this many rows
    length: int = 60             # rolling: window span in targets


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated description of one batch run."""

    seed: int
    kind: str
    horizon: int
    origins: tuple[int, int]     # inclusive prediction-origin range
    inputs: dict
    output_dir: str
    modifier_spec: str | None = None
    n_trees: int = 1
    sv: bool = False
    gamma_enabled: bool = True
    mh_kappa: float = 0.05
    exact_x_updates: bool = False
    standardize_modifiers: bool = False
    n_hist_draws: int = 512
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    tree_prior: TreePriorConfig = field(default_factory=TreePriorConfig)
    window: WindowConfig = field(default_factory=WindowConfig)

    def synthesis_spec(self) -> SynthesisSpec:
        return SynthesisSpec(kind=self.kind, n_trees=self.n_trees, sv=self.sv,
                             modifier_spec=self.modifier_spec, mcmc=self.mcmc,
                             tree_prior=self.tree_prior,
                             gamma_enabled=self.gamma_enabled,
                             mh_kappa=self.mh_kappa,
                             exact_x_updates=self.exact_x_updates)


def _expect(obj, key, types, path, default=Ellipsis):
    if key not in obj:
        if default is Ellipsis:
            raise ConfigError(f"{path}{key}: required field missing")
        return default
    val = obj[key]
    if types is not None and not isinstance(val, types):
        names = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise ConfigError(f"{path}{key}: expected {names}, got {type(val).__name__}")
    return val


def experiment_config_from_jsonable(obj: dict) -> ExperimentConfig:
    """Validate a parsed config, reporting problems by dotted field path."""
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"seed", "kind", "horizon", "origins", "inputs", "output_dir",
             "modifier_spec", "n_trees", "sv", "gamma_enabled", "mh_kappa",
             "exact_x_updates", "standardize_modifiers", "n_hist_draws",
             "mcmc", "tree_prior", "window"}
    for key in obj:
        if key not in known:
            raise ConfigError(f"{key}: unknown field")

    seed = _expect(obj, "seed", int, "")
    kind = _expect(obj, "kind", str, "")
    if kind not in ("const", "rw", "tree"):
        raise ConfigError("kind: must be one of const, rw, tree")
    horizon = _expect(obj, "horizon", int, "")
    if horizon < 1:
        raise ConfigError("horizon: must be a positive integer")

    orig = _expect(obj, "origins", dict, "")
    first = _expect(orig, "first", int, "origins.")
    last = _expect(orig, "last", int, "origins.")
    if last < first:
        raise ConfigError("origins.last: must be >= origins.first")

    inputs = _expect(obj, "inputs", dict, "")
    agents_path = _expect(inputs, "agents", str, "inputs.")
    realized_path = _expect(inputs, "realized", str, "inputs.")
    indicators_path = _expect(inputs, "indicators", (str, type(None)), "inputs.", None)

    modifier_spec = _expect(obj, "modifier_spec", (str, type(None)), "", None)
    if modifier_spec is not None and modifier_spec not in SPEC_NAMES:
        raise ConfigError(f"modifier_spec: must be one of {', '.join(SPEC_NAMES)}")
    if kind == "tree" and modifier_spec is None:
        raise ConfigError("modifier_spec: required when kind is tree")

    mc_obj = _expect(obj, "mcmc", dict, "", {})
    try:
        mcmc = McmcConfig(
            n_total=_expect(mc_obj, "n_total", int, "mcmc.", 12_500),
            n_burn=_expect(mc_obj, "n_burn", int, "mcmc.", 2_500),
            thin=_expect(mc_obj, "thin", int, "mcmc.", 2),
            n_chains=_expect(mc_obj, "n_chains", int, "mcmc.", 2))
    except ValidationError as exc:
        raise ConfigError(f"mcmc: {exc}") from None
    if mcmc.n_retained < 100:
        raise ConfigError(
            f"mcmc: budget retains {mcmc.n_retained} draws; at least 100 required")

    tp_obj = _expect(obj, "tree_prior", dict, "", {})
    try:
        tree_prior = TreePriorConfig(
            c0=float(_expect(tp_obj, "c0", (int, float), "tree_prior.", 0.95)),
            c1=float(_expect(tp_obj, "c1", (int, float), "tree_prior.", 2.0)),
            c2=float(_expect(tp_obj, "c2", (int, float), "tree_prior.", (1 / 3) ** 2)),
            p_grow=float(_expect(tp_obj, "p_grow", (int, float), "tree_prior.", 0.4)),
            p_prune=float(_expect(tp_obj, "p_prune", (int, float), "tree_prior.", 0.4)),
            p_change=float(_expect(tp_obj, "p_change", (int, float), "tree_prior.", 0.2)))
    except ValidationError as exc:
        raise ConfigError(f"tree_prior: {exc}") from None

    win_obj = _expect(obj, "window", dict, "", {})
    mode = _expect(win_obj, "mode", str, "window.", "expanding")
    if mode not in ("expanding", "rolling"):
        raise ConfigError("window.mode: must be expanding or rolling")
    window = WindowConfig(mode=mode,
                          min_obs=_expect(win_obj, "min_obs", int, "window.", 20),
                          length=_expect(win_obj, "length", int, "window.", 60))
    if window.min_obs < 2 or window.length < 2:
        raise ConfigError("window: min_obs and length must be at least 2")

    n_trees = _expect(obj, "n_trees", int, "", 1)
    if n_trees < 1:
        raise ConfigError("n_trees: must be a positive integer")
    mh_kappa = float(_expect(obj, "mh_kappa", (int, float), "", 0.05))
    if not 0.0 <= mh_kappa <= 1.0:
        raise ConfigError("mh_kappa: must lie in [0, 1]")
    n_hist = _expect(obj, "n_hist_draws", int, "", 512)
    if n_hist < 10:
        raise ConfigError("n_hist_draws: must be at least 10")

    return ExperimentConfig(
        seed=seed, kind=kind, horizon=horizon, origins=(first, last),
        inputs={"agents": agents_path, "realized": realized_path,
                "indicators": indicators_path},
        output_dir=_expect(obj, "output_dir", str, ""),
        modifier_spec=modifier_spec, n_trees=n_trees,
        sv=bool(_expect(obj, "sv", bool, "", False)),
        gamma_enabled=bool(_expect(obj, "gamma_enabled", bool, "", True)),
        mh_kappa=mh_kappa,
        exact_x_updates=bool(_expect(obj, "exact_x_updates", bool, "", False)),
        standardize_modifiers=bool(_expect(obj, "standardize_modifiers", bool, "", False)),
        n_hist_draws=n_hist, mcmc=mcmc, tree_prior=tree_prior, window=window)


def load_experiment_config(path) -> ExperimentConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return experiment_config_from_jsonable(obj)


def config_digest(cfg: ExperimentConfig) -> str:
    return digest_jsonable(_config_to_jsonable(cfg))


def _config_to_jsonable(cfg: ExperimentConfig) -> dict:
    return {
        "seed": cfg.seed, "kind": cfg.kind, "horizon": cfg.horizon,
        "origins": {"first": cfg.origins[0], "last": cfg.origins[1]},
        "inputs": cfg.inputs, "output_dir": cfg.output_dir,
        "modifier_spec": cfg.modifier_spec, "n_trees": cfg.n_trees, "sv": cfg.sv,
        "gamma_enabled": cfg.gamma_enabled, "mh_kappa": cfg.mh_kappa,
        "exact_x_updates": cfg.exact_x_updates,
        "standardize_modifiers": cfg.standardize_modifiers,
        "n_hist_draws": cfg.n_hist_draws,
        "mcmc": {"n_total": cfg.mcmc.n_total, "n_burn": cfg.mcmc.n_burn,
                 "thin": cfg.mcmc.thin, "n_chains": cfg.mcmc.n_chains},
        "tree_prior": {"c0": cfg.tree_prior.c0, "c1": cfg.tree_prior.c1,
                       "c2": cfg.tree_prior.c2, "p_grow": cfg.tree_prior.p_grow,
                       "p_prune": cfg.tree_prior.p_prune,
                       "p_change": cfg.tree_prior.p_change},
        "window": {"mode": cfg.window.mode, "min_obs": cfg.window.min_obs,
                   "length": cfg.window.length},
    }


# ---------------------------------------------------------------------------
# realized series and indicator files


def save_realized(series: TimeSeriesF, path, quarterly: bool = False) -> None:
    lines = ["period,value"]
    for p in series.periods:
        code = format_quarter(p) if quarterly else str(p)
        lines.append(f"{code},{float(series.at(p))!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_realized(path) -> TimeSeriesF:
    rows = _read_csv_rows(path, ("period", "value"))
    periods = [parse_period(r[0]) for r in rows]
    if not periods:
        raise ValidationError(f"{path}: empty series")
    if any(b - a != 1 for a, b in zip(periods, periods[1:])):
        raise ValidationError(f"{path}: periods must be consecutive")
    return TimeSeriesF(np.array([float(r[1]) for r in rows]), start=periods[0])


def save_indicators(indicators: dict[str, TimeSeriesF], path,
                    quarterly: bool = False) -> None:
    labels = sorted(indicators)
    starts = {indicators[k].start for k in labels}
    ends = {indicators[k].start + indicators[k].values.size for k in labels}
    if len(starts) != 1 or len(ends) != 1:
        raise ValidationError("indicator series must share the same period range")
    lines = ["period," + ",".join(labels)]
    for p in indicators[labels[0]].periods:
        code = format_quarter(p) if quarterly else str(p)
        lines.append(code + "," + ",".join(repr(float(indicators[k].at(p))) for k in labels))
    Path(path).write_text("\n".join(lines) + "\n")


def load_indicators(path) -> dict[str, TimeSeriesF]:
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise ValidationError(f"{path}: empty file")
    header = text[0].split(",")
    if header[0] != "period" or len(header) < 2:
        raise ValidationError(f"{path}: header must be period,<label>,...")
    labels = header[1:]
    periods, cols = [], [[] for _ in labels]
    for line in text[1:]:
        parts = line.split(",")
        if len(parts) != len(header):
            raise ValidationError(f"{path}: ragged row {line!r}")
        periods.append(parse_period(parts[0]))
        for k, tok in enumerate(parts[1:]):
            cols[k].append(float(tok))
    if any(b - a != 1 for a, b in zip(periods, periods[1:])):
        raise ValidationError(f"{path}: periods must be consecutive")
    start = periods[0]
    return {lab: TimeSeriesF(np.array(col), start=start)
            for lab, col in zip(labels, cols)}


def _read_csv_rows(path, header: tuple[str, ...]) -> list[list[str]]:
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise ValidationError(f"{path}: empty file")
    got = tuple(text[0].split(","))
    if got != header:
        raise ValidationError(f"{path}: expected header {','.join(header)}, got {text[0]!r}")
    out = []
    for line in text[1:]:
        parts = line.split(",")
        if len(parts) != len(header):
            raise ValidationError(f"{path}: ragged row {line!r}")
        out.append(parts)
    return out


# ---------------------------------------------------------------------------
# agent forecast archives (one directory per archive)


def save_agent_archive(archive: AgentForecastArchive, directory,
                       unconditional_sd: dict[str, float] | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"format_version": FORMAT_VERSION, "kind": archive.kind,
            "horizon": archive.horizon, "agents": list(archive.agents),
            "origins": [int(o) for o in archive.origins]}
    if unconditional_sd is not None:
        meta["unconditional_sd"] = {k: float(v) for k, v in unconditional_sd.items()}
    if archive.gaussians:
        meta["gaussian"] = {str(o): np.asarray(g).tolist()
                            for o, g in sorted(archive.gaussians.items())}
    (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")

    for origin in archive.origins:
        lines = []
        if archive.kind == "draws":
            lines.append("agent,draw_index,value")
            mat = archive.draws[origin]
            for j, name in enumerate(archive.agents):
                for r in range(mat.shape[1]):
                    lines.append(f"{name},{r},{float(mat[j, r])!r}")
        else:
            lines.append("agent,bin_left,bin_right,prob")
            for name, hist in zip(archive.agents, archive.histograms[origin]):
                e, p = hist.bin_edges, hist.probs
                for b in range(p.size):
                    lines.append(f"{name},{float(e[b])!r},{float(e[b + 1])!r},{float(p[b])!r}")
        (d / f"origin_{origin}.csv").write_text("\n".join(lines) + "\n")


def _resolve_open_bins(rows, sd: float, agent: str, path) -> HistogramForecast:
    """Build a histogram from (left, right, prob) string triples.

    An empty left field on the first bin or empty right field on the last is
    an open tail; it closes OPEN_BIN_SD_MULTIPLE unconditional sds beyond the
    adjacent finite edge.
    """
    lefts = [r[0] for r in rows]
    rights = [r[1] for r in rows]
    probs = np.array([float(r[2]) for r in rows])
    for i in range(len(rows)):
        if lefts[i] == "" and i != 0:
            raise ValidationError(f"{path}: {agent}: interior bin with open left edge")
        if rights[i] == "" and i != len(rows) - 1:
            raise ValidationError(f"{path}: {agent}: interior bin with open right edge")
    if lefts[0] == "":
        if sd is None:
            raise ValidationError(f"{path}: {agent}: open bin but no unconditional_sd in meta")
        lefts[0] = repr(float(rights[0]) - OPEN_BIN_SD_MULTIPLE * sd)
    if rights[-1] == "":
        if sd is None:
            raise ValidationError(f"{path}: {agent}: open bin but no unconditional_sd in meta")
        rights[-1] = repr(float(lefts[-1]) + OPEN_BIN_SD_MULTIPLE * sd)
    edges = np.array([float(v) for v in lefts] + [float(rights[-1])])
    if np.any(np.diff(edges) <= 0):
        raise ValidationError(f"{path}: {agent}: bin edges must increase")
    for i in range(len(rows) - 1):
        if float(rights[i]) != float(lefts[i + 1]):
            raise ValidationError(f"{path}: {agent}: bins must be contiguous")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise ValidationError(
            f"{path}: {agent}: probabilities sum to {probs.sum():.8f}, not 1")
    return HistogramForecast(edges, probs)


def load_agent_archive(directory) -> AgentForecastArchive:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise ArchiveFormatError(f"{d}: missing meta.json")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ArchiveFormatError(f"{d}: unsupported format_version {meta.get('format_version')}")
    kind = meta["kind"]
    agents = tuple(meta["agents"])
    sd_map = meta.get("unconditional_sd", {})
    draws, hists, gaussians = {}, {}, {}
    for origin in meta["origins"]:
        path = d / f"origin_{origin}.csv"
        if not path.exists():
            raise ArchiveFormatError(f"{d}: missing {path.name}")
        if kind == "draws":
            rows = _read_csv_rows(path, ("agent", "draw_index", "value"))
            per = {name: [] for name in agents}
            for name, _, val in rows:
                if name not in per:
                    raise ValidationError(f"{path}: unknown agent {name!r}")
                per[name].append(float(val))
            lens = {len(v) for v in per.values()}
            if len(lens) != 1:
                raise ValidationError(f"{path}: agents carry unequal draw counts")
            draws[origin] = np.array([per[name] for name in agents])
        else:
            rows = _read_csv_rows(path, ("agent", "bin_left", "bin_right", "prob"))
            per = {name: [] for name in agents}
            for name, left, right, prob in rows:
                if name not in per:
                    raise ValidationError(f"{path}: unknown agent {name!r}")
                per[name].append((left, right, prob))
            hists[origin] = tuple(
                _resolve_open_bins(per[name], sd_map.get(name), name, path)
                for name in agents)
    for key, val in meta.get("gaussian", {}).items():
        gaussians[int(key)] = np.asarray(val, dtype=np.float64)
    return AgentForecastArchive(horizon=meta["horizon"], agents=agents, kind=kind,
                                draws=draws, histograms=hists, gaussians=gaussians)


# ---------------------------------------------------------------------------
# synthesis spec serialization


def spec_to_jsonable(spec: SynthesisSpec) -> dict:
    return {
        "kind": spec.kind, "n_trees": spec.n_trees, "sv": spec.sv,
        "modifier_spec": spec.modifier_spec,
        "mcmc": {"n_total": spec.mcmc.n_total, "n_burn": spec.mcmc.n_burn,
                 "thin": spec.mcmc.thin, "n_chains": spec.mcmc.n_chains},
        "tree_prior": {"c0": spec.tree_prior.c0, "c1": spec.tree_prior.c1,
                       "c2": spec.tree_prior.c2, "p_grow": spec.tree_prior.p_grow,
                       "p_prune": spec.tree_prior.p_prune,
                       "p_change": spec.tree_prior.p_change},
        "gamma_enabled": spec.gamma_enabled, "mh_kappa": spec.mh_kappa,
        "mh_proposal_draws": spec.mh_proposal_draws,
        "exact_x_updates": spec.exact_x_updates,
        "pin_tau_gamma": spec.pin_tau_gamma, "pin_tau_beta": spec.pin_tau_beta,
        "fix_trees": spec.fix_trees, "fix_sigma2": spec.fix_sigma2,
        "fix_intercept": spec.fix_intercept, "fix_x": spec.fix_x,
        "fix_rw_var": spec.fix_rw_var,
    }


def spec_from_jsonable(obj: dict) -> SynthesisSpec:
    mc = obj["mcmc"]
    tp = obj["tree_prior"]
    return SynthesisSpec(
        kind=obj["kind"], n_trees=obj["n_trees"], sv=obj["sv"],
        modifier_spec=obj["modifier_spec"],
        mcmc=McmcConfig(n_total=mc["n_total"], n_burn=mc["n_burn"],
                        thin=mc["thin"], n_chains=mc["n_chains"]),
        tree_prior=TreePriorConfig(c0=tp["c0"], c1=tp["c1"], c2=tp["c2"],
                                   p_grow=tp["p_grow"], p_prune=tp["p_prune"],
                                   p_change=tp["p_change"]),
        gamma_enabled=obj["gamma_enabled"], mh_kappa=obj["mh_kappa"],
        mh_proposal_draws=obj.get("mh_proposal_draws", 0),
        exact_x_updates=obj.get("exact_x_updates", False),
        pin_tau_gamma=obj["pin_tau_gamma"], pin_tau_beta=obj["pin_tau_beta"],
        fix_trees=obj["fix_trees"], fix_sigma2=obj["fix_sigma2"],
        fix_intercept=obj["fix_intercept"], fix_x=obj["fix_x"],
        fix_rw_var=obj["fix_rw_var"])


def spec_digest(spec: SynthesisSpec) -> str:
    return digest_jsonable(spec_to_jsonable(spec))


# ---------------------------------------------------------------------------
# draw containers (zip holding manifest + npz + tree json)

_OPTIONAL_ARRAYS = ("rw_var", "beta_pred_mu", "split_counts_gamma", "split_counts_beta")


_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)   # pinned member timestamp, keeps zips reproducible


def _zip_member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _deterministic_npz(arrays: dict) -> bytes:
    # np.savez stamps wall-clock times into member headers; write the same
    # format by hand so identical arrays always produce identical bytes
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            payload = io.BytesIO()
            np.lib.format.write_array(payload, np.asarray(arrays[name]),
                                      allow_pickle=False)
            _zip_member(zf, name + ".npy", payload.getvalue())
    return buf.getvalue()


def save_draw_archive(archive: DrawArchive, path) -> None:
    arrays = {
        "gamma": archive.gamma, "beta": archive.beta, "c": archive.c,
        "sigma2_c": archive.sigma2_c, "log_vol": archive.log_vol,
        "sv_params": archive.sv_params, "x": archive.x,
        "tau_gamma": archive.tau_gamma, "tau_beta": archive.tau_beta,
        "mu_gamma": archive.mu_gamma, "mu_beta": archive.mu_beta,
        "chain_ids": archive.chain_ids, "targets": archive.targets, "y": archive.y,
    }
    for name in _OPTIONAL_ARRAYS:
        val = getattr(archive, name)
        if val is not None:
            arrays[name] = val
    panel_meta = None
    if archive.panel is not None:
        p = archive.panel
        panel_meta = {"n_agents": p.n_agents, "gamma_labels": list(p.gamma_labels),
                      "beta_labels": list(p.beta_labels),
                      "gamma_tags": list(p.gamma_tags), "beta_tags": list(p.beta_tags),
                      "standardized": p.standardized,
                      "affine": {k: list(v) for k, v in p.affine.items()},
                      "has_pred": p.z_beta_pred is not None}
        arrays["panel_z_gamma"] = p.z_gamma
        arrays["panel_z_beta"] = p.z_beta
        arrays["panel_targets"] = p.targets
        if p.z_beta_pred is not None:
            arrays["panel_z_beta_pred"] = p.z_beta_pred

    manifest = {
        "format_version": FORMAT_VERSION,
        "spec": spec_to_jsonable(archive.spec),
        "spec_sha256": spec_digest(archive.spec),
        "agents": list(archive.agents), "horizon": archive.horizon,
        "n_draws": archive.n_draws, "array_names": sorted(arrays),
        "mh_accept_rate": archive.mh_accept_rate,
        "tree_accept_rate": archive.tree_accept_rate,
        "diagnostics": list(archive.diagnostics),
        "has_trees": archive.trees_gamma is not None,
        "panel": panel_meta,
    }

    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        _zip_member(zf, "manifest.json", canonical_json(manifest).encode())
        _zip_member(zf, "arrays.npz", _deterministic_npz(arrays))
        if archive.trees_gamma is not None:
            _zip_member(zf, "trees_gamma.json", canonical_json(archive.trees_gamma).encode())
            _zip_member(zf, "trees_beta.json", canonical_json(archive.trees_beta).encode())


def _open_container(path) -> zipfile.ZipFile:
    try:
        zf = zipfile.ZipFile(path, "r")
    except zipfile.BadZipFile:
        raise TruncationError(f"{path}: truncated or corrupt draw container") from None
    bad = zf.testzip()
    if bad is not None:
        raise TruncationError(f"{path}: member {bad} fails its checksum (truncated write?)")
    if "manifest.json" not in zf.namelist() or "arrays.npz" not in zf.namelist():
        raise ArchiveFormatError(f"{path}: not a draw container (missing members)")
    return zf


def read_container_manifest(path) -> dict:
    with _open_container(path) as zf:
        return json.loads(zf.read("manifest.json"))


def load_draw_archive(path) -> DrawArchive:
    with _open_container(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ArchiveFormatError(
                f"{path}: unsupported format_version {manifest.get('format_version')}")
        with np.load(io.BytesIO(zf.read("arrays.npz"))) as npz:
            arrays = {k: npz[k] for k in npz.files}
        missing = set(manifest["array_names"]) - set(arrays)
        if missing:
            raise TruncationError(f"{path}: arrays missing from npz: {sorted(missing)}")
        trees_g = trees_b = None
        if manifest["has_trees"]:
            trees_g = json.loads(zf.read("trees_gamma.json"))
            trees_b = json.loads(zf.read("trees_beta.json"))

    spec = spec_from_jsonable(manifest["spec"])
    panel = None
    pm = manifest.get("panel")
    if pm is not None:
        panel = ModifierPanel(
            n_agents=pm["n_agents"], targets=arrays["panel_targets"],
            z_gamma=arrays["panel_z_gamma"], z_beta=arrays["panel_z_beta"],
            gamma_labels=tuple(pm["gamma_labels"]), beta_labels=tuple(pm["beta_labels"]),
            gamma_tags=tuple(pm["gamma_tags"]), beta_tags=tuple(pm["beta_tags"]),
            z_beta_pred=arrays.get("panel_z_beta_pred"),
            standardized=pm["standardized"],
            affine={k: tuple(v) for k, v in pm["affine"].items()})
    return DrawArchive(
        spec=spec, agents=tuple(manifest["agents"]), targets=arrays["targets"],
        y=arrays["y"], horizon=manifest["horizon"], gamma=arrays["gamma"],
        beta=arrays["beta"], c=arrays["c"], sigma2_c=arrays["sigma2_c"],
        log_vol=arrays["log_vol"], sv_params=arrays["sv_params"], x=arrays["x"],
        tau_gamma=arrays["tau_gamma"], tau_beta=arrays["tau_beta"],
        mu_gamma=arrays["mu_gamma"], mu_beta=arrays["mu_beta"],
        rw_var=arrays.get("rw_var"), beta_pred_mu=arrays.get("beta_pred_mu"),
        trees_gamma=trees_g, trees_beta=trees_b,
        split_counts_gamma=arrays.get("split_counts_gamma"),
        split_counts_beta=arrays.get("split_counts_beta"),
        chain_ids=arrays["chain_ids"],
        mh_accept_rate=manifest["mh_accept_rate"],
        tree_accept_rate=manifest["tree_accept_rate"],
        panel=panel, diagnostics=tuple(manifest["diagnostics"]))


def merge_draw_files(paths) -> DrawArchive:
    """Load several containers and concatenate their draws.

    Containers must come from the same spec; the manifests' spec digests are
    compared before any arrays are read.
    """
    if not paths:
        raise ValidationError("nothing to merge")
    digests = {p: read_container_manifest(p)["spec_sha256"] for p in paths}
    first = digests[paths[0]]
    for p, dig in digests.items():
        if dig != first:
            raise IncompatibilityError(
                f"{p}: spec digest {dig[:12]} differs from {paths[0]}: {first[:12]}")
    return merge_archives([load_draw_archive(p) for p in paths])


# ---------------------------------------------------------------------------
# metadata-headed tables


def write_table(path, columns: dict, meta: dict) -> None:
    """CSV with a leading ``# {json}`` metadata line.

    Column values are written with repr so floats round-trip exactly.  The
    metadata is caller-supplied (config and input digests); nothing
    time-dependent is added here, so identical runs write identical bytes.
    """
    names = list(columns)
    if not names:
        raise ValidationError("table needs at least one column")
    cols = [list(columns[n]) for n in names]
    lengths = {len(c) for c in cols}
    if len(lengths) != 1:
        raise ValidationError("table columns must share one length")
    lines = ["# " + canonical_json(meta), ",".join(names)]
    for row in zip(*cols):
        lines.append(",".join(_format_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    s = str(v)
    if "," in s or "\n" in s:
        raise ValidationError(f"cell value {s!r} would corrupt the CSV")
    return s


def read_table(path) -> tuple[dict, dict]:
    """Inverse of write_table: (meta, {name: list of strings})."""
    text = Path(path).read_text().strip().splitlines()
    if len(text) < 2 or not text[0].startswith("# "):
        raise ArchiveFormatError(f"{path}: missing metadata line")
    meta = json.loads(text[0][2:])
    names = text[1].split(",")
    cols = {n: [] for n in names}
    for line in text[2:]:
        parts = line.split(",")
        if len(parts) != len(names):
            raise ArchiveFormatError(f"{path}: ragged row {line!r}")
        for n, v in zip(names, parts):
            cols[n].append(v)
    return meta, cols
