"""Batch front end.

Subcommands: simulate-toy, fit-agents, build-modifiers, run, predict,
evaluate, render-tree.  Exit codes: 0 success, 2 configuration problems,
3 data problems, 4 numerical aborts inside a sampler.

``run`` works one prediction origin at a time and is resumable: origins whose
outputs already exist are skipped, failed origins are recorded in
failure_manifest.json and do not stop the batch, and --workers spreads
origins over processes (per-origin seeds derive from the experiment seed, so
scheduling cannot change results).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import storage
from .agents import ToyDgpConfig, build_adl_archive, simulate_toy, standard_adl_panel
from .errors import (ConfigError, NumericalAbort, TreeSynthError, ValidationError)
from .modifiers import SPEC_NAMES, assemble_panel
from .rng import RngHandle
from .scoring import (build_score_series, dm_test, fluctuation_test, modifier_inclusion,
                      pits, probability_difference_map, quantile_skewness)
from .series import TimeSeriesF
from .svg import render_tree_svg
from .synthesis import (ChainTelemetry, incompleteness_r2, predict,
                        prepare_synthesis_data, run_synthesis, shrinkage_r2)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treesynth",
                                description="density-forecast combination runs")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate-toy", help="write the two-regime toy dataset")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--periods", type=int, default=350)
    sp.add_argument("--break-t", type=int, default=200)
    sp.add_argument("--n-draws", type=int, default=1000)
    sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("fit-agents", help="fit the forecasting agents and archive their draws")
    sp.add_argument("--realized", required=True)
    sp.add_argument("--indicators", required=True)
    sp.add_argument("--horizon", type=int, default=1)
    sp.add_argument("--window", type=int, default=80)
    sp.add_argument("--first-origin", type=int, required=True)
    sp.add_argument("--last-origin", type=int, required=True)
    sp.add_argument("--n-draws", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out", required=True, help="agent archive directory")

    sp = sub.add_parser("build-modifiers", help="assemble one modifier panel and write it out")
    sp.add_argument("--spec", required=True, choices=SPEC_NAMES)
    sp.add_argument("--agents", required=True, help="agent archive directory")
    sp.add_argument("--realized", required=True)
    sp.add_argument("--indicators")
    sp.add_argument("--cutoff", type=int, required=True)
    sp.add_argument("--standardize", action="store_true")
    sp.add_argument("--out", required=True, help="output path (.npz)")

    sp = sub.add_parser("run", help="fit every prediction origin of an experiment")
    sp.add_argument("--config", required=True, help="experiment config JSON")
    sp.add_argument("--seed", type=int, help="fallback seed when the config omits one")
    sp.add_argument("--output-dir", help="fallback output dir when the config omits one")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--force", action="store_true", help="recompute finished origins")
    sp.add_argument("--telemetry", help="JSON-lines progress file (single worker only)")

    sp = sub.add_parser("predict", help="predictive draws from a stored fit")
    sp.add_argument("--draws", required=True, help="draw container")
    sp.add_argument("--agents", required=True, help="agent archive directory")
    sp.add_argument("--origin", type=int, required=True)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("evaluate", help="score a finished run (optionally against a baseline)")
    sp.add_argument("--run-dir", required=True)
    sp.add_argument("--baseline-dir")
    sp.add_argument("--seed", type=int, default=1, help="seed for randomized PITs")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("render-tree", help="draw one weight tree as SVG")
    sp.add_argument("--draws", required=True, help="draw container")
    sp.add_argument("--surface", choices=("beta", "gamma"), default="beta")
    sp.add_argument("--draw-index", type=int, default=0)
    sp.add_argument("--tree-index", type=int, default=0)
    sp.add_argument("--out", required=True)
    return p


# ---------------------------------------------------------------------------
# simulate-toy


def _cmd_simulate_toy(args) -> int:
    rng = RngHandle(args.seed)
    cfg = ToyDgpConfig(n_periods=args.periods, break_t=args.break_t)
    y, archive = simulate_toy(cfg, rng, n_draws=args.n_draws)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    storage.save_realized(y, out / "realized.csv")
    storage.save_agent_archive(archive, out / "agents")
    print(f"wrote {out}/realized.csv and {out}/agents "
          f"({len(archive.origins)} origins, agents {', '.join(archive.agents)})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit-agents


def _cmd_fit_agents(args) -> int:
    realized = storage.load_realized(args.realized)
    indicators = storage.load_indicators(args.indicators)
    specs = standard_adl_panel(tuple(sorted(indicators)), horizon=args.horizon,
                               window=args.window, n_draws=args.n_draws)
    origins = range(args.first_origin, args.last_origin + 1)
    rng = RngHandle(args.seed)
    archive = build_adl_archive(specs, realized, indicators, origins, rng)
    storage.save_agent_archive(archive, args.out)
    print(f"wrote {args.out}: {len(archive.agents)} agents x {len(archive.origins)} origins")
    return EXIT_OK


# ---------------------------------------------------------------------------
# build-modifiers


def _cmd_build_modifiers(args) -> int:
    archive = storage.load_agent_archive(args.agents)
    y = storage.load_realized(args.realized)
    indicators = storage.load_indicators(args.indicators) if args.indicators else None
    h = archive.horizon
    targets = [o + h for o in archive.origins if o + h <= args.cutoff]
    if not targets:
        raise ValidationError("no realized targets at this cutoff")
    panel = assemble_panel(args.spec, archive, y, targets, args.cutoff,
                           indicators=indicators, include_prediction_row=True,
                           standardize=args.standardize)
    arrays = {"targets": panel.targets, "z_gamma": panel.z_gamma, "z_beta": panel.z_beta}
    if panel.z_beta_pred is not None:
        arrays["z_beta_pred"] = panel.z_beta_pred
    np.savez(args.out, **arrays)
    side = Path(args.out).with_suffix(".json")
    side.write_text(json.dumps({
        "spec": args.spec, "cutoff": args.cutoff, "n_agents": panel.n_agents,
        "gamma_labels": list(panel.gamma_labels), "beta_labels": list(panel.beta_labels),
        "gamma_tags": list(panel.gamma_tags), "beta_tags": list(panel.beta_tags),
        "standardized": panel.standardized,
        "affine": {k: list(v) for k, v in panel.affine.items()}}, indent=1) + "\n")
    print(f"wrote {args.out} (+{side.name}): K_gamma={panel.k_gamma} K_beta={panel.k_beta}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run


def _estimation_targets(archive_origins, horizon: int, cutoff: int, window) -> list[int]:
    targets = sorted(o + horizon for o in archive_origins if o + horizon <= cutoff)
    if window.mode == "rolling" and len(targets) > window.length:
        targets = targets[-window.length:]
    return targets


def _origin_dir(output_dir: str, origin: int) -> Path:
    return Path(output_dir) / f"origin_{origin}"


def _origin_done(output_dir: str, origin: int) -> bool:
    d = _origin_dir(output_dir, origin)
    return (d / "draws.zip").exists() and (d / "forecast.csv").exists()


def run_one_origin(cfg: storage.ExperimentConfig, origin: int,
                   telemetry_path: str | None = None) -> dict:
    """Fit, predict, and persist one origin.  Returns a small status dict."""
    archive = storage.load_agent_archive(cfg.inputs["agents"])
    y = storage.load_realized(cfg.inputs["realized"])
    indicators = (storage.load_indicators(cfg.inputs["indicators"])
                  if cfg.inputs.get("indicators") else None)
    if origin not in archive.origins:
        raise ValidationError(f"origin {origin}: no archived agent forecasts")
    targets = _estimation_targets(archive.origins, cfg.horizon, origin, cfg.window)
    if len(targets) < cfg.window.min_obs:
        raise ValidationError(
            f"origin {origin}: only {len(targets)} estimation targets, "
            f"need {cfg.window.min_obs}")

    spec = cfg.synthesis_spec()
    panel = None
    if cfg.kind == "tree":
        panel = assemble_panel(cfg.modifier_spec, archive, y, targets, origin,
                               indicators=indicators, include_prediction_row=True,
                               standardize=cfg.standardize_modifiers)
    rng = RngHandle(cfg.seed).derive(f"origin{origin}")
    data = prepare_synthesis_data(y, archive, targets, panel, spec, rng,
                                  n_hist_draws=cfg.n_hist_draws)
    telem = None
    if telemetry_path:
        fh = open(telemetry_path, "a")
        telem = ChainTelemetry(emit=lambda d: fh.write(json.dumps(
            {"origin": origin, **d}) + "\n"))
    try:
        draws = run_synthesis(spec, data, rng.derive("fit"), telemetry=telem)
    finally:
        if telemetry_path:
            fh.close()
    pred = predict(draws, archive, origin, rng.derive("predict"),
                   n_hist_draws=cfg.n_hist_draws)

    d = _origin_dir(cfg.output_dir, origin)
    d.mkdir(parents=True, exist_ok=True)
    storage.save_draw_archive(draws, d / "draws.zip")
    cols = {"draw": np.arange(pred.draws.size), "value": pred.draws,
            "intercept": pred.intercept_draws, "sd": pred.sd_draws}
    for j, name in enumerate(pred.agents):
        cols[f"weight_{name}"] = pred.weight_draws[:, j]
    storage.write_table(d / "forecast.csv", cols, {
        "origin": origin, "target": pred.target,
        "config_sha256": storage.config_digest(cfg)})
    return {"origin": origin, "target": pred.target,
            "mh_accept_rate": draws.mh_accept_rate,
            "diagnostics": list(draws.diagnostics)}


def _worker_entry(cfg_json: str, origin: int):
    cfg = storage.experiment_config_from_jsonable(json.loads(cfg_json))
    return run_one_origin(cfg, origin)


def _cmd_run(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: {exc}") from None
    # the config file wins over command-line fallbacks
    if "seed" not in raw and args.seed is not None:
        raw["seed"] = args.seed
    if "output_dir" not in raw and args.output_dir is not None:
        raw["output_dir"] = args.output_dir
    cfg = storage.experiment_config_from_jsonable(raw)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    archive = storage.load_agent_archive(cfg.inputs["agents"])
    digests = {"agents": storage.file_digest(Path(cfg.inputs["agents"]) / "meta.json"),
               "realized": storage.file_digest(cfg.inputs["realized"])}
    if cfg.inputs.get("indicators"):
        digests["indicators"] = storage.file_digest(cfg.inputs["indicators"])
    (out / "run_meta.json").write_text(json.dumps({
        "config": storage._config_to_jsonable(cfg),
        "config_sha256": storage.config_digest(cfg),
        "input_sha256": digests}, indent=1, sort_keys=True) + "\n")

    first, last = cfg.origins
    wanted = [o for o in range(first, last + 1) if o in archive.origins]
    skipped_missing = [o for o in range(first, last + 1) if o not in archive.origins]
    todo = [o for o in wanted if args.force or not _origin_done(cfg.output_dir, o)]
    print(f"{len(wanted)} origins in range, {len(wanted) - len(todo)} already done, "
          f"{len(todo)} to run" + (f", {len(skipped_missing)} absent from the archive"
                                   if skipped_missing else ""))

    failures: dict[str, dict] = {}
    aborted = False
    if args.workers > 1:
        cfg_json = json.dumps(storage._config_to_jsonable(cfg))
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futs = {o: pool.submit(_worker_entry, cfg_json, o) for o in todo}
            for o in todo:
                try:
                    status = futs[o].result()
                    print(f"origin {o} done (target {status['target']})")
                except NumericalAbort as exc:
                    aborted = True
                    failures[str(o)] = {"error": "NumericalAbort", "message": str(exc)}
                    print(f"origin {o} FAILED: {exc}", file=sys.stderr)
                except TreeSynthError as exc:
                    failures[str(o)] = {"error": type(exc).__name__, "message": str(exc)}
                    print(f"origin {o} FAILED: {exc}", file=sys.stderr)
    else:
        for o in todo:
            try:
                status = run_one_origin(cfg, o, telemetry_path=args.telemetry)
                print(f"origin {o} done (target {status['target']})")
            except NumericalAbort as exc:
                aborted = True
                failures[str(o)] = {"error": "NumericalAbort", "message": str(exc)}
                print(f"origin {o} FAILED: {exc}", file=sys.stderr)
            except TreeSynthError as exc:
                failures[str(o)] = {"error": type(exc).__name__, "message": str(exc)}
                print(f"origin {o} FAILED: {exc}", file=sys.stderr)

    manifest = out / "failure_manifest.json"
    if failures:
        manifest.write_text(json.dumps(failures, indent=1, sort_keys=True) + "\n")
    elif manifest.exists() and not todo:
        pass  # keep the record of a previous partial run the user has not redone
    elif manifest.exists():
        manifest.unlink()
    if aborted:
        return EXIT_NUMERIC
    return EXIT_DATA if failures else EXIT_OK


# ---------------------------------------------------------------------------
# predict


def _cmd_predict(args) -> int:
    draws = storage.load_draw_archive(args.draws)
    archive = storage.load_agent_archive(args.agents)
    rng = RngHandle(args.seed)
    pred = predict(draws, archive, args.origin, rng)
    cols = {"draw": np.arange(pred.draws.size), "value": pred.draws,
            "intercept": pred.intercept_draws, "sd": pred.sd_draws}
    for j, name in enumerate(pred.agents):
        cols[f"weight_{name}"] = pred.weight_draws[:, j]
    storage.write_table(args.out, cols, {"origin": pred.origin, "target": pred.target,
                                         "spec_sha256": storage.spec_digest(draws.spec)})
    print(f"wrote {args.out}: {pred.draws.size} draws for target {pred.target}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _load_run_forecasts(run_dir: str) -> tuple[dict, list[dict]]:
    """run_meta plus a record per finished origin, ordered by origin."""
    meta_path = Path(run_dir) / "run_meta.json"
    if not meta_path.exists():
        raise ValidationError(f"{run_dir}: not a run directory (no run_meta.json)")
    meta = json.loads(meta_path.read_text())
    records = []
    for d in sorted(Path(run_dir).glob("origin_*")):
        fc = d / "forecast.csv"
        if not fc.exists():
            continue
        fmeta, cols = storage.read_table(fc)
        rec = {"origin": int(fmeta["origin"]), "target": int(fmeta["target"]),
               "draws": np.array([float(v) for v in cols["value"]]),
               "dir": d}
        rec["weights"] = {name[len("weight_"):]: np.array([float(v) for v in col])
                          for name, col in cols.items() if name.startswith("weight_")}
        records.append(rec)
    records.sort(key=lambda r: r["origin"])
    if not records:
        raise ValidationError(f"{run_dir}: no finished origins to evaluate")
    return meta, records


def _cmd_evaluate(args) -> int:
    meta, records = _load_run_forecasts(args.run_dir)
    y = storage.load_realized(meta["config"]["inputs"]["realized"])
    horizon = int(meta["config"]["horizon"])
    records = [r for r in records if r["target"] in set(y.periods)]
    if not records:
        raise ValidationError("no evaluated targets are realized yet")
    origins = [r["origin"] for r in records]
    targets = [r["target"] for r in records]
    draw_sets = [r["draws"] for r in records]
    realized = np.array([y.at(t) for t in targets])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table_meta = {"run": str(args.run_dir), "config_sha256": meta["config_sha256"]}

    scores = build_score_series(origins, targets, draw_sets, realized)
    storage.write_table(out / "scores.csv", {
        "origin": scores.origins, "target": scores.targets, "realized": scores.realized,
        "point": scores.point, "sq_error": scores.sq_error, "crps": scores.crps,
        "qw_tails": scores.qw_tails, "qw_left": scores.qw_left,
        "qw_right": scores.qw_right}, table_meta)

    pit = pits(draw_sets, realized, RngHandle(args.seed).derive("pits"))
    storage.write_table(out / "pit.csv", {"origin": origins, "pit": pit.pit},
                        {**table_meta, "ks_stat": pit.ks_stat, "band": pit.band,
                         "inside": bool(pit.inside)})

    skew_rows = []
    for r in records:
        if r["draws"].size >= 100:
            val, ok = quantile_skewness(r["draws"])
            skew_rows.append(val if ok else float("nan"))
        else:
            skew_rows.append(float("nan"))
    storage.write_table(out / "skewness.csv",
                        {"origin": origins, "quantile_skewness": skew_rows}, table_meta)

    agents = sorted(records[0]["weights"])
    wmean = {f"weight_{a}": [float(np.mean(r["weights"][a])) for r in records]
             for a in agents}
    wq5 = {f"q5_{a}": [float(np.quantile(r["weights"][a], 0.05)) for r in records]
           for a in agents}
    wq95 = {f"q95_{a}": [float(np.quantile(r["weights"][a], 0.95)) for r in records]
            for a in agents}
    storage.write_table(out / "weights.csv",
                        {"origin": origins, **wmean, **wq5, **wq95}, table_meta)

    # statistics that need the stored posterior draws
    inc_rows, r2_rows, shr_rows = [], [], []
    inc_labels = None
    for r in records:
        zpath = r["dir"] / "draws.zip"
        if not zpath.exists():
            inc_rows.append(None)
            r2_rows.append(float("nan"))
            shr_rows.append((float("nan"), float("nan")))
            continue
        da = storage.load_draw_archive(zpath)
        _, med = incompleteness_r2(da)
        r2_rows.append(med)
        shr = shrinkage_r2(da)
        shr_rows.append((shr["gamma"][1], shr["beta"][1]))
        if da.split_counts_beta is not None and da.split_counts_beta.size:
            shares, total = modifier_inclusion(da.split_counts_beta)
            if inc_labels is None and da.panel is not None:
                inc_labels = list(da.panel.beta_labels)
            inc_rows.append((shares, total))
        else:
            inc_rows.append(None)
    storage.write_table(out / "incompleteness.csv",
                        {"origin": origins, "r2_median": r2_rows}, table_meta)
    storage.write_table(out / "shrinkage.csv",
                        {"origin": origins,
                         "gamma_r2_median": [s[0] for s in shr_rows],
                         "beta_r2_median": [s[1] for s in shr_rows]}, table_meta)
    if inc_labels is not None and any(v is not None for v in inc_rows):
        kept = [(o, v) for o, v in zip(origins, inc_rows) if v is not None]
        cols = {"origin": [o for o, _ in kept]}
        for k, lab in enumerate(inc_labels):
            cols[f"share_{lab}"] = [float(v[0][k]) for _, v in kept]
        cols["total_splits"] = [float(v[1]) for _, v in kept]
        storage.write_table(out / "inclusion.csv", cols, table_meta)

    summary = {"n_origins": len(records), "rmse": scores.rmse(),
               "mean_crps": scores.mean_crps(),
               "mean_qw_tails": float(np.mean(scores.qw_tails)),
               "mean_qw_left": float(np.mean(scores.qw_left)),
               "mean_qw_right": float(np.mean(scores.qw_right)),
               "pit_ks": pit.ks_stat, "pit_inside_band": bool(pit.inside)}

    if args.baseline_dir:
        bmeta, brecords = _load_run_forecasts(args.baseline_dir)
        by_origin = {r["origin"]: r for r in brecords}
        common = [r for r in records if r["origin"] in by_origin]
        if not common:
            raise ValidationError("run and baseline share no finished origins")
        co = [r["origin"] for r in common]
        ct = [r["target"] for r in common]
        cy = np.array([y.at(t) for t in ct])
        a_sets = [r["draws"] for r in common]
        b_sets = [by_origin[r["origin"]]["draws"] for r in common]
        sa = build_score_series(co, ct, a_sets, cy)
        sb = build_score_series(co, ct, b_sets, cy)

        ratio_cols = {"metric": [], "run": [], "baseline": [], "ratio": [],
                      "dm_stat": [], "dm_p": [], "stars": []}
        for metric, la, lb in (("sq_error", sa.sq_error, sb.sq_error),
                               ("crps", sa.crps, sb.crps),
                               ("qw_tails", sa.qw_tails, sb.qw_tails),
                               ("qw_left", sa.qw_left, sb.qw_left),
                               ("qw_right", sa.qw_right, sb.qw_right)):
            dm = dm_test(la, lb, horizon=horizon)
            ma, mb = float(np.mean(la)), float(np.mean(lb))
            ratio_cols["metric"].append(metric)
            ratio_cols["run"].append(ma)
            ratio_cols["baseline"].append(mb)
            ratio_cols["ratio"].append(ma / mb if mb > 0 else float("nan"))
            ratio_cols["dm_stat"].append(dm.stat)
            ratio_cols["dm_p"].append(dm.p_value)
            ratio_cols["stars"].append("degenerate" if dm.degenerate else dm.stars)
        storage.write_table(out / "relative.csv", ratio_cols,
                            {**table_meta, "baseline": str(args.baseline_dir)})

        fluct = fluctuation_test(sa.crps, sb.crps, hac_lag=max(horizon - 1, 0))
        storage.write_table(out / "fluctuation.csv", {
            "origin": co[fluct.window - 1:],
            "stat": fluct.stats}, {**table_meta, "window": fluct.window,
                                   "crit": fluct.crit,
                                   "exceeds": bool(np.any(fluct.exceeds))})

        lo = min(min(np.min(d) for d in a_sets), min(np.min(d) for d in b_sets))
        hi = max(max(np.max(d) for d in a_sets), max(np.max(d) for d in b_sets))
        edges = np.linspace(lo, hi, 21)
        pdm = probability_difference_map(a_sets, b_sets, edges)
        cols = {"origin": co}
        for b in range(edges.size - 1):
            cols[f"bin_{edges[b]:.3f}_{edges[b + 1]:.3f}"] = pdm[:, b]
        storage.write_table(out / "probdiff.csv", cols, table_meta)

        summary["crps_ratio_vs_baseline"] = float(np.mean(sa.crps) / np.mean(sb.crps))
        summary["fluctuation_exceeds"] = bool(np.any(fluct.exceeds))

    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"wrote evaluation tables to {out} "
          f"(rmse {summary['rmse']:.4f}, mean crps {summary['mean_crps']:.4f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# render-tree


def _cmd_render_tree(args) -> int:
    da = storage.load_draw_archive(args.draws)
    ensembles = da.trees_beta if args.surface == "beta" else da.trees_gamma
    if ensembles is None:
        raise ValidationError("this fit stores no trees (not a tree-kind run?)")
    if not 0 <= args.draw_index < len(ensembles):
        raise ValidationError(f"draw index out of range 0..{len(ensembles) - 1}")
    from .trees import TreeEnsemble
    ens = TreeEnsemble.from_jsonable(ensembles[args.draw_index], da.spec.tree_prior)
    if not 0 <= args.tree_index < len(ens.trees):
        raise ValidationError(f"tree index out of range 0..{len(ens.trees) - 1}")
    if da.panel is None:
        raise ValidationError("no modifier panel stored with the draws")
    if args.surface == "beta":
        labels, rows = da.panel.beta_labels, da.panel.z_beta
    else:
        labels, rows = da.panel.gamma_labels, da.panel.z_gamma
    svg = render_tree_svg(ens.trees[args.tree_index], labels, rows)
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {"simulate-toy": _cmd_simulate_toy, "fit-agents": _cmd_fit_agents,
                "build-modifiers": _cmd_build_modifiers, "run": _cmd_run,
                "predict": _cmd_predict, "evaluate": _cmd_evaluate,
                "render-tree": _cmd_render_tree}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TreeSynthError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
