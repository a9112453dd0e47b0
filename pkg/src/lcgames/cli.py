"""Command-line front end for the lane-change game pipeline.

Subcommands: extract, cluster, fit, validate, games, simulate, synth,
report. Each stage reads its predecessor's files from the output directory,
writes plain CSV/JSON artifacts, and appends a manifest entry. Exit codes:
0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import clustering, evolution, payoffs, qre
from .errors import DataError, NumericError
from .extraction import (
    extract_events,
    read_events_csv,
    write_events_csv,
    write_rejections_csv,
)
from .pipeline import (
    Manifest,
    PipelineConfig,
    load_config,
    require_artifact,
    stage_seed,
    write_json,
)
from .tracks import read_lane_map, read_trajectories

log = logging.getLogger("lcgames")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):           # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _events_path(cfg: PipelineConfig) -> Path:
    return cfg.out / "events.csv"


def _labeled_path(cfg: PipelineConfig) -> Path:
    return cfg.out / "events_labeled.csv"


def _model_path(cfg: PipelineConfig) -> Path:
    return cfg.out / "model.json"


def _payoffs_path(cfg: PipelineConfig) -> Path:
    return cfg.out / "payoffs.csv"


def cmd_extract(cfg: PipelineConfig) -> None:
    if cfg.trajectories is None or cfg.lane_map is None:
        raise DataError("extract needs trajectory and map CSV paths "
                        "(--trajectories/--map or the [extract] section)")
    tracks = read_trajectories(cfg.trajectories)
    lane_map = read_lane_map(cfg.lane_map)
    events, rejections = extract_events(tracks, lane_map)

    cfg.out.mkdir(parents=True, exist_ok=True)
    events_path = _events_path(cfg)
    rej_path = cfg.out / "rejections.csv"
    summary_path = cfg.out / "extract_summary.json"
    write_events_csv(events_path, events)
    write_rejections_csv(rej_path, rejections)
    reasons: dict[str, int] = {}
    for r in rejections:
        reasons[r.reason] = reasons.get(r.reason, 0) + 1
    write_json(summary_path, {
        "n_tracks": len(tracks),
        "n_events": len(events),
        "n_rejected": len(rejections),
        "rejections_by_reason": reasons,
    })
    Manifest.load(cfg.out).record(
        "extract", [cfg.trajectories, cfg.lane_map],
        [events_path, rej_path, summary_path], seed=cfg.seed)
    log.info("extract: %d events, %d rejections", len(events), len(rejections))


def cmd_cluster(cfg: PipelineConfig) -> None:
    events_path = cfg.events or _events_path(cfg)
    require_artifact(events_path, "extract")
    events = read_events_csv(events_path)
    if not events:
        raise DataError(f"{events_path} holds no events to cluster")
    seed = stage_seed(cfg.seed, "cluster")
    labeled, report = clustering.cluster_events(
        events, seed=seed, restarts=cfg.cluster_restarts)

    cfg.out.mkdir(parents=True, exist_ok=True)
    labeled_path = _labeled_path(cfg)
    report_path = cfg.out / "cluster_report.json"
    write_events_csv(labeled_path, labeled, labeled=True)
    write_json(report_path, report)
    Manifest.load(cfg.out).record(
        "cluster", [events_path], [labeled_path, report_path], seed=seed)
    log.info("cluster: labeled %d events", len(labeled))


def _load_event_set(cfg: PipelineConfig) -> qre.EventSet:
    labeled_path = cfg.events or _labeled_path(cfg)
    require_artifact(labeled_path, "cluster")
    events = read_events_csv(labeled_path)
    return qre.EventSet.from_events(events)


def cmd_fit(cfg: PipelineConfig) -> None:
    es = _load_event_set(cfg)
    seed = stage_seed(cfg.seed, "fit")
    model = qre.fit(es, l1_weight=cfg.l1_weight, seed=seed,
                    max_iter=cfg.fit_max_iter, fp_tol=cfg.fp_tol)
    cfg.out.mkdir(parents=True, exist_ok=True)
    model_path = _model_path(cfg)
    qre.save_model(model_path, model)
    Manifest.load(cfg.out).record(
        "fit", [cfg.events or _labeled_path(cfg)], [model_path], seed=seed)
    log.info("fit: objective %.4f after %d iterations",
             model.diagnostics["objective"], model.diagnostics["iterations"])


def cmd_validate(cfg: PipelineConfig) -> None:
    es = _load_event_set(cfg)
    model_path = _model_path(cfg)
    require_artifact(model_path, "fit")
    model = qre.load_model(model_path)
    null_model = qre.fit_null(es, fp_tol=cfg.fp_tol)

    comparison = qre.validate(model, null_model, es)
    scores = qre.predict_and_score(model, es)
    vif_values = qre.vif(model.standardization.apply(es.raw))

    pairs = es.pair_labels()
    outcomes = es.outcome_labels()
    outcome_counts = {
        pair: {o: int(np.sum((pairs == pair) & (outcomes == o)))
               for o in ("CC", "CD", "DC", "DD")}
        for pair in sorted(set(pairs))
    }
    report = {
        "likelihood_ratio": comparison,
        "vif": [None if not np.isfinite(v) else float(v) for v in vif_values],
        "rationality": {
            "roles": list(qre.ROLES),
            "types": [t.name for t in qre.InteractionType if t.fitted],
            "values": model.lam.tolist(),
        },
        "outcome_counts_by_pair": outcome_counts,
        "prediction": scores,
    }
    cfg.out.mkdir(parents=True, exist_ok=True)
    report_path = cfg.out / "validation.json"
    write_json(report_path, report)
    Manifest.load(cfg.out).record(
        "validate", [cfg.events or _labeled_path(cfg), model_path],
        [report_path], seed=cfg.seed)
    log.info("validate: LRT %.1f (df %d), McFadden %.4f",
             comparison["lrt_stat"], comparison["df"], comparison["mcfadden"])


def cmd_games(cfg: PipelineConfig) -> None:
    es = _load_event_set(cfg)
    model_path = _model_path(cfg)
    require_artifact(model_path, "fit")
    model = qre.load_model(model_path)

    rows = payoffs.payoff_rows(es, model, eps=cfg.classify_eps)
    crosstab = payoffs.tabulate(es, model, eps=cfg.classify_eps)

    cfg.out.mkdir(parents=True, exist_ok=True)
    payoffs_path = _payoffs_path(cfg)
    crosstab_path = cfg.out / "dilemmas.json"
    payoffs.write_payoff_csv(payoffs_path, rows)
    write_json(crosstab_path, crosstab)
    Manifest.load(cfg.out).record(
        "games", [cfg.events or _labeled_path(cfg), model_path],
        [payoffs_path, crosstab_path], seed=cfg.seed)
    log.info("games: %d payoff rows over %d states", len(rows), len(es))


def cmd_simulate(cfg: PipelineConfig) -> None:
    payoffs_path = _payoffs_path(cfg)
    require_artifact(payoffs_path, "games")
    pool = evolution.pool_from_payoff_rows(payoffs.read_payoff_csv(payoffs_path))
    configs = evolution.sweep_configs(
        cfg.neighbor_sizes, cfg.noise_ks, cfg.mprs, cfg.contact_freqs,
        steps=cfg.steps, reps=cfg.reps, rows=cfg.grid_rows, cols=cfg.grid_cols,
        init_coop_av=cfg.init_coop_av, init_coop_hdv=cfg.init_coop_hdv)
    seed = stage_seed(cfg.seed, "simulate")
    records = evolution.run_sweep(configs, pool, master_seed=seed)

    cfg.out.mkdir(parents=True, exist_ok=True)
    records_path = cfg.out / "sim_records.json"
    series_path = cfg.out / "sim_series.csv"
    write_json(records_path, {"records": records})
    _write_sim_series(series_path, records)
    Manifest.load(cfg.out).record(
        "simulate", [payoffs_path], [records_path, series_path], seed=seed)
    log.info("simulate: %d configs x %d reps", len(configs), cfg.reps)


def _write_sim_series(path: Path, records: list[dict]) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["config_id", "rep", "step", "coop_all", "coop_av", "coop_hdv"])
        for record in records:
            for rep, series in enumerate(record["series"]):
                for step_no, (c_all, c_av, c_hdv) in enumerate(series):
                    writer.writerow([
                        record["config_id"], rep, step_no,
                        repr(float(c_all)), repr(float(c_av)), repr(float(c_hdv)),
                    ])


def cmd_synth(cfg: PipelineConfig) -> None:
    seed = stage_seed(cfg.seed, "synth")
    rng = np.random.default_rng(seed)
    beta = rng.normal(size=(2, 3, 3, 12))
    norms = np.linalg.norm(beta, axis=3, keepdims=True)
    beta = beta / norms * cfg.synth_beta_norm
    lam = np.full((2, 3), cfg.synth_lambda)
    theta_star = qre.UtilityModel(
        beta=beta, lam=lam, l1_weight=cfg.l1_weight,
        standardization=qre.Standardization.identity(11))
    es, info = qre.generate_synthetic(theta_star, cfg.synth_n,
                                      seed=stage_seed(cfg.seed, "synth-draw"))

    cfg.out.mkdir(parents=True, exist_ok=True)
    events_path = cfg.out / "synth_events.csv"
    model_path = cfg.out / "synth_model.json"
    write_synth_events_csv(events_path, es, info)
    qre.save_model(model_path, theta_star)
    Manifest.load(cfg.out).record(
        "synth", [], [events_path, model_path], seed=cfg.seed)
    log.info("synth: %d events", len(es))


def write_synth_events_csv(path: Path, es: qre.EventSet, info: dict) -> None:
    import csv as _csv

    pairs = es.pair_labels()
    outcomes = es.outcome_labels()
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["event_id", "active_type", "passive_type", "outcome",
             "p_active", "p_passive"] + [f"s{i + 1}" for i in range(11)])
        for i in range(len(es)):
            a_type, p_type = pairs[i].split("-")
            writer.writerow(
                [str(i), a_type, p_type, str(outcomes[i]),
                 repr(float(info["p_active"][i])), repr(float(info["p_passive"][i]))]
                + [repr(float(v)) for v in es.raw[i]])


def cmd_report(cfg: PipelineConfig) -> None:
    manifest = Manifest.load(cfg.out)
    if not manifest.entries:
        raise DataError(f"no manifest in {cfg.out}; run some pipeline stages first")
    problems = manifest.verify_chain()
    if problems:
        raise DataError("manifest chain broken: " + "; ".join(problems))

    summary: dict = {"stages": sorted(manifest.entries),
                     "chain_verified": True}
    for name, fname in (("extract", "extract_summary.json"),
                        ("cluster", "cluster_report.json"),
                        ("validation", "validation.json"),
                        ("dilemmas", "dilemmas.json")):
        path = cfg.out / fname
        if path.exists():
            from .pipeline import read_json
            summary[name] = read_json(path)
    records_path = cfg.out / "sim_records.json"
    if records_path.exists():
        from .pipeline import read_json
        records = read_json(records_path)["records"]
        summary["simulation"] = [
            {"config_id": r["config_id"], "config": r["config"],
             "final_mean_coop": float(np.nanmean([f[0] for f in r["final"]]))}
            for r in records
        ]
    report_path = cfg.out / "report.json"
    write_json(report_path, summary)
    log.info("report: wrote %s", report_path)


COMMANDS = {
    "extract": cmd_extract,
    "cluster": cmd_cluster,
    "fit": cmd_fit,
    "validate": cmd_validate,
    "games": cmd_games,
    "simulate": cmd_simulate,
    "synth": cmd_synth,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcgames", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", type=Path, default=None,
                       help="INI configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        if name == "extract":
            p.add_argument("--trajectories", type=Path, default=None)
            p.add_argument("--map", dest="lane_map", type=Path, default=None)
        if name in ("cluster", "fit", "validate", "games"):
            p.add_argument("--events", type=Path, default=None,
                           help="events CSV (defaults to the staged artifact)")
        if name == "fit":
            p.add_argument("--l1-weight", dest="l1_weight", type=float, default=None)
        if name == "synth":
            p.add_argument("--n", dest="synth_n", type=int, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "verbose", "config")}
    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg)
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
