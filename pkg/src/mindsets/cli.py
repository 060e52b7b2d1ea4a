"""Command-line entry point: each pipeline stage as a subcommand, ``run`` for the full matrix.

Exit codes: 0 success, 2 I/O, format or invalid-config error, 3 experiment/cohort
mismatch (including an empty experiment list), 4 missing monitoring timepoints.
Data goes to files under ``--out``; stdout carries one JSON summary line; logs go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from mindsets import errors, evaluation as ev, explain, monitor, pipeline, synth
from mindsets.dfg import DfgConfig
from mindsets.radiomics.extract import RadiomicsConfig
from mindsets.select import sulov_select
from mindsets.tabular import CATEGORICAL, apply_preprocess, fit_preprocess, fuse, load_cohort

log = logging.getLogger("mindsets")

CONFIG_KEYS = {"seed", "paths", "synth", "radiomics", "dfg", "selection", "experiments", "train",
               "importance", "monitor"}
PATH_KEYS = {"cohort_dir", "fragment_dir", "out_dir", "model"}
ARTIFACTS = "artifacts.json"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


IO_ERRORS = (OSError, json.JSONDecodeError, UnicodeDecodeError, errors.UnsupportedFormat,
             errors.CorruptHeader, errors.NonFiniteData, errors.NonIntegerLabels, errors.DimsMismatch,
             errors.LabelAbsent, errors.EmptyRoi, errors.InvalidSpec, errors.InvalidCohort,
             errors.WrongItemCount, errors.ModelVersionMismatch, errors.DuplicateFragment)
MISMATCH_ERRORS = (errors.SingleClass, errors.TooFewGroups, errors.SingleClassTrainSet, errors.ClassAbsent,
                   errors.EmptyTrainSet, errors.UnknownPatient, errors.DimMismatch, errors.UnparseableName)
TIMEPOINT_ERRORS = (errors.MissingTimepoint, errors.NoVisits)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def load_config(path: str | None, seed: int | None) -> dict:
    """Read the pipeline config, resolve relative paths against its directory, apply ``--seed``."""
    cfg: dict = {}
    base = Path.cwd()
    if path:
        p = Path(path)
        try:
            cfg = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"{p}: cannot read config: {exc}", 2) from exc
        if not isinstance(cfg, dict):
            raise CliError(f"{p}: config must be a JSON object", 2)
        base = p.resolve().parent
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}", 2)
    cfg.setdefault("seed", 0)
    if seed is not None:
        cfg["seed"] = seed
    paths = dict(cfg.get("paths", {}))
    bad = set(paths) - PATH_KEYS
    if bad:
        raise CliError(f"unknown path keys: {sorted(bad)}", 2)
    cfg["paths"] = {k: str((base / v).resolve()) for k, v in paths.items() if v is not None}
    return cfg


def config_digest(cfg: dict) -> str:
    """Digest of every setting except file locations, so relocated data keeps its digest."""
    return ev.digest({k: v for k, v in cfg.items() if k != "paths"})


def settings_of(cfg: dict) -> ev.ExperimentSettings:
    sel = cfg.get("selection", {})
    unknown = set(sel) - {"corr_threshold", "mi_bins", "top_k"}
    if unknown:
        raise CliError(f"unknown selection keys: {sorted(unknown)}", 2)
    try:
        dfg_cfg = DfgConfig.from_dict(cfg.get("dfg", {}))
        return ev.ExperimentSettings(dfg_cfg, float(sel.get("corr_threshold", 0.70)),
                                     int(sel.get("mi_bins", 10)), sel.get("top_k"))
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid dfg/selection config: {exc}", 2) from exc


def experiments_of(cfg: dict) -> list[ev.ExperimentSpec]:
    """Explicit experiment list, or ``{"matrix": {"dfg_variants": [...]}}``; seeds default to the config seed."""
    raw = cfg.get("experiments", {"matrix": {}})
    seed = int(cfg["seed"])
    try:
        if isinstance(raw, dict):
            variants = raw.get("matrix", {}).get("dfg_variants", [True])
            return ev.experiment_matrix(seed, tuple(bool(v) for v in variants))
        return [ev.ExperimentSpec.from_dict({"seed": seed, **e}) for e in raw]
    except (TypeError, ValueError, AttributeError) as exc:
        raise CliError(f"invalid experiment list: {exc}", 2) from exc


def pick_experiment(cfg: dict, name: str | None) -> ev.ExperimentSpec:
    specs = experiments_of(cfg)
    if not specs:
        raise CliError("experiment list is empty", 3)
    name = name or cfg.get("train", {}).get("experiment")
    if name is None:
        return specs[0]
    for s in specs:
        if s.name == name:
            return s
    raise CliError(f"experiment {name!r} not in config (have {[s.name for s in specs][:4]} ...)", 3)


def radiomics_of(cfg: dict) -> RadiomicsConfig:
    try:
        return RadiomicsConfig.from_dict(cfg.get("radiomics", {}))
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid radiomics config: {exc}", 2) from exc


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------

class Outputs:
    """Writes artifacts under one directory and records their digests in ``artifacts.json``."""

    def __init__(self, out_dir, digest: str, command: str):
        if out_dir is None:
            raise CliError("no output directory: pass --out or set paths.out_dir", 2)
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.digest = digest
        self.command = command
        self.files: dict[str, str] = {}

    def text(self, rel: str, content: str) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content)
        self.files[rel] = hashlib.sha256(content.encode()).hexdigest()
        return path

    def json(self, rel: str, obj: dict) -> Path:
        return self.text(rel, json.dumps({**obj, "config_digest": self.digest}, indent=2, sort_keys=True) + "\n")

    def record(self, path: Path) -> None:
        rel = path.relative_to(self.root).as_posix()
        self.files[rel] = hashlib.sha256(path.read_bytes()).hexdigest()

    def close(self) -> dict:
        manifest = {"command": self.command, "config_digest": self.digest, "files": dict(sorted(self.files.items()))}
        (self.root / ARTIFACTS).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def out_dir_of(args, cfg) -> str | None:
    return args.out or cfg["paths"].get("out_dir")


def load_inputs(args, cfg) -> ev.Cohort:
    cohort_dir = args.cohort or cfg["paths"].get("cohort_dir")
    if cohort_dir is None:
        raise CliError("no cohort: pass --cohort or set paths.cohort_dir", 2)
    cohort_dir = Path(cohort_dir)
    records = load_cohort(cohort_dir / "cohort.csv")
    # configured fragments belong to the configured cohort, not to a --cohort override
    frag_dir = args.fragments or (None if args.cohort else cfg["paths"].get("fragment_dir"))
    if frag_dir:
        fragments = pipeline.load_fragments(frag_dir)
    else:
        log.info("extracting radiomics from %s", cohort_dir)
        pairs = pipeline.scan_pairs(cohort_dir / "volumes", cohort_dir / "masks")
        fragments = pipeline.extract_cohort(pairs, radiomics_of(cfg), args.jobs)
    return ev.Cohort(records, fragments)


def load_bundle(args, cfg) -> ev.ModelBundle:
    path = args.model or cfg["paths"].get("model")
    if path is None:
        raise CliError("no model: pass --model (a bundle written by `train`)", 2)
    return ev.ModelBundle.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg) -> dict:
    raw = dict(cfg.get("synth", {}))
    if args.seed is not None or "seed" not in raw:
        raw["seed"] = int(cfg["seed"])
    spec = synth.SynthSpec.from_dict(raw)
    digest = config_digest({**cfg, "synth": spec.to_dict(), "seed": spec.seed})
    out = Outputs(out_dir_of(args, cfg), digest, "synth")
    manifest = (synth.generate_treated_pair if args.treated_pair else synth.generate_cohort)(spec, out.root)
    for rel in manifest["files"]:
        out.record(out.root / rel)
    out.record(out.root / "manifest.json")
    out.close()
    return {"command": "synth", "kind": manifest["kind"], "n_patients": len(manifest["patients"]),
            "manifest_sha256": out.files["manifest.json"], "config_digest": digest}


def load_synth_config(path: str | None, seed: int | None) -> dict:
    """Pipeline config, or a bare SynthSpec JSON wrapped as ``{"synth": ...}``."""
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise errors.InvalidSpec(f"{path}: {exc}") from exc
        if isinstance(data, dict) and "synth" not in data and set(data) <= set(synth.SynthSpec.__dataclass_fields__):
            return {"synth": data, "seed": seed if seed is not None else data.get("seed", 0), "paths": {}}
    return load_config(path, seed)


def cmd_extract(args, cfg) -> dict:
    cohort_dir = args.cohort or cfg["paths"].get("cohort_dir")
    vol_dir = args.volumes or (Path(cohort_dir) / "volumes" if cohort_dir else None)
    mask_dir = args.masks or (Path(cohort_dir) / "masks" if cohort_dir else None)
    if vol_dir is None or mask_dir is None:
        raise CliError("pass --cohort, or --volumes and --masks", 2)
    rcfg = radiomics_of(cfg)
    digest = config_digest(cfg)
    out = Outputs(out_dir_of(args, cfg), digest, "extract")
    pairs = pipeline.scan_pairs(vol_dir, mask_dir)
    log.info("extracting %d scans with %d job(s)", len(pairs), args.jobs)
    frags = pipeline.extract_cohort(pairs, rcfg, args.jobs)
    for path in pipeline.write_fragments(frags, out.root):
        out.record(path)
    out.json("extract.json", {"radiomics": rcfg.to_dict(), "n_fragments": len(frags),
                              "scans": [f"{p}_m{m}" for p, m, _, _ in pairs]})
    out.close()
    return {"command": "extract", "n_fragments": len(frags), "config_digest": digest}


def _experiment_table(args, cfg):
    spec = pick_experiment(cfg, args.experiment)
    cohort = load_inputs(args, cfg)
    return spec, ev.build_table(cohort, spec)


def cmd_preprocess(args, cfg) -> dict:
    spec, table = _experiment_table(args, cfg)
    classes = [c for c in ev.CLASSES if c in spec.classes]
    state = fit_preprocess(table, np.ones(len(table), dtype=bool), classes)
    X, y, _ = apply_preprocess(table, state, allow_class_imputation=True)
    digest = config_digest(cfg)
    out = Outputs(out_dir_of(args, cfg), digest, "preprocess")
    ids = [c for c in ("patient_id", "visit_month", "diagnosis") if c in table.frame.columns]
    frame = pd.concat([table.frame[ids].reset_index(drop=True), pd.Series(y, name="label"),
                       pd.DataFrame(X, columns=state.columns)], axis=1)
    out.text("preprocessed.csv", ev.to_csv_text(frame))
    out.json("preprocess_state.json", {"experiment": spec.to_dict(), "state": state.to_dict()})
    out.close()
    return {"command": "preprocess", "experiment": spec.name, "n_rows": len(table),
            "n_features": len(state.columns), "config_digest": digest}


def cmd_select(args, cfg) -> dict:
    settings = settings_of(cfg)
    if args.input:
        src = Path(args.input)
        frame = pd.read_csv(src / "preprocessed.csv")
        state_doc = json.loads((src / "preprocess_state.json").read_text())
        columns = state_doc["state"]["columns"]
        kinds = state_doc["state"]["kinds"]
        X, y = frame[columns].to_numpy(np.float64), frame["label"].to_numpy()
        name = ev.ExperimentSpec.from_dict(state_doc["experiment"]).name
    else:
        spec, table = _experiment_table(args, cfg)
        state = fit_preprocess(table, np.ones(len(table), dtype=bool), [c for c in ev.CLASSES if c in spec.classes])
        X, y, _ = apply_preprocess(table, state, allow_class_imputation=True)
        columns, kinds, name = state.columns, state.kinds, spec.name
    categorical = [c for c in columns if kinds[c] == CATEGORICAL]
    result = sulov_select(X, y, columns, settings.corr_threshold, settings.mi_bins, categorical)
    digest = config_digest(cfg)
    out = Outputs(out_dir_of(args, cfg), digest, "select")
    out.json("selection.json", {"experiment": name, **result.to_dict()})
    out.close()
    return {"command": "select", "experiment": name, "n_kept": len(result.kept),
            "n_dropped": len(result.dropped), "config_digest": digest}


def cmd_train(args, cfg) -> dict:
    spec = pick_experiment(cfg, args.experiment)
    cohort = load_inputs(args, cfg)
    digest = config_digest(cfg)
    bundle = ev.fit_final(cohort, spec, settings_of(cfg), digest)
    out = Outputs(out_dir_of(args, cfg), digest, "train")
    out.text("model.json", bundle.to_json())
    out.close()
    return {"command": "train", "experiment": spec.name, "classes": bundle.classes,
            "n_selected": len(bundle.selected), "config_digest": digest}


def cmd_run(args, cfg) -> dict:
    specs = experiments_of(cfg)
    if not specs:
        raise CliError("experiment list is empty", 3)
    settings = settings_of(cfg)
    cohort = load_inputs(args, cfg)
    digest = config_digest(cfg)
    out = Outputs(out_dir_of(args, cfg), digest, "run")
    reports = []
    for i, spec in enumerate(specs):
        log.info("[%d/%d] %s", i + 1, len(specs), spec.name)
        rep = ev.run_experiment(cohort, spec, settings, digest)
        reports.append(rep)
        out.text(f"reports/{spec.name}.json", rep.to_json())
        rows = [{"fold": f, **m.to_dict()} for f, m in enumerate(rep.folds)] + [{"fold": "mean", **rep.mean.to_dict()}]
        out.text(f"reports/{spec.name}.csv", _csv(rows, ["fold", *ev.METRIC_NAMES]))
    scen = ev.scenario_table(reports)
    out.text("scenario_table.csv", ev.to_csv_text(scen))
    out.text("scenario_table.txt", ev.text_table(scen))
    abl = ev.ablation_table(reports)
    if len(abl):
        out.text("ablation_table.csv", ev.to_csv_text(abl))
        out.text("ablation_table.txt", ev.text_table(abl))
    out.close()
    return {"command": "run", "n_reports": len(reports), "ablation": bool(len(abl)),
            "mean_accuracy": {r.spec.name: r.mean.accuracy for r in reports}, "config_digest": digest}


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def _name_parser(bundle: ev.ModelBundle):
    if bundle.spec.timepoints == "month0":
        return lambda n: explain.parse_feature_name(n, default_month=0)
    if bundle.per_visit:
        def pooled(n):
            t, s = explain.parse_feature_name(n, default_month=0)
            return ("pooled" if t != explain.MULTI_OMICS else t), s
        return pooled
    return explain.parse_feature_name


def cmd_importance(args, cfg) -> dict:
    bundle = load_bundle(args, cfg)
    cohort = load_inputs(args, cfg)
    X, y, _ = bundle.matrix(ev.build_table(cohort, bundle.spec))
    if (y < 0).any():
        raise CliError("cohort has rows outside the model's classes", 3)
    imp = cfg.get("importance", {})
    report = explain.permutation_importance(bundle.model, X, y, imp.get("metric", "accuracy"),
                                            int(imp.get("repeats", 5)), int(cfg["seed"]), bundle.selected)
    parser = _name_parser(bundle)
    grouped = explain.group_by_timepoint(report, parser)
    digest = config_digest(cfg)
    out = Outputs(out_dir_of(args, cfg), digest, "importance")
    out.json("importance.json", {**report.to_dict(), "experiment": bundle.spec.name,
                                 "model_config_digest": bundle.config_digest, "grouped": grouped.to_dict()})
    out.text("importance_plot.csv", explain.plot_data_csv(report, parser))
    out.close()
    return {"command": "importance", "baseline": report.baseline, "by_timepoint": grouped.by_timepoint,
            "config_digest": digest}


def _arms(args, cohort_dir: Path) -> tuple[dict, dict | None]:
    """Patient -> arm from ``--arms`` (CSV or synth manifest) or the cohort's own manifest."""
    src = Path(args.arms) if args.arms else cohort_dir / "manifest.json"
    if not src.exists():
        raise CliError(f"{src}: no arm assignment (pass --arms)", 2)
    if src.suffix == ".json":
        manifest = json.loads(src.read_text())
        arms = {p["patient_id"]: p["arm"] for p in manifest.get("patients", []) if "arm" in p}
    else:
        with src.open() as fh:
            arms = {r["patient_id"]: r["arm"] for r in csv.DictReader(fh)}
        manifest = None
    if set(arms.values()) - {"treated", "control"} or not arms:
        raise CliError(f"{src}: arms must be 'treated' or 'control'", 2)
    return arms, manifest


def cmd_monitor(args, cfg) -> dict:
    mcfg = cfg.get("monitor", {})
    target = mcfg.get("target_class", "MCI")
    horizons = [int(h) for h in mcfg.get("horizons", [3, 12])]
    average_over = mcfg.get("average_over", "decreasers")
    if not (args.cohort or cfg["paths"].get("cohort_dir")):
        raise CliError("no cohort: pass --cohort or set paths.cohort_dir", 2)
    cohort_dir = Path(args.cohort or cfg["paths"]["cohort_dir"])
    arms, manifest = _arms(args, cohort_dir)
    records = load_cohort(cohort_dir / "cohort.csv")
    visits = {(r.patient_id, r.visit_month) for r in records if r.patient_id in arms}

    if args.perfect_classifier:
        if manifest is None or "true_p_target" not in manifest:
            raise CliError("--perfect-classifier needs a treated-pair manifest", 2)
        true_p = manifest["true_p_target"]
        trajs = {pid: monitor.from_probabilities(pid, {m: true_p[pid][str(m)] for p, m in sorted(visits) if p == pid})
                 for pid in sorted(arms) if any(p == pid for p, _ in visits)}
        target_index, source = 0, "manifest"
    else:
        bundle = load_bundle(args, cfg)
        if not bundle.per_visit:
            raise CliError("monitoring needs a per-visit model (train a month0 or per_visit experiment)", 3)
        if target not in bundle.classes:
            raise CliError(f"target class {target!r} not among model classes {bundle.classes}", 3)
        target_index, source = bundle.classes.index(target), "model"
        cohort = load_inputs(args, cfg)
        recs = [r for r in cohort.records if r.patient_id in arms]
        frags = [f for f in cohort.fragments if (f[0], f[1]) in visits]
        table = fuse(frags, recs, layout="per_visit")
        X, _, _ = bundle.matrix(table)
        months = table.frame["visit_month"].to_numpy()
        pids = table.frame["patient_id"].to_numpy()
        trajs = {}
        for pid in sorted(set(pids)):
            rows = {int(m): X[i] for i, (p, m) in enumerate(zip(pids, months)) if p == pid}
            trajs[pid] = monitor.trajectory(bundle.model, rows, target_index, pid)

    by_arm = {a: [t for p, t in trajs.items() if arms[p] == a] for a in ("treated", "control")}
    missing = sorted(set(arms) - set(trajs))
    if missing:
        raise errors.NoVisits(f"no visits for {missing[:5]}")
    reports = {str(h): monitor.cohort_report(by_arm["treated"], by_arm["control"], target_index, h,
                                             average_over).to_dict() for h in horizons}
    digest = config_digest(cfg)
    out = Outputs(out_dir_of(args, cfg), digest, "monitor")
    out.json("monitor.json", {"target_class": target, "source": source, "reports": reports,
                              "trajectories": [trajs[p].to_dict() for p in sorted(trajs)]})
    out.text("trajectories.csv", monitor.trajectories_csv(by_arm))
    out.close()
    summary = {h: {a: [r[a]["n"], r[a]["n_decreased"], r[a]["mean_decrease_pct"]] for a in ("treated", "control")}
               for h, r in reports.items()}
    return {"command": "monitor", "source": source, "reports": summary, "config_digest": digest}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "synth": cmd_synth, "extract": cmd_extract, "preprocess": cmd_preprocess, "select": cmd_select,
    "train": cmd_train, "run": cmd_run, "importance": cmd_importance, "monitor": cmd_monitor,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mindsets", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="pipeline config JSON (for synth, a SynthSpec JSON also works)")
        p.add_argument("--seed", type=int, help="override the config seed (u64)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for radiomics extraction")
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name != "synth":
            p.add_argument("--cohort", help="directory holding cohort.csv (and volumes/, masks/)")
            p.add_argument("--fragments", help="directory of radiomics fragment CSVs (skips extraction)")
        if name in ("preprocess", "select", "train"):
            p.add_argument("--experiment", help="experiment name, e.g. AD_vs_CTL__multiomics__all__dfg")
        if name == "synth":
            p.add_argument("--treated-pair", action="store_true", help="write a treated/control MCI pair")
        if name == "extract":
            p.add_argument("--volumes")
            p.add_argument("--masks")
        if name == "select":
            p.add_argument("--input", help="output directory of `preprocess`")
        if name in ("importance", "monitor"):
            p.add_argument("--model", help="model bundle written by `train`")
        if name == "monitor":
            p.add_argument("--arms", help="CSV patient_id,arm or a treated-pair manifest.json")
            p.add_argument("--perfect-classifier", action="store_true",
                           help="score trajectories with the manifest's ground-truth probabilities")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="mindsets: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("mindsets: error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        if args.command == "synth":
            cfg = load_synth_config(args.config, args.seed)
        else:
            cfg = load_config(args.config, args.seed)
        summary = COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"mindsets: error: {exc}", file=sys.stderr)
        return exc.code
    except TIMEPOINT_ERRORS as exc:
        print(f"mindsets: error: missing timepoint: {exc}", file=sys.stderr)
        return 4
    except MISMATCH_ERRORS as exc:
        print(f"mindsets: error: experiment/cohort mismatch: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except IO_ERRORS as exc:
        print(f"mindsets: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (KeyError, ValueError) as exc:
        print(f"mindsets: error: invalid input: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
