"""End-to-end orchestration with file-based stage handoff.

Every stage reads and writes files inside one output directory, so stages
can be re-run standalone and compared by hash. Test features and test labels
travel in separate files: nothing before the evaluate stage opens the label
file, and the scoring stage consumes features only.

Fixed artifact names inside the output directory:

    data.csv                    labelled source telemetry
    test_features.csv           held-out features (no labels)
    test_labels.csv             held-out labels, index-aligned
    supervised_train.csv        labelled 90% training split
    ae_train.csv, ae_val.csv    normal-only reconstruction splits
    scaler_ae.json              min-max fit on ae_train
    scaler_supervised.json      min-max fit on supervised_train
    model_ae.json               trained reconstruction network
    ae_training_log.csv         epoch,train_mse,val_mse,lr
    scorer.json                 calibrated anomaly scorer bundle
    clf_<kind>.json             fitted baseline classifiers
    report_<name>.json          per-model evaluation reports
    comparison.csv              Model,Precision,Recall,F1-score,Accuracy
    manifest.json               config hash + artifact list (deterministic)
    run_log.csv                 per-stage wall-clock timing (not hashed)
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .anomaly import calibrate, classify, load_scorer, save_scorer
from .autoencoder import (
    default_autoencoder_specs,
    init_network,
    load_network,
    save_network,
    train,
    write_epoch_log,
)
from .baselines import load_model, predict, save_model, select_model
from .config import STAGE_BASELINE_BASE, STAGE_SPLIT, PipelineConfig
from .dataset import (
    Dataset,
    MinMaxScaler,
    apply_scaler,
    fit_scaler,
    generate_synthetic,
    load_csv,
    save_csv,
    split,
)
from .errors import ConfigError, DataError, ToolkitError
from .evaluation import evaluate_model, feature_histograms, histograms_to_csv_lines
from .numerics import derive_seed

MANIFEST_FORMAT_VERSION = 1
LOCK_NAME = ".aeromon.lock"
THREADS_ENV_VAR = "AEROMON_THREADS"


def thread_cap() -> int:
    """Within-stage parallelism cap from AEROMON_THREADS (0 = serial)."""
    raw = os.environ.get(THREADS_ENV_VAR, "0")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None
    if value < 0:
        raise ConfigError(f"{THREADS_ENV_VAR} must be >= 0, got {value}")
    return value


@dataclass
class RunManifest:
    config_hash: str
    toolkit_version: str
    artifacts: list[str] = field(default_factory=list)
    stage_seconds: dict = field(default_factory=dict)
    failed_stage: str | None = None

    def to_dict(self) -> dict:
        # stage timings go to run_log.csv, not here: the manifest file must
        # be byte-identical across reruns of the same config
        d = {
            "format_version": MANIFEST_FORMAT_VERSION,
            "config_hash": self.config_hash,
            "toolkit_version": self.toolkit_version,
            "artifacts": sorted(self.artifacts),
        }
        if self.failed_stage is not None:
            d["partial"] = True
            d["failed_stage"] = self.failed_stage
        return d


class _OutputDir:
    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)

    def file(self, name: str) -> Path:
        return self.path / name

    def write_json(self, name: str, payload: dict) -> None:
        self.file(name).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    def write_lines(self, name: str, lines: list[str]) -> None:
        self.file(name).write_text("\n".join(lines) + "\n", encoding="utf-8")


class _Lock:
    """Rejects a second concurrent run on the same output directory."""

    def __init__(self, out: _OutputDir):
        self.lock_path = out.file(LOCK_NAME)

    def __enter__(self):
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"output directory is locked by another run ({self.lock_path}); "
                "remove the lock file if that run is dead"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc_info):
        try:
            self.lock_path.unlink()
        except FileNotFoundError:
            pass
        return False


# --- standalone stages -------------------------------------------------------


def stage_ingest(cfg: PipelineConfig, out: _OutputDir) -> list[str]:
    """Generate synthetic telemetry or normalize the configured CSV."""
    if cfg.source == "synthetic":
        data = generate_synthetic(cfg.synth_config())
    else:
        data = load_csv(cfg["csv_path"], has_labels=True)
    save_csv(data, out.file("data.csv"))
    return ["data.csv"]


def stage_split(cfg: PipelineConfig, out: _OutputDir) -> list[str]:
    data = load_csv(out.file("data.csv"), has_labels=True)
    result = split(
        data,
        test_fraction=cfg["test_fraction"],
        ae_val_fraction=cfg["ae_val_fraction"],
        seed=derive_seed(cfg.seed, STAGE_SPLIT),
    )
    save_csv(result.test, out.file("test_features.csv"), include_labels=False)
    lines = ["index,label"]
    lines += [f"{i},{int(lbl)}" for i, lbl in enumerate(result.test.labels)]
    out.write_lines("test_labels.csv", lines)
    save_csv(result.supervised_train, out.file("supervised_train.csv"))
    save_csv(result.ae_train, out.file("ae_train.csv"))
    save_csv(result.ae_val, out.file("ae_val.csv"))
    return ["test_features.csv", "test_labels.csv", "supervised_train.csv", "ae_train.csv", "ae_val.csv"]


def stage_fit_scalers(cfg: PipelineConfig, out: _OutputDir) -> list[str]:
    ae_train = load_csv(out.file("ae_train.csv"), has_labels=True)
    supervised = load_csv(out.file("supervised_train.csv"), has_labels=True)
    out.write_json("scaler_ae.json", fit_scaler(ae_train).to_dict())
    out.write_json("scaler_supervised.json", fit_scaler(supervised).to_dict())
    return ["scaler_ae.json", "scaler_supervised.json"]


def stage_train_ae(cfg: PipelineConfig, out: _OutputDir) -> list[str]:
    scaler = MinMaxScaler.from_dict(json.loads(out.file("scaler_ae.json").read_text(encoding="utf-8")))
    ae_train = apply_scaler(scaler, load_csv(out.file("ae_train.csv"), has_labels=True))
    ae_val = apply_scaler(scaler, load_csv(out.file("ae_val.csv"), has_labels=True))
    train_cfg = cfg.train_config()
    net = init_network(default_autoencoder_specs(), train_cfg.seed)
    best, report = train(net, ae_train, ae_val, train_cfg)
    save_network(best, out.file("model_ae.json"))
    write_epoch_log(report, out.file("ae_training_log.csv"))
    return ["model_ae.json", "ae_training_log.csv"]


def stage_calibrate(cfg: PipelineConfig, out: _OutputDir) -> list[str]:
    net = load_network(out.file("model_ae.json"))
    scaler = MinMaxScaler.from_dict(json.loads(out.file("scaler_ae.json").read_text(encoding="utf-8")))
    ae_train = load_csv(out.file("ae_train.csv"), has_labels=True)
    scorer = calibrate(net, scaler, ae_train, cfg.threshold_policy())
    save_scorer(scorer, out.file("scorer.json"), "model_ae.json")
    return ["scorer.json"]


def stage_score(cfg: PipelineConfig, out: _OutputDir, input_name: str = "test_features.csv") -> list[str]:
    """Score a feature-only CSV; never touches labels."""
    scorer = load_scorer(out.file("scorer.json"))
    features = load_csv(out.file(input_name), has_labels=False)
    lines = ["index,score,decision"]
    for i in range(features.n):
        label, score = classify(scorer, features.features[i])
        lines.append(f"{i},{score!r},{int(label)}")
    out.write_lines("scores.csv", lines)
    return ["scores.csv"]


def stage_train_baselines(cfg: PipelineConfig, out: _OutputDir, threads: int = 0) -> list[str]:
    supervised = load_csv(out.file("supervised_train.csv"), has_labels=True)
    scaler = MinMaxScaler.from_dict(
        json.loads(out.file("scaler_supervised.json").read_text(encoding="utf-8"))
    )
    scaled = apply_scaler(scaler, supervised)
    written = []
    for i, kind in enumerate(cfg.baseline_kinds()):
        candidates = cfg.baseline_candidates(kind)
        seed = derive_seed(cfg.seed, STAGE_BASELINE_BASE + i)
        _, model = select_model(candidates, scaled, seed=seed, folds=cfg["cv_folds"], threads=threads)
        model = _with_scaler_ref(model, "scaler_supervised.json")
        name = f"clf_{kind}.json"
        save_model(model, out.file(name))
        written.append(name)
    return written


def _with_scaler_ref(model, ref: str):
    return replace(model, scaler_ref=ref)


def _load_test_set(out: _OutputDir) -> Dataset:
    features = load_csv(out.file("test_features.csv"), has_labels=False)
    labels = []
    with open(out.file("test_labels.csv"), encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["index", "label"]:
            raise DataError("test_labels.csv has an unexpected header")
        for row in reader:
            labels.append(int(row[1]))
    if len(labels) != features.n:
        raise DataError("test label count does not match test features")
    return Dataset(features.features, np.array(labels, dtype=np.int8))


def stage_evaluate(cfg: PipelineConfig, out: _OutputDir) -> list[str]:
    """The only stage that opens test_labels.csv."""
    test = _load_test_set(out)
    written = []

    scorer = load_scorer(out.file("scorer.json"))
    report = evaluate_model(lambda x: classify(scorer, x), test, model_name="ae")
    out.write_json("report_ae.json", report.to_dict())
    written.append("report_ae.json")

    for kind in cfg.baseline_kinds():
        model = load_model(out.file(f"clf_{kind}.json"))
        scaler = MinMaxScaler.from_dict(
            json.loads(out.file(model.scaler_ref).read_text(encoding="utf-8"))
        )
        report = evaluate_model(
            lambda x, m=model, s=scaler: predict(m, s.transform(x)), test, model_name=kind
        )
        out.write_json(f"report_{kind}.json", report.to_dict())
        written.append(f"report_{kind}.json")
    return written


def stage_compare(cfg: PipelineConfig, out: _OutputDir) -> list[str]:
    lines = ["Model,Precision,Recall,F1-score,Accuracy"]
    for name in ["ae"] + cfg.baseline_kinds():
        path = out.file(f"report_{name}.json")
        if not path.exists():
            raise DataError(f"missing report for '{name}'; run evaluate first")
        r = json.loads(path.read_text(encoding="utf-8"))
        lines.append(f"{r['model']},{r['precision']!r},{r['recall']!r},{r['f1']!r},{r['accuracy']!r}")
    out.write_lines("comparison.csv", lines)
    return ["comparison.csv"]


def stage_histogram(cfg: PipelineConfig, out: _OutputDir, input_name: str = "data.csv") -> list[str]:
    data = load_csv(out.file(input_name), has_labels=True)
    hists = feature_histograms(data, bins=cfg["histogram_bins"])
    out.write_lines("histograms.csv", histograms_to_csv_lines(hists))
    return ["histograms.csv"]


# --- full pipeline -----------------------------------------------------------

_PIPELINE_STAGES = (
    ("ingest", stage_ingest),
    ("split", stage_split),
    ("fit-scalers", stage_fit_scalers),
    ("train-ae", stage_train_ae),
    ("calibrate", stage_calibrate),
    ("train-baselines", None),  # bound below: needs the thread cap
    ("evaluate", stage_evaluate),
    ("compare", stage_compare),
)


def run_pipeline(cfg: PipelineConfig, out_dir=None, quiet: bool = False) -> RunManifest:
    """Execute every stage in order; bit-identical outputs for a fixed config.

    A stage failure aborts the run with the stage name attached; the partial
    manifest (flagged `partial`) lists whatever was written before the abort.
    """
    out = _OutputDir(out_dir if out_dir is not None else cfg.out_dir)
    threads = thread_cap()
    manifest = RunManifest(config_hash=cfg.config_hash(), toolkit_version=__version__)

    def log(msg):
        if not quiet:
            print(msg)

    with _Lock(out):
        for stage_name, fn in _PIPELINE_STAGES:
            started = time.perf_counter()
            try:
                if stage_name == "train-baselines":
                    written = stage_train_baselines(cfg, out, threads=threads)
                else:
                    written = fn(cfg, out)
            except ToolkitError as exc:
                manifest.failed_stage = stage_name
                out.write_json("manifest.json", manifest.to_dict())
                raise type(exc)(f"stage '{stage_name}' failed: {exc}") from exc
            manifest.artifacts.extend(written)
            manifest.stage_seconds[stage_name] = time.perf_counter() - started
            log(f"[{stage_name}] wrote {', '.join(written)} ({manifest.stage_seconds[stage_name]:.2f}s)")

        out.write_json("manifest.json", manifest.to_dict())
        timing_lines = ["stage,seconds"]
        timing_lines += [f"{name},{secs:.3f}" for name, secs in manifest.stage_seconds.items()]
        out.write_lines("run_log.csv", timing_lines)

    missing = [a for a in manifest.artifacts if not out.file(a).exists()]
    if missing:
        raise DataError(f"manifest lists artifacts that were not written: {missing}")
    return manifest
