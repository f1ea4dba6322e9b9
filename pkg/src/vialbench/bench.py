"""Benchmark campaigns: paired trials, metrics, and report files.

A campaign runs every modality over the same sequence of per-trial random
streams, so modality A's trial i sees the same rack pose, occupancy, and
camera miscalibration as modality B's trial i. Metrics follow two
conventions side by side: attempt and runtime statistics pool the successful
trials, while success and first-time percentages are computed per batch and
summarized across batches.

Reports are deterministic byte for byte: rerunning the same seed and trial
count reproduces identical CSV output.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control import (MODALITIES, AttemptOutcome, TrialRecord, calibrate_rig,
                      run_force_trial, run_tactile_trial, run_visual_trial)
from .core import (KEY_CALIB, PACKAGE_VERSION, RngStream, WorkspaceConfig,
                   split_rng)
from .perception import CnnWeights, train_discriminator
from .simworld import make_rig


@dataclass(frozen=True)
class Stat:
    """A mean/std pair plus the values that produced it (std is ddof=1,
    None when fewer than two values are defined)."""

    mean: float | None
    std: float | None
    values: tuple[float, ...]


def _stat(values) -> Stat:
    vals = tuple(float(v) for v in values)
    if not vals:
        return Stat(None, None, ())
    mean = float(np.mean(vals))
    std = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
    return Stat(mean, std, vals)


@dataclass(frozen=True)
class ModalityMetrics:
    """Pooled metrics for one modality's record list."""

    modality: str
    n_trials: int
    n_successes: int
    success_rate: float
    first_time_rate: float
    attempts_per_success: float | None   # all attempts spent / insertions won
    avg_time_s: float | None             # successful trials only
    histogram: dict[int, int]            # attempts -> success count
    cumulative: dict[int, float]         # attempt n -> P(success in <= n)


def compute_metrics(records: list[TrialRecord]) -> ModalityMetrics:
    if not records:
        raise ValueError("no records to summarize")
    modality = records[0].modality
    n = len(records)
    wins = [r for r in records if r.success]
    total_attempts = sum(r.attempts for r in records)
    histogram: dict[int, int] = {}
    for r in wins:
        histogram[r.attempts] = histogram.get(r.attempts, 0) + 1
    max_n = max((r.attempts for r in records), default=1)
    cumulative = {
        k: sum(1 for r in wins if r.attempts <= k) / n
        for k in range(1, max_n + 1)
    }
    return ModalityMetrics(
        modality=modality,
        n_trials=n,
        n_successes=len(wins),
        success_rate=len(wins) / n,
        first_time_rate=sum(1 for r in wins if r.attempts == 1) / n,
        attempts_per_success=(total_attempts / len(wins)) if wins else None,
        avg_time_s=(sum(r.runtime_s for r in wins) / len(wins)) if wins else None,
        histogram=histogram,
        cumulative=cumulative,
    )


@dataclass(frozen=True)
class ModalitySummary:
    modality: str
    n_trials: int
    n_batches: int
    metrics: ModalityMetrics
    attempts: Stat        # successful trials, pooled
    runtime_s: Stat       # successful trials, pooled
    success_pct: Stat     # one value per batch
    first_time_pct: Stat  # one value per batch


def summarize_modality(records: list[TrialRecord], n_batches: int) -> ModalitySummary:
    if n_batches < 1:
        raise ValueError("need at least one batch")
    if n_batches > len(records):
        raise ValueError(f"cannot split {len(records)} trials into {n_batches} batches")
    metrics = compute_metrics(records)
    wins = [r for r in records if r.success]
    success_pct = []
    first_pct = []
    bounds = np.linspace(0, len(records), n_batches + 1).astype(int)
    for b0, b1 in zip(bounds[:-1], bounds[1:]):
        chunk = records[b0:b1]
        chunk_wins = [r for r in chunk if r.success]
        success_pct.append(100.0 * len(chunk_wins) / len(chunk))
        first_pct.append(100.0 * sum(1 for r in chunk_wins if r.attempts == 1)
                         / len(chunk))
    return ModalitySummary(
        modality=metrics.modality,
        n_trials=len(records),
        n_batches=n_batches,
        metrics=metrics,
        attempts=_stat([r.attempts for r in wins]),
        runtime_s=_stat([r.runtime_s for r in wins]),
        success_pct=_stat(success_pct),
        first_time_pct=_stat(first_pct),
    )


@dataclass
class ExperimentResult:
    config: WorkspaceConfig
    seed: int
    trials: int
    batches: int
    modalities: tuple[str, ...]
    records: dict[str, list[TrialRecord]]
    summaries: dict[str, ModalitySummary]
    train_examples: int | None
    train_wall_s: float | None
    campaign_wall_s: float


def run_experiment(config: WorkspaceConfig, trials: int, batches: int = 3,
                   weights: CnnWeights | None = None,
                   modalities=MODALITIES, progress=None,
                   calibration=None) -> ExperimentResult:
    """Run ``trials`` paired trials of each modality and summarize them.

    Trains the slot classifier from the config seed when no weights are
    given. The tactile rig and its calibration are built once and shared by
    every tactile trial, mirroring a fixed physical gripper; a pre-computed
    ``calibration`` mapping (finger name -> TactileCalibration) skips the
    in-run calibration pass.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    unknown = set(modalities) - set(MODALITIES)
    if unknown:
        raise ValueError(f"unknown modalities: {sorted(unknown)}")

    def note(msg):
        if progress is not None:
            progress(msg)

    train_examples = None
    train_wall = None
    if weights is None:
        note("training slot classifier")
        t0 = time.perf_counter()
        weights, _, train_examples = train_discriminator(config)
        train_wall = time.perf_counter() - t0
        note(f"trained on {train_examples} crops in {train_wall:.1f}s")

    master = RngStream(config.seed)
    tactile_rig = None
    if "tactile" in modalities:
        tactile_rig = make_rig(config, "tactile")
        if calibration is None:
            calibration = calibrate_rig(config, tactile_rig,
                                        master.child(KEY_CALIB))

    t0 = time.perf_counter()
    records: dict[str, list[TrialRecord]] = {m: [] for m in modalities}
    for modality in modalities:
        for i in range(trials):
            stream = split_rng(master, i)
            if modality == "visual":
                rec = run_visual_trial(config, stream, weights, trial_index=i)
            elif modality == "force":
                rec = run_force_trial(config, stream, weights, trial_index=i)
            else:
                rec = run_tactile_trial(config, stream, weights, tactile_rig,
                                        calibration, trial_index=i)
            records[modality].append(rec)
            if (i + 1) % 25 == 0:
                note(f"{modality}: {i + 1}/{trials} trials")
    campaign_wall = time.perf_counter() - t0

    summaries = {m: summarize_modality(records[m], batches) for m in modalities}
    return ExperimentResult(
        config=config, seed=config.seed, trials=trials, batches=batches,
        modalities=tuple(modalities), records=records, summaries=summaries,
        train_examples=train_examples, train_wall_s=train_wall,
        campaign_wall_s=campaign_wall,
    )


# ---------------------------------------------------------------------------
# report files


def _fmt(value: float | None, decimals: int = 2) -> str:
    return "" if value is None else f"{value:.{decimals}f}"


def record_to_dict(record: TrialRecord) -> dict:
    def clean(x):
        return None if not np.isfinite(x) else float(x)

    return {
        "modality": record.modality,
        "trial_index": record.trial_index,
        "attempts": record.attempts,
        "success": record.success,
        "runtime_s": float(record.runtime_s),
        "outcomes": [{"position": [clean(p) for p in o.position],
                      "result": o.result} for o in record.outcomes],
        "final_offset": (None if record.final_offset is None
                         else [float(v) for v in record.final_offset]),
        "placement": record.placement,
    }


def record_from_dict(data: dict) -> TrialRecord:
    outcomes = tuple(
        AttemptOutcome(position=tuple(np.nan if p is None else float(p)
                                      for p in o["position"]),
                       result=o["result"])
        for o in data["outcomes"])
    final = data.get("final_offset")
    return TrialRecord(
        modality=data["modality"],
        trial_index=int(data["trial_index"]),
        attempts=int(data["attempts"]),
        success=bool(data["success"]),
        runtime_s=float(data["runtime_s"]),
        outcomes=outcomes,
        final_offset=None if final is None else (float(final[0]), float(final[1])),
        placement=data.get("placement"),
    )


def write_report(records: dict[str, list[TrialRecord]], batches: int,
                 out_dir, manifest: dict | None = None) -> dict[str, Path]:
    """Write summary/histogram/cumulative CSVs plus records and manifest.

    Returns the path of every file written. Output is deterministic for a
    given record set.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    modalities = list(records)
    summaries = {m: summarize_modality(records[m], batches) for m in modalities}
    paths: dict[str, Path] = {}

    paths["summary"] = out / "summary.csv"
    with open(paths["summary"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["modality", "attempts_mean", "attempts_std",
                    "runtime_s_mean", "runtime_s_std",
                    "success_pct_mean", "success_pct_std",
                    "first_time_pct_mean", "first_time_pct_std"])
        for m in modalities:
            s = summaries[m]
            w.writerow([m,
                        _fmt(s.attempts.mean), _fmt(s.attempts.std),
                        _fmt(s.runtime_s.mean), _fmt(s.runtime_s.std),
                        _fmt(s.success_pct.mean), _fmt(s.success_pct.std),
                        _fmt(s.first_time_pct.mean), _fmt(s.first_time_pct.std)])

    max_n = max((r.attempts for recs in records.values() for r in recs),
                default=1)
    paths["histogram"] = out / "histogram.csv"
    with open(paths["histogram"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["modality", "attempt_n", "success_count"])
        for m in modalities:
            hist = summaries[m].metrics.histogram
            for k in range(1, max_n + 1):
                w.writerow([m, k, hist.get(k, 0)])

    paths["cumulative"] = out / "cumulative.csv"
    with open(paths["cumulative"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["modality", "attempt_n", "cumulative_probability"])
        for m in modalities:
            cum = summaries[m].metrics.cumulative
            level = 0.0
            for k in range(1, max_n + 1):
                level = cum.get(k, level)
                w.writerow([m, k, f"{level:.6f}"])

    paths["records"] = out / "records.jsonl"
    with open(paths["records"], "w") as f:
        for m in modalities:
            for rec in records[m]:
                f.write(json.dumps(record_to_dict(rec), sort_keys=True) + "\n")

    paths["manifest"] = out / "run_manifest.json"
    base = {"package_version": PACKAGE_VERSION, "batches": batches,
            "modalities": modalities,
            "trials": {m: len(records[m]) for m in modalities}}
    if manifest:
        base.update(manifest)
    with open(paths["manifest"], "w") as f:
        json.dump(base, f, indent=2, sort_keys=True)
        f.write("\n")
    return paths


def emit_report(result: ExperimentResult, out_dir) -> dict[str, Path]:
    return write_report(result.records, result.batches, out_dir,
                        manifest={"seed": result.seed,
                                  "trials_requested": result.trials})


def load_records(path) -> dict[str, list[TrialRecord]]:
    """Read a records.jsonl back into per-modality record lists."""
    records: dict[str, list[TrialRecord]] = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = record_from_dict(json.loads(line))
            records.setdefault(rec.modality, []).append(rec)
    if not records:
        raise ValueError(f"{path}: no records found")
    return records
