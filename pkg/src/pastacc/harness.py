"""Incremental-learning simulation: splits, the train/estimate/measure loop,
GradSum and accuracy caches, backfilled calibration samples, timing benchmark.

On-disk layout of a run directory::

    manifest.jsonl         one JSON record per line (see below)
    dataset.bin            the full dataset (EFDATA01)
    splits.json            the split plan
    ckpt/round_SSS.ckpt    N_s                          (EFCKPT01)
    delta/round_SSS.delta  W_s - W_{s-1}                (EFCKPT01 layout)
    est/round_SSS_kK.gsum  GradSum of X_s^k under N_{s-1}  (EFGSUM01)
    cache/prep_SSS/        GradSum of X_s^k under every N_j, j < s
    report.jsonl           per (round, class) calibration records

Manifest records, in order: ``header``, then ``round`` 0, and for each
s = 1..S a ``prepare`` record (work done before training s) followed by a
``round`` record (training s, the timed estimate, and the measured change).
A run is resumed by replaying the manifest and continuing after the last
complete record.  Keys whose name starts with ``time_`` hold wall-clock
measurements and are the only fields that differ between identical runs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import shutil
import time
from dataclasses import dataclass
from pathlib import Path
from statistics import median
from typing import Optional

import numpy as np
from filelock import FileLock

from . import regressor, storage
from .config import RunConfig
from .data import Dataset, SyntheticSpec, concat, gen_synthetic, read_idx
from .errors import (
    CacheConsistencyError,
    ConfigurationError,
    ManifestIntegrityError,
    NoEstimateError,
    SplitIntegrityError,
)
from .estimator import GradSumRecord, compute_gradsum, effect, merge_gradsum
from .nn import MlpNetwork, correct_mask, param_delta, flatten_params, predict_proba, top_two
from .regressor import EfSample
from .rng import stream
from .train import Checkpoint, TrainConfig, init_network, mean_loss, train_round

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
EARLIEST_ESTIMATE = 3
COHERENCE_RTOL = 1e-9
OUTLIER_RULE = "tukey-1.5iqr-both-coordinates-single-pass"


# -- splits ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SplitPlan:
    dataset_id: str
    n_rounds: int
    ratio: float
    train: tuple
    test: tuple

    def round_ids(self, s: int) -> np.ndarray:
        return np.union1d(self.train[s], self.test[s])

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "n_rounds": self.n_rounds,
            "ratio": self.ratio,
            "train": [a.tolist() for a in self.train],
            "test": [a.tolist() for a in self.test],
        }

    @classmethod
    def from_dict(cls, d) -> "SplitPlan":
        return cls(
            d["dataset_id"], int(d["n_rounds"]), float(d["ratio"]),
            tuple(np.asarray(a, dtype=np.int64) for a in d["train"]),
            tuple(np.asarray(a, dtype=np.int64) for a in d["test"]),
        )


def round_sizes(n_samples: int, n_rounds: int) -> list[int]:
    """Round 0 gets floor(2n/3); the rest is spread over ``n_rounds`` rounds, larger ones first."""
    first = (2 * n_samples) // 3
    rest = n_samples - first
    base, extra = divmod(rest, n_rounds)
    return [first] + [base + (1 if i < extra else 0) for i in range(n_rounds)]


def plan_splits(n_samples: int, n_rounds: int, train_test_ratio: float, seed: int,
                ids=None, dataset_id: str = "") -> SplitPlan:
    """Seeded shuffle, then slice into round 0 and ``n_rounds`` incremental rounds.

    Within a round the first ``floor(size / (ratio + 1))`` shuffled ids are
    the test portion and the remainder is for training.
    """
    if n_rounds < 1:
        raise ConfigurationError("need at least one incremental round")
    if not train_test_ratio > 0:
        raise ConfigurationError("train:test ratio must be positive")
    sizes = round_sizes(n_samples, n_rounds)
    test_sizes = [int(math.floor(sz / (train_test_ratio + 1))) for sz in sizes]
    if min(sizes[1:]) < 1 or sizes[0] - test_sizes[0] < 1:
        raise ConfigurationError(
            f"{n_samples} samples cannot fill round 0 plus {n_rounds} non-empty rounds"
        )
    ids = np.arange(n_samples) if ids is None else np.asarray(ids, dtype=np.int64)
    if len(ids) != n_samples:
        raise ConfigurationError("ids length must equal n_samples")
    order = ids[stream(seed, purpose="split").permutation(n_samples)]
    train, test, pos = [], [], 0
    for size, n_test in zip(sizes, test_sizes):
        chunk = order[pos:pos + size]
        test.append(np.sort(chunk[:n_test]))
        train.append(np.sort(chunk[n_test:]))
        pos += size
    return SplitPlan(dataset_id, n_rounds, float(train_test_ratio), tuple(train), tuple(test))


def update_eval_set(prev, td_s) -> np.ndarray:
    """X_1 = TD_0 (``prev`` is None); afterwards X_s = X_{s-1} | TD_s."""
    td_s = np.asarray(td_s, dtype=np.int64)
    if prev is None:
        return np.unique(td_s)
    prev = np.asarray(prev, dtype=np.int64)
    if np.intersect1d(prev, td_s).size:
        raise SplitIntegrityError("new test portion overlaps the past evaluation set")
    return np.union1d(prev, td_s)


def eval_set_ids(plan: SplitPlan, s: int) -> np.ndarray:
    if s < 1:
        raise ValueError("the evaluation set is defined from round 1 on")
    x = update_eval_set(None, plan.test[0])
    for r in range(2, s + 1):
        x = update_eval_set(x, plan.test[r])
    return x


def new_eval_ids(plan: SplitPlan, s: int) -> np.ndarray:
    """Ids added to the evaluation set at round ``s``."""
    return plan.test[0] if s == 1 else plan.test[s]


# -- manifest --------------------------------------------------------------------

def _dump(record) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=True)


def strip_timing(obj):
    """Copy of a record with every ``time_*`` key removed, recursively."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if not k.startswith("time_")}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


class RunManifest:
    """Read/append access to a run directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.records: list[dict] = []
        self._dataset = None
        self._split = None
        self._nets: dict[int, MlpNetwork] = {}
        if self.path.exists():
            self._load()

    @property
    def path(self) -> Path:
        return self.root / "manifest.jsonl"

    def _load(self):
        good = []
        with open(self.path) as f:
            lines = f.read().split("\n")
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                good.append(json.loads(line))
            except json.JSONDecodeError:
                # only an interrupted final append may be partial
                if any(l.strip() for l in lines[i + 1:]):
                    raise ManifestIntegrityError(f"{self.path}: corrupt line {i + 1}")
                log.warning("dropping partial trailing manifest line")
                self._rewrite(good)
                break
        self.records = good
        if self.records and self.records[0].get("kind") != "header":
            raise ManifestIntegrityError("manifest does not start with a header record")

    def _rewrite(self, records):
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w") as f:
            f.writelines(_dump(r) + "\n" for r in records)
        os.replace(tmp, self.path)

    def append(self, record: dict):
        with open(self.path, "a") as f:
            f.write(_dump(record) + "\n")
            f.flush()
            os.fsync(f.fileno())
        self.records.append(record)

    # accessors
    @property
    def header(self) -> dict:
        if not self.records:
            raise ManifestIntegrityError(f"{self.path}: empty or missing manifest")
        return self.records[0]

    @property
    def config(self) -> RunConfig:
        return RunConfig.from_dict(self.header["config"])

    @property
    def layer_dims(self) -> tuple:
        return tuple(self.header["layer_dims"])

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def file(self, rel) -> Path:
        p = self.root / rel
        if not p.exists():
            raise ManifestIntegrityError(f"missing file referenced by manifest: {rel}")
        return p

    @property
    def dataset(self) -> Dataset:
        if self._dataset is None:
            self._dataset = storage.load_dataset(self.file(self.header["dataset"]))
        return self._dataset

    @property
    def split(self) -> SplitPlan:
        if self._split is None:
            with open(self.file(self.header["splits"])) as f:
                self._split = SplitPlan.from_dict(json.load(f))
        return self._split

    def find(self, kind: str, s: int) -> Optional[dict]:
        for r in self.records:
            if r.get("kind") == kind and r.get("s") == s:
                return r
        return None

    def require(self, kind: str, s: int) -> dict:
        r = self.find(kind, s)
        if r is None:
            raise ManifestIntegrityError(f"manifest has no {kind} record for round {s}")
        return r

    def rounds_done(self) -> int:
        """Highest round with a ``round`` record, -1 if none."""
        done = [r["s"] for r in self.records if r.get("kind") == "round"]
        return max(done) if done else -1

    def network(self, j: int) -> MlpNetwork:
        if j not in self._nets:
            net = storage.load_checkpoint(self.file(self.require("round", j)["checkpoint"]))
            if net.layer_dims != self.layer_dims:
                raise ManifestIntegrityError(f"checkpoint {j} has dims {net.layer_dims}")
            self._nets[j] = net
        return self._nets[j]

    def checkpoint(self, j: int) -> Checkpoint:
        rec = self.require("round", j)
        return Checkpoint(j, self.network(j), rec["config_hash"], rec["parent_round"])

    def delta(self, s: int):
        vec = storage.load_params(self.file(self.require("round", s)["delta"]))
        if vec.layout != self.layer_dims:
            raise ManifestIntegrityError(f"delta {s} has layout {vec.layout}")
        return vec

    def prep_dir(self, s: int) -> Path:
        return self.root / "cache" / f"prep_{s:03d}"

    def work_gradsum(self, s: int, j: int, k: int) -> GradSumRecord:
        path = self.prep_dir(s) / f"g{j:03d}_k{k}.gsum"
        if not path.exists():
            raise ManifestIntegrityError(f"missing GradSum cache for X_{s}, checkpoint {j}, class {k}")
        return storage.load_gradsum(path, self.layer_dims)

    def estimate_gradsum(self, s: int, k: int) -> GradSumRecord:
        rel = self.require("prepare", s)["gradsum_index"].get(str(k))
        if rel is None:
            raise ManifestIntegrityError(f"no cached GradSum for round {s}, class {k}")
        return storage.load_gradsum(self.file(rel), self.layer_dims)

    def comparable(self) -> list[str]:
        """Canonical JSON of every record without timings (NaN-safe to compare)."""
        return [_dump(strip_timing(r)) for r in self.records]


# -- dataset / config plumbing ------------------------------------------------

def load_source(cfg: RunConfig) -> tuple[Dataset, str]:
    if cfg.dataset == "synthetic":
        spec = SyntheticSpec.random_means(
            cfg.classes, cfg.features, cfg.separation, cfg.sigma, cfg.samples_per_class, cfg.data_seed
        )
        ds_id = (f"synthetic-c{cfg.classes}-d{cfg.features}-sep{cfg.separation}-"
                 f"sig{cfg.sigma}-n{cfg.samples_per_class}-seed{cfg.data_seed}")
        return gen_synthetic(spec), ds_id
    parts = [read_idx(cfg.idx_images, cfg.idx_labels)]
    if cfg.idx_images_extra:
        parts.append(read_idx(cfg.idx_images_extra, cfg.idx_labels_extra))
    ds = concat(parts) if len(parts) > 1 else parts[0]
    return ds, f"idx:{os.path.basename(cfg.idx_images)}"


def layer_dims_for(cfg: RunConfig, ds: Dataset) -> tuple:
    return (ds.n_features, *cfg.hidden, ds.n_classes)


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(cfg.learning_rate, cfg.batch_size, cfg.epochs, cfg.seed)


# -- pre-update phase -------------------------------------------------------------

def _gsum_path(manifest, s, j, k) -> Path:
    return manifest.prep_dir(s) / f"g{j:03d}_k{k}.gsum"


def backfill_effects(manifest: RunManifest, s: int, k: int) -> list[EfSample]:
    """Calibration samples for class ``k`` at round ``s``: one per update i = 1..s-1.

    ``ef`` is the GradSum of X_s^k under N_{i-1} dotted with the update of
    round i; ``acc_delta`` is accuracy(N_i) - accuracy(N_{i-1}) on X_s^k,
    both read from the caches built for round ``s``.
    """
    recs = [manifest.work_gradsum(s, j, k) for j in range(s)]
    n = recs[0].sample_count
    out = []
    for i in range(1, s):
        ef = effect(recs[i - 1], manifest.delta(i))
        acc = (recs[i].succeeded_count - recs[i - 1].succeeded_count) / n
        out.append(EfSample(i, k, ef, acc))
    return out


def _fit_record(samples, k, s) -> dict:
    xs = [smp.ef for smp in samples]
    ys = [smp.acc_delta for smp in samples]
    rec = {
        "k": k,
        "samples": [[smp.round, smp.ef, smp.acc_delta] for smp in samples],
        "pearson": regressor.pearson(xs, ys),
    }
    try:
        model = regressor.calibrate(samples, k=k, round=s)
    except NoEstimateError as exc:
        rec.update(status="no-estimate", reason=str(exc))
        return rec
    rec.update(status="ok", slope=model.slope, intercept=model.intercept, r2=model.r2,
               n_used=model.n_used, n_removed=model.n_removed)
    return rec


def model_from_record(rec: dict) -> regressor.RegressionModel:
    if rec.get("status") != "ok":
        raise regressor.InsufficientDataError(rec.get("reason", "no regression model"))
    return regressor.RegressionModel(rec["slope"], rec["intercept"], rec["r2"],
                                     rec["n_used"], rec["n_removed"], rec["k"])


def prepare_round(manifest: RunManifest, s: int) -> dict:
    """Work done before training ``s``: extend caches to X_s, backfill, fit."""
    cfg = manifest.config
    ds = manifest.dataset
    plan = manifest.split
    bs = cfg.gradsum_batch
    x_ids = eval_set_ids(plan, s)
    eval_set = ds.subset(x_ids)
    new_part = ds.subset(new_eval_ids(plan, s))
    prep = manifest.prep_dir(s)
    if prep.exists():
        shutil.rmtree(prep)
    prep.mkdir(parents=True)
    (manifest.root / "est").mkdir(exist_ok=True)

    index, fits, correct, class_size, skipped = {}, [], {}, {}, []
    for k in range(manifest.n_classes):
        cls = eval_set.of_class(k)
        if len(cls) == 0:
            log.info("round %d: class %d has no evaluation samples, skipped", s, k)
            skipped.append(k)
            continue
        new_k = new_part.of_class(k)
        counts = []
        for j in range(s):
            net = manifest.network(j)
            prev = _gsum_path(manifest, s - 1, j, k) if s >= 2 else None
            if prev is not None and prev.exists():
                rec = storage.load_gradsum(prev, manifest.layer_dims)
                if len(new_k):
                    rec = merge_gradsum(rec, compute_gradsum(net, new_k, k, round=j, batch_size=bs))
            else:
                rec = compute_gradsum(net, cls, k, round=j, batch_size=bs)
            if rec.sample_count != len(cls):
                raise CacheConsistencyError(
                    f"round {s} class {k} checkpoint {j}: cache holds {rec.sample_count} samples, "
                    f"evaluation set has {len(cls)}"
                )
            storage.save_gradsum(_gsum_path(manifest, s, j, k), rec)
            counts.append(rec.succeeded_count)
        est_rel = f"est/round_{s:03d}_k{k}.gsum"
        shutil.copyfile(_gsum_path(manifest, s, s - 1, k), manifest.root / est_rel)
        index[str(k)] = est_rel
        correct[str(k)] = counts
        class_size[str(k)] = len(cls)
        fits.append(_fit_record(backfill_effects(manifest, s, k), k, s))

    check = _coherence_check(manifest, s, eval_set, skipped)
    record = {
        "kind": "prepare", "s": s, "eval_size": int(len(x_ids)),
        "class_size": class_size, "correct": correct, "skipped": skipped,
        "gradsum_index": index, "fits": fits, "coherence": check,
        "outlier_rule": OUTLIER_RULE,
    }
    return record


def _coherence_check(manifest, s, eval_set, skipped) -> dict:
    """Recompute one sampled (checkpoint, class) cache from scratch and compare."""
    classes = [k for k in range(manifest.n_classes) if k not in skipped]
    gen = stream(manifest.header["seed"], s, purpose="coherence")
    j = int(gen.integers(0, s))
    k = int(classes[int(gen.integers(0, len(classes)))])
    cached = manifest.work_gradsum(s, j, k)
    fresh = compute_gradsum(manifest.network(j), eval_set, k, round=j,
                            batch_size=manifest.config.gradsum_batch)
    scale = max(np.max(np.abs(fresh.vector.values)), 1e-300)
    err = float(np.max(np.abs(cached.vector.values - fresh.vector.values)) / scale)
    same_counts = (cached.failed_count, cached.succeeded_count) == (fresh.failed_count, fresh.succeeded_count)
    if err > COHERENCE_RTOL or not same_counts:
        raise CacheConsistencyError(
            f"round {s}: cached GradSum (checkpoint {j}, class {k}) deviates from recomputation "
            f"(rel {err:.3e}, counts match: {same_counts})"
        )
    return {"checkpoint": j, "k": k, "max_rel_err": err}


# -- post-update phase ------------------------------------------------------------

def estimate_round(manifest: RunManifest, s: int, k: int, delta=None) -> dict:
    """Timed estimate for class ``k`` after training ``s``.

    Only the dot product with the update and the regression prediction are
    inside the timed region; both inputs are loaded beforehand.  ``delta``
    defaults to the update recorded for round ``s``.
    """
    prep = manifest.require("prepare", s)
    fit = next((f for f in prep["fits"] if f["k"] == k), None)
    if fit is None:
        return {"k": k, "status": "skipped", "reason": "no evaluation samples"}
    gs = manifest.estimate_gradsum(s, k)
    if delta is None:
        delta = manifest.delta(s)
    entry = {"k": k, "r2": fit.get("r2"), "pearson": fit["pearson"],
             "n_used": fit.get("n_used"), "n_removed": fit.get("n_removed")}
    if fit["status"] != "ok":
        t0 = time.perf_counter()
        ef = effect(gs, delta)
        entry.update(status="no-estimate", reason=fit["reason"], ef=ef,
                     time_estimate_s=time.perf_counter() - t0)
        return entry
    model = model_from_record(fit)
    t0 = time.perf_counter()
    ef = effect(gs, delta)
    predicted = regressor.predict(model, ef)
    elapsed = time.perf_counter() - t0
    entry.update(status="ok", ef=ef, predicted=predicted, slope=model.slope,
                 intercept=model.intercept, time_estimate_s=elapsed)
    return entry


def _measure(manifest, s, prep) -> dict:
    """Ground truth: accuracy of N_{s-1} and N_s on X_s^k by full evaluation."""
    ds = manifest.dataset
    eval_set = ds.subset(eval_set_ids(manifest.split, s))
    net = manifest.network(s)
    out = {}
    for k in range(manifest.n_classes):
        key = str(k)
        if key not in prep["class_size"]:
            continue
        cls = eval_set.of_class(k)
        t0 = time.perf_counter()
        n_ok = int(np.count_nonzero(correct_mask(net, cls.features, cls.labels)))
        elapsed = time.perf_counter() - t0
        n = prep["class_size"][key]
        before = prep["correct"][key][s - 1]
        out[key] = {"acc_before": before / n, "acc_after": n_ok / n,
                    "actual": (n_ok - before) / n, "correct_after": n_ok,
                    "time_full_test_s": elapsed}
    return out


# -- driver -----------------------------------------------------------------------

def _train_step(manifest, s, cfg, tcfg, ds):
    plan = manifest.split
    net = manifest.network(s - 1) if s > 0 else init_network(manifest.layer_dims, cfg.seed)
    data = ds.subset(plan.train[s])
    loss_before = mean_loss(net, data)
    new_net, delta = train_round(net, data, tcfg, round_index=s)
    loss_after = mean_loss(new_net, data)
    (manifest.root / "ckpt").mkdir(exist_ok=True)
    (manifest.root / "delta").mkdir(exist_ok=True)
    ckpt_rel = f"ckpt/round_{s:03d}.ckpt"
    delta_rel = f"delta/round_{s:03d}.delta"
    storage.save_checkpoint(manifest.root / ckpt_rel, new_net)
    storage.save_params(manifest.root / delta_rel, delta)
    manifest._nets[s] = new_net
    return delta, {
        "kind": "round", "s": s, "checkpoint": ckpt_rel, "delta": delta_rel,
        "config_hash": tcfg.digest(), "parent_round": s - 1 if s > 0 else None,
        "train_size": int(len(data)), "train_loss_before": loss_before,
        "train_loss_after": loss_after,
    }


def _init_run(root: Path, cfg: RunConfig) -> RunManifest:
    ds, ds_id = load_source(cfg)
    plan = plan_splits(len(ds), cfg.rounds, cfg.ratio, cfg.seed, ids=ds.ids, dataset_id=ds_id)
    root.mkdir(parents=True, exist_ok=True)
    storage.save_dataset(root / "dataset.bin", ds)
    write_split(root / "splits.json", plan)
    manifest = RunManifest(root)
    manifest.append({
        "kind": "header", "version": MANIFEST_VERSION, "config": cfg.to_dict(),
        "seed": cfg.seed, "dataset": "dataset.bin", "dataset_id": ds_id,
        "splits": "splits.json", "layer_dims": list(layer_dims_for(cfg, ds)),
        "report": "report.jsonl", "outlier_rule": OUTLIER_RULE,
    })
    return manifest


def write_split(path, plan: SplitPlan):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        json.dump(plan.to_dict(), f)
    os.replace(tmp, path)


def run_incremental(cfg: RunConfig, out_dir, stop_after: Optional[int] = None) -> RunManifest:
    """Run (or resume) the full protocol in ``out_dir``.

    ``stop_after`` ends the call once round ``stop_after`` is recorded, which
    is how an interruption is simulated; calling again resumes.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    with FileLock(str(root / ".lock")):
        manifest = RunManifest(root)
        if not manifest.records:
            manifest = _init_run(root, cfg)
        elif manifest.config != cfg:
            raise ConfigurationError(f"{root} holds a run with a different configuration")
        tcfg = train_config(cfg)
        ds = manifest.dataset
        _cleanup_work(manifest)
        while True:
            last = manifest.records[-1]
            if last["kind"] == "header":
                s, step = 0, "round"
            elif last["kind"] == "round":
                if last["s"] >= cfg.rounds or (stop_after is not None and last["s"] >= stop_after):
                    break
                s, step = last["s"] + 1, "prepare"
            else:
                s, step = last["s"], "round"
            if step == "prepare":
                manifest.append(prepare_round(manifest, s))
                _drop_prep(manifest, s - 1)
                continue
            delta, rec = _train_step(manifest, s, cfg, tcfg, ds)
            if s >= 1:
                prep = manifest.require("prepare", s)
                estimates = [estimate_round(manifest, s, k, delta) for k in range(manifest.n_classes)]
                measured = _measure(manifest, s, prep)
                for e in estimates:
                    m = measured.get(str(e["k"]))
                    if m:
                        e.update(m)
                rec["estimates"] = estimates
            manifest.append(rec)
            write_report(manifest)
            log.info("round %d recorded", s)
        return manifest


def _drop_prep(manifest, s):
    if s >= 1 and manifest.prep_dir(s).exists():
        shutil.rmtree(manifest.prep_dir(s))


def _cleanup_work(manifest):
    """Remove cache directories not backed by the latest prepare record."""
    cache = manifest.root / "cache"
    if not cache.exists():
        return
    preps = [r["s"] for r in manifest.records if r.get("kind") == "prepare"]
    keep = manifest.prep_dir(max(preps)).name if preps else None
    for d in cache.iterdir():
        if d.name != keep:
            shutil.rmtree(d)


# -- reports ----------------------------------------------------------------------

def report_rows(manifest: RunManifest) -> list[dict]:
    rows = []
    for r in manifest.records:
        if r.get("kind") != "round" or "estimates" not in r:
            continue
        for e in r["estimates"]:
            if e.get("status") == "skipped":
                continue
            row = {"round": r["s"], **e}
            rows.append(row)
    return rows


def write_report(manifest: RunManifest):
    path = manifest.root / manifest.header["report"]
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w") as f:
        f.write(_dump({"kind": "notes", "outlier_rule": OUTLIER_RULE}) + "\n")
        for row in report_rows(manifest):
            f.write(_dump({"kind": "calibration", **row}) + "\n")
    os.replace(tmp, path)


def _nanmean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


def summarize(manifest: RunManifest) -> dict:
    """Per-class averages of R^2 / Pearson and estimate error over estimated rounds."""
    rows = [r for r in report_rows(manifest) if r["status"] == "ok"]
    per_class = {}
    for k in sorted({r["k"] for r in rows}):
        mine = [r for r in rows if r["k"] == k]
        errs = [abs(r["predicted"] - r["actual"]) for r in mine if "actual" in r]
        per_class[k] = {
            "rounds": len(mine),
            "mean_r2": float(np.mean([r["r2"] for r in mine])),
            "mean_pearson": _nanmean([r["pearson"] for r in mine]),
            "mean_abs_error": float(np.mean(errs)) if errs else math.nan,
        }
    return {"estimated_rows": len(rows), "per_class": per_class}


# -- benchmark --------------------------------------------------------------------

def _timed(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return median(times)


def benchmark_networks(before: MlpNetwork, after: MlpNetwork, models: dict, features, labels,
                       eval_sizes, repeats: int = 5, estimate_repeats: int = 51,
                       seed: int = 0, batch_size=None) -> list[dict]:
    """Estimate-path vs full re-test timing on evaluation sets of growing size.

    For each size a seeded row sample of ``features``/``labels`` is drawn
    (with replacement when the size exceeds the pool).  GradSum vectors are
    built outside the timed region.  The estimate path is the per-class dot
    product plus regression prediction; the re-test path classifies every
    sample with ``after`` and counts the correct ones.
    """
    if repeats < 5:
        raise ConfigurationError("benchmark needs at least 5 repetitions")
    delta = param_delta(flatten_params(before), flatten_params(after))
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    gen = stream(seed, purpose="benchmark")
    rows = []
    for size in eval_sizes:
        idx = gen.choice(len(labels), size=size, replace=size > len(labels))
        ds = Dataset(np.arange(size), features[idx], labels[idx], after.n_classes)
        caches = {}
        for k in sorted(models):
            if np.any(ds.labels == k):
                caches[k] = compute_gradsum(before, ds, k, round=0, batch_size=batch_size)

        def estimate():
            for k, gs in caches.items():
                regressor.predict(models[k], effect(gs, delta))

        def full_test():
            return int(np.count_nonzero(top_two(predict_proba(after, ds.features))[0] == ds.labels))

        rows.append({
            "size": int(size),
            "classes": len(caches),
            "estimate_seconds": _timed(estimate, estimate_repeats),
            "full_test_seconds": _timed(full_test, repeats),
        })
    return rows


def benchmark(manifest: RunManifest, eval_sizes, repeats: int = 5) -> list[dict]:
    """Timing table for a completed run, using its last update and models."""
    s = manifest.rounds_done()
    if s < 1:
        raise ManifestIntegrityError("benchmark needs at least one incremental round")
    prep = manifest.require("prepare", s)
    models = {}
    for fit in prep["fits"]:
        models[fit["k"]] = (model_from_record(fit) if fit["status"] == "ok"
                            else regressor.RegressionModel(0.0, 0.0, math.nan, 0, 0, fit["k"]))
    ds = manifest.dataset
    return benchmark_networks(manifest.network(s - 1), manifest.network(s), models,
                              ds.features, ds.labels, sorted(eval_sizes), repeats=repeats,
                              seed=manifest.header["seed"], batch_size=manifest.config.gradsum_batch)


def write_table(rows, stream_or_path):
    cols = ["size", "classes", "estimate_seconds", "full_test_seconds"]
    if hasattr(stream_or_path, "write"):
        w = csv.DictWriter(stream_or_path, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
        return
    with open(stream_or_path, "w", newline="") as f:
        write_table(rows, f)
