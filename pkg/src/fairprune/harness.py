"""Cross-validated experiments: train, perturb, prune, evaluate, report.

Every random choice inside a run is drawn from a seed derived from the
master seed, the fold index and a purpose code (see :func:`derive_seed`),
so folds are independent of each other and of the execution order.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import __version__
from .bounds import audit_bounds, hoeffding_class
from .dataset import Dataset, DatasetSchema, kfold_split, load_csv, perturb_sensitive, synth_biased
from .ensemble import EnsembleProfile, build_profile, train_ensemble
from .errors import ConstantVector, DataError, FairPruneError, InvalidInput, InvariantViolation, ShapeMismatch
from .metrics import classification_metrics, group_fairness, pearson
from .pruning import ALGORITHMS, MemberPool, PruneConfig, epaf_c, epaf_d, prune

METRICS = ("accuracy", "f1", "precision", "recall", "specificity", "DR", "DP", "EO", "PQP")
# lower is better for these; the rest are accuracy-style scores
LOWER_IS_BETTER = {"DR", "DP", "EO", "PQP", "delta_accuracy", "size"}

PURPOSE = {"train": 1, "perturb_train": 2, "perturb_test": 3, "prune": 4, "split": 5}


def derive_seed(master: int, fold: int, purpose: str, index: int = 0) -> int:
    """Seed for one random step: hash of ``(master, fold, purpose, index)``."""
    ss = np.random.SeedSequence([int(master), int(fold), PURPOSE[purpose], int(index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class PrunerSpec:
    algorithm: str
    k: int = 5
    lam: float = 0.5
    n_m: int = 2
    iterations_multiplier: int = 1
    name: str | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidInput(f"unknown pruning algorithm {self.algorithm!r}")
        if self.name is None:
            self.name = self.algorithm.upper()


@dataclass
class ExperimentConfig:
    dataset: dict
    trainer: str = "bagging"
    m: int = 11
    max_depth: int = 4
    pruners: list = field(default_factory=list)
    k_folds: int = 5
    seed: int = 0
    metrics: tuple = METRICS + ("bounds",)
    group_attr: int | str = 0
    delta: float = 0.05
    output_dir: str | None = None

    def __post_init__(self):
        self.pruners = [p if isinstance(p, PrunerSpec) else PrunerSpec(**p) for p in self.pruners]
        self.metrics = tuple(self.metrics)
        if self.k_folds < 2:
            raise InvalidInput("k_folds must be >= 2")
        if not self.metrics:
            raise InvalidInput("enable at least one metric")
        unknown = set(self.metrics) - set(METRICS) - {"bounds"}
        if unknown:
            raise InvalidInput(f"unknown metrics: {sorted(unknown)}")
        if "synthetic" not in self.dataset and "csv" not in self.dataset:
            raise InvalidInput("dataset needs either a 'synthetic' spec or 'csv' + 'schema' paths")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        ens = doc.pop("ensemble", {})
        pruners = []
        for p in doc.pop("pruners", []):
            p = dict(p)
            if "lambda" in p:
                p["lam"] = p.pop("lambda")
            pruners.append(p)
        return cls(pruners=pruners, **{**{k: v for k, v in ens.items() if k in ("trainer", "m", "max_depth")}, **doc})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise DataError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {path} is not valid JSON: {exc}") from exc
        try:
            return cls.from_dict(doc)
        except TypeError as exc:
            raise DataError(f"malformed config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["metrics"] = list(self.metrics)
        for p in out["pruners"]:
            p["lambda"] = p.pop("lam")
        return out

    def label(self) -> str:
        ds = self.dataset
        if "name" in ds:
            return ds["name"]
        if "synthetic" in ds:
            s = ds["synthetic"]
            return f"synth(n={s.get('n', 600)},bias={s.get('bias', 0.5)})"
        return Path(ds["csv"]).stem


def load_dataset(spec: dict, base_dir=None) -> Dataset:
    if "synthetic" in spec:
        s = spec["synthetic"]
        return synth_biased(int(s.get("n", 600)), float(s.get("bias", 0.5)), int(s.get("d_g", 5)), int(s.get("seed", 0)))
    base = Path(base_dir) if base_dir else Path(".")
    csv_path = base / spec["csv"]
    schema = spec["schema"]
    schema = DatasetSchema.from_dict(schema) if isinstance(schema, dict) else DatasetSchema.load(base / schema)
    return load_csv(csv_path, schema)


@dataclass
class FoldResult:
    fold: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    methods: dict

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "train_size": int(self.train_indices.shape[0]),
            "test_size": int(self.test_indices.shape[0]),
            "methods": self.methods,
        }


def evaluate(profile: EnsembleProfile, d: Dataset, group_attr: int, metrics, delta: float = 0.05) -> dict:
    """Scores of one (sub-)ensemble on a held-out sample with its perturbed twin."""
    vo, vp = profile.vote_orig, profile.vote_pert
    cls = classification_metrics(vo, d.labels)
    rec = {k: cls[k] for k in ("accuracy", "f1", "precision", "recall", "specificity") if k in metrics}
    dr = float(np.mean(vo != vp))
    if "DR" in metrics:
        rec["DR"] = dr
    binary = d.n_classes == 2
    if binary and d.n_sensitive:
        g = d.group(group_attr)
        for name in ("DP", "EO", "PQP"):
            if name in metrics:
                rec[name] = group_fairness(name, vo, d.labels, g).value
    else:
        for name in ("DP", "EO", "PQP"):
            if name in metrics:
                rec[name] = None
    acc_pert = float(np.mean(vp == d.labels))
    rec["accuracy_perturbed"] = acc_pert
    rec["delta_accuracy"] = float(np.mean(vo == d.labels)) - acc_pert
    rec["size"] = profile.m
    if "bounds" in metrics:
        rec["bounds"] = audit_bounds(None, profile).to_dict()
        rec["DR_pac_bound"] = dr + hoeffding_class(d.n, delta, profile.m)
    return rec


def _attr_index(d: Dataset, attr) -> int:
    if isinstance(attr, str):
        try:
            return d.sensitive_names.index(attr)
        except ValueError:
            raise DataError(f"unknown sensitive attribute {attr!r}") from None
    return int(attr)


def run_fold(cfg: ExperimentConfig, d: Dataset, plan, fold: int) -> FoldResult:
    train_idx, test_idx = plan.train_indices(fold), plan.test_indices(fold)
    train, test = d.subset(train_idx), d.subset(test_idx)
    attr = _attr_index(d, cfg.group_attr)
    ens = train_ensemble(train, cfg.trainer, cfg.m, cfg.max_depth, derive_seed(cfg.seed, fold, "train"))
    test_prof = build_profile(ens, test, perturb_sensitive(test, derive_seed(cfg.seed, fold, "perturb_test")))
    methods = {"ensemble": evaluate(test_prof, test, attr, cfg.metrics, cfg.delta)}
    if cfg.pruners:
        train_prof = build_profile(ens, train, perturb_sensitive(train, derive_seed(cfg.seed, fold, "perturb_train")))
        pool = MemberPool(train_prof, train.labels)
        for j, p in enumerate(cfg.pruners):
            pc = PruneConfig(
                k=min(p.k, ens.m),
                lam=p.lam,
                n_m=min(p.n_m, ens.m),
                seed=derive_seed(cfg.seed, fold, "prune", j),
                iterations_multiplier=p.iterations_multiplier,
            )
            res = prune(pool, p.algorithm, pc)
            rec = evaluate(test_prof.restrict(res.selected), test, attr, cfg.metrics, cfg.delta)
            rec["selected"] = list(res.selected)
            rec["train_loss"] = res.loss
            methods[p.name] = rec
    return FoldResult(fold, train_idx, test_idx, methods)


@dataclass
class Report:
    config: ExperimentConfig
    dataset_label: str
    attribute: str
    folds: list
    methods: list
    summary: dict
    ranks: dict
    correlations: dict

    def to_dict(self) -> dict:
        return {
            "tool_version": __version__,
            "config": self.config.to_dict(),
            "dataset": self.dataset_label,
            "attribute": self.attribute,
            "methods": self.methods,
            "summary": self.summary,
            "ranks": self.ranks,
            "correlations": self.correlations,
            "folds": [f.to_dict() for f in self.folds],
        }

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


SCALAR_KEYS = METRICS + ("accuracy_perturbed", "delta_accuracy", "size", "DR_pac_bound", "train_loss")


def mean_std(values):
    """Mean and sample std of the defined values; ``(None, None)`` if none are defined."""
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return None, None
    mean = math.fsum(vals) / len(vals)
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return mean, std


def summarize(folds, methods) -> dict:
    out = {}
    for name in methods:
        rec = {}
        keys = [k for k in SCALAR_KEYS if k in folds[0].methods[name]]
        for key in keys:
            mean, std = mean_std(f.methods[name][key] for f in folds)
            rec[key] = {"mean": mean, "std": std, "defined_folds": sum(f.methods[name][key] is not None for f in folds)}
        if "bounds" in folds[0].methods[name]:
            b = [f.methods[name]["bounds"] for f in folds]
            rec["bound_flags"] = {
                "first_order": all(x["first_order_holds"] for x in b),
                "second_order": all(x["second_order_holds"] for x in b),
                "c_tandem": all(x["c_tandem_holds"] for x in b if x["c_tandem_holds"] is not None),
            }
        out[name] = rec
    return out


def friedman_avg_rank(scores, lower_is_better: bool = True) -> np.ndarray:
    """Mean rank of each method (rows) across datasets (columns); ties share averaged ranks."""
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 2 or S.shape[1] < 1:
        raise ShapeMismatch("need a methods x datasets matrix with >= 2 methods and >= 1 dataset")
    if not np.all(np.isfinite(S)):
        raise InvalidInput("scores must be finite")
    R = rankdata(S if lower_is_better else -S, method="average", axis=0)
    return R.mean(axis=1)


def _ranks_for(summary, methods) -> dict:
    out = {}
    if len(methods) < 2:
        return out
    for key in METRICS + ("delta_accuracy",):
        col = [summary[m].get(key, {}).get("mean") for m in methods]
        if any(v is None for v in col):
            continue
        r = friedman_avg_rank(np.array(col).reshape(-1, 1), key in LOWER_IS_BETTER)
        out[key] = dict(zip(methods, r.tolist()))
    return out


def _points(reports, unit: str):
    """(measure -> values, delta_accuracy values) pooled over reports."""
    rows = []
    for rep in reports:
        if unit == "fold":
            for f in rep.folds:
                rows.extend(f.methods.values())
        else:
            for m in rep.methods:
                rows.append({k: v["mean"] for k, v in rep.summary[m].items() if isinstance(v, dict) and "mean" in v})
    return rows


def correlation_study(reports, measures=("DR", "DP", "EO", "PQP")) -> dict:
    """Pearson coefficient of each fairness measure against the accuracy variation.

    Two pooling units are reported: every (fold, method) record, and every
    per-method mean. Points where the measure is undefined are dropped
    pairwise; a constant column yields ``None``.
    """
    if isinstance(reports, Report):
        reports = [reports]
    out = {}
    for unit in ("fold", "dataset-mean"):
        rows = _points(reports, unit)
        table = {}
        for meas in measures:
            pairs = [(r.get(meas), r.get("delta_accuracy")) for r in rows]
            pairs = [(a, b) for a, b in pairs if a is not None and b is not None]
            if len(pairs) < 2:
                table[meas] = None
                continue
            x, y = zip(*pairs)
            try:
                table[meas] = pearson(x, y)
            except ConstantVector:
                table[meas] = None
        out[unit] = table
    return out


def run_experiment(cfg: ExperimentConfig, threads: int = 1, base_dir=None, dataset: Dataset | None = None) -> Report:
    d = dataset if dataset is not None else load_dataset(cfg.dataset, base_dir)
    plan = kfold_split(d.n, cfg.k_folds, derive_seed(cfg.seed, 0, "split"))
    attr = _attr_index(d, cfg.group_attr) if d.n_sensitive else None

    def one(fold):
        try:
            return run_fold(cfg, d, plan, fold)
        except FairPruneError as exc:
            exc.args = (f"fold {fold}: {exc}",)
            raise

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            folds = list(ex.map(one, range(cfg.k_folds)))
    else:
        folds = [one(f) for f in range(cfg.k_folds)]
    methods = list(folds[0].methods)
    summary = summarize(folds, methods)
    rep = Report(
        config=cfg,
        dataset_label=cfg.label(),
        attribute=d.sensitive_names[attr] if attr is not None else "",
        folds=folds,
        methods=methods,
        summary=summary,
        ranks=_ranks_for(summary, methods),
        correlations={},
    )
    rep.correlations = correlation_study(rep)
    return rep


def _cell(stat):
    if stat is None or stat.get("mean") is None:
        return ""
    return f"{stat['mean']:.4f}±{stat['std']:.4f}"


def write_tables(reports, out_dir) -> list[Path]:
    """One CSV per metric: rows are dataset x attribute, columns are methods."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = []
    for rep in reports:
        methods += [m for m in rep.methods if m not in methods]
    written = []
    for key in METRICS + ("delta_accuracy", "size"):
        if not any(key in rep.summary[m] for rep in reports for m in rep.methods):
            continue
        path = out_dir / f"table_{key}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "attribute", *methods])
            for rep in reports:
                w.writerow([rep.dataset_label, rep.attribute, *(_cell(rep.summary.get(m, {}).get(key)) for m in methods)])
        written.append(path)
    return written


def write_report(rep: Report, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = out_dir / "summary.json"
    summary.write_text(rep.to_json(), encoding="utf-8")
    folds = out_dir / "folds.csv"
    with folds.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "method", *SCALAR_KEYS])
        for f in rep.folds:
            for name, rec in f.methods.items():
                w.writerow([f.fold, name, *("" if rec.get(k) is None else repr(rec[k]) for k in SCALAR_KEYS)])
    return [summary, folds, *write_tables([rep], out_dir)]


def epaf_speedup(pool: MemberPool, k: int, lam: float, n_m: int, seed: int = 0, n_jobs: int | None = None, repeats: int = 3) -> dict:
    """Wall-clock comparison of the centralised and distributed greedy pruners."""
    n_jobs = n_jobs or n_m

    def best_of(fn):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return min(times)

    t_c = best_of(lambda: epaf_c(pool, k, lam))
    cfg = PruneConfig(k=k, lam=lam, n_m=n_m, seed=seed)
    t_d = best_of(lambda: epaf_d(pool, cfg, n_jobs=n_jobs))
    return {"epaf_c_seconds": t_c, "epaf_d_seconds": t_d, "speedup": t_c / t_d if t_d > 0 else None, "n_m": n_m}


def check_report(rep: Report) -> None:
    """Raise :class:`InvariantViolation` if a report breaks its structural contracts."""
    n = sum(int(f.test_indices.shape[0]) for f in rep.folds)
    for f in rep.folds:
        if np.intersect1d(f.train_indices, f.test_indices).size:
            raise InvariantViolation(f"fold {f.fold}: train and test rows overlap")
        if f.train_indices.shape[0] + f.test_indices.shape[0] != n:
            raise InvariantViolation(f"fold {f.fold}: train + test does not cover the data")
    tests = np.sort(np.concatenate([f.test_indices for f in rep.folds]))
    if not np.array_equal(tests, np.arange(n)):
        raise InvariantViolation("test folds do not partition the rows")
    for name in rep.methods:
        for key, stat in rep.summary[name].items():
            if not isinstance(stat, dict) or stat.get("mean") is None:
                continue
            vals = [f.methods[name][key] for f in rep.folds if f.methods[name][key] is not None]
            if abs(stat["mean"] - float(np.mean(vals))) > 1e-12:
                raise InvariantViolation(f"{name}/{key}: summary mean disagrees with fold values")
