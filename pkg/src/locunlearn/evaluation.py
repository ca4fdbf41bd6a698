"""Accuracy, membership-inference score, and oracle-relative deltas."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import LinearSVC

from .errors import ConfigError
from .nn import Model, forward

FEATURE_KINDS = ("correctness", "confidence")
DELTA_METRICS = ("forget", "mia", "mia_confidence", "test", "retain")
_EVAL_CHUNK = 1024


def _logits(model: Model, x) -> np.ndarray:
    return np.concatenate(
        [forward(model, x[i : i + _EVAL_CHUNK]) for i in range(0, len(x), _EVAL_CHUNK)]
    )


def accuracy(model: Model, view) -> float:
    """Fraction of argmax-correct predictions (ties -> lowest class index)."""
    if len(view) == 0:
        raise ConfigError("accuracy of an empty set is undefined")
    x, y = view.take()
    return float(np.mean(np.argmax(_logits(model, x), axis=1) == y))


# ------------------------------------------------------------------------ MIA


@dataclass
class MIAResult:
    feature_kind: str
    tn: int
    forget_size: int
    score: float
    attacker_train_acc: float


def attack_features(model: Model, x, kind: str, num_classes: int | None = None) -> np.ndarray:
    """Per-example attacker input.

    correctness: one-hot of the predicted class index.
    confidence: softmax probability of the predicted class, shape (n, 1).
    """
    logits = _logits(model, x).astype(np.float64)
    if kind == "correctness":
        c = logits.shape[1] if num_classes is None else num_classes
        return np.eye(c)[np.argmax(logits, axis=1)]
    if kind == "confidence":
        z = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        return probs.max(axis=1, keepdims=True)
    raise ConfigError(f"unknown MIA feature kind {kind!r}")


def default_attacker():
    """Standardize, then a linear SVM solved in the primal.

    Squared hinge with a large C sits close to the hard-margin separator on
    separable data. The primal Newton solver is deterministic and its
    runtime does not blow up on overlapping classes the way libsvm's dual
    solver does at large C.
    """
    return make_pipeline(
        StandardScaler(),
        LinearSVC(C=1e4, loss="squared_hinge", dual=False, tol=1e-8,
                  intercept_scaling=10.0, max_iter=10_000),
    )


def mia_from_features(seen, unseen, forget, kind: str = "confidence", attacker=None) -> MIAResult:
    """Fit seen(1)/unseen(0) on calibration features; TN = forget predicted unseen."""
    if len(forget) == 0:
        raise ConfigError("forget set is empty")
    seen = np.asarray(seen, dtype=np.float64).reshape(len(seen), -1)
    unseen = np.asarray(unseen, dtype=np.float64).reshape(len(unseen), -1)
    forget = np.asarray(forget, dtype=np.float64).reshape(len(forget), -1)
    x = np.concatenate([seen, unseen])
    y = np.concatenate([np.ones(len(seen), dtype=int), np.zeros(len(unseen), dtype=int)])
    clf = default_attacker() if attacker is None else attacker
    if np.all(x == x[0]):
        warnings.warn("MIA calibration features are all identical", stacklevel=2)
    clf.fit(x, y)
    train_acc = float(np.mean(clf.predict(x) == y))
    if train_acc <= max(y.mean(), 1 - y.mean()):
        warnings.warn(
            f"MIA attacker does no better than a constant guess (train acc {train_acc:.3f})",
            stacklevel=2,
        )
    tn = int(np.sum(np.asarray(clf.predict(forget)) == 0))
    return MIAResult(kind, tn, len(forget), tn / len(forget), train_acc)


def mia_score(model: Model, calib_seen, calib_unseen, forget, feature_kind="correctness",
              attacker=None) -> MIAResult:
    """MIA score TN/|S| of ``model`` on the forget view.

    ``calib_seen`` is a retain subset matched to the test histogram,
    ``calib_unseen`` the test set view.
    """
    c = forget.num_classes
    feats = [attack_features(model, v.take()[0], feature_kind, c)
             for v in (calib_seen, calib_unseen, forget)]
    return mia_from_features(*feats, kind=feature_kind, attacker=attacker)


# --------------------------------------------------------------------- reports


@dataclass
class MetricsReport:
    forget_acc: float
    retain_acc: float
    test_acc: float
    mia: dict = field(default_factory=dict)
    run_id: str = ""
    seed: int = 0

    def __post_init__(self):
        for name in ("forget_acc", "retain_acc", "test_acc"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} outside [0, 1]")

    def metric(self, name: str) -> float:
        if name == "forget":
            return self.forget_acc
        if name == "retain":
            return self.retain_acc
        if name == "test":
            return self.test_acc
        if name == "mia":
            return self.mia["correctness"].score
        if name == "mia_confidence":
            return self.mia["confidence"].score
        raise KeyError(name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mia"] = {k: asdict(v) for k, v in self.mia.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["mia"] = {k: MIAResult(**v) for k, v in d.get("mia", {}).items()}
        return cls(**d)


def evaluate_model(model: Model, retain, forget, test, calib_seen, run_id="", seed=0,
                   feature_kinds=FEATURE_KINDS) -> MetricsReport:
    mia = {k: mia_score(model, calib_seen, test, forget, k) for k in feature_kinds}
    return MetricsReport(
        forget_acc=accuracy(model, forget),
        retain_acc=accuracy(model, retain),
        test_acc=accuracy(model, test),
        mia=mia,
        run_id=run_id,
        seed=seed,
    )


def mean_ci(values) -> tuple:
    """Mean and 95% CI half-width of the mean.

    Student-t below 30 samples, normal from 30 on; NaN half-width for n=1.
    """
    v = np.asarray(sorted(values), dtype=np.float64)
    n = v.size
    if n == 0:
        raise ConfigError("no values to aggregate")
    mean = float(v.mean())
    if n == 1:
        return mean, math.nan
    sem = float(v.std(ddof=1)) / math.sqrt(n)
    q = stats.norm.ppf(0.975) if n >= 30 else stats.t.ppf(0.975, n - 1)
    return mean, float(q * sem)


@dataclass
class DeltaReport:
    per_seed: dict  # seed -> {metric: delta in points}
    mean: dict
    ci95: dict

    def to_dict(self) -> dict:
        return {"per_seed": {str(k): v for k, v in self.per_seed.items()},
                "mean": self.mean, "ci95": self.ci95}


def delta_report(oracle: list, unlearned: list, metrics=DELTA_METRICS) -> DeltaReport:
    """Per metric: 100 * (oracle - unlearned), paired by seed."""
    by_seed = {r.seed: r for r in oracle}
    if len(by_seed) != len(oracle):
        raise ConfigError("duplicate seeds among oracle reports")
    per_seed = {}
    for u in sorted(unlearned, key=lambda r: r.seed):
        if u.seed not in by_seed:
            raise ConfigError(f"no oracle report for seed {u.seed}")
        o = by_seed[u.seed]
        per_seed[u.seed] = {m: 100.0 * (o.metric(m) - u.metric(m))
                            for m in metrics if _has(o, m) and _has(u, m)}
    if not per_seed:
        raise ConfigError("no paired reports")
    names = [m for m in metrics if all(m in d for d in per_seed.values())]
    mean, ci = {}, {}
    for m in names:
        mean[m], ci[m] = mean_ci([d[m] for d in per_seed.values()])
    return DeltaReport(per_seed, mean, ci)


def _has(report: MetricsReport, metric: str) -> bool:
    try:
        report.metric(metric)
    except KeyError:
        return False
    return True


SUMMARY_COLUMNS = ("strategy", "algorithm", "alpha", "metric", "mean", "ci95", "n")


def aggregate_runs(rows) -> list:
    """Collapse per-seed rows into per-(strategy, algorithm, alpha, metric) mean +- CI.

    Each input row is a dict with ``strategy``, ``algorithm``, ``alpha``,
    ``seed`` and ``metrics`` (name -> value). Output order is sorted, so it
    does not depend on the input order.
    """
    cells = {}
    for r in rows:
        for metric, value in r["metrics"].items():
            key = (r["strategy"], r["algorithm"], float(r["alpha"]), metric)
            cells.setdefault(key, []).append((r["seed"], float(value)))
    out = []
    for key in sorted(cells):
        vals = [v for _, v in sorted(cells[key])]
        mean, ci = mean_ci(vals)
        out.append(dict(zip(SUMMARY_COLUMNS, (*key, mean, ci, len(vals)))))
    return out


def _fmt(x: float) -> str:
    return "n/a" if math.isnan(x) else f"{x:.6f}"


def summary_csv(summary: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in summary:
        w.writerow([r["strategy"], r["algorithm"], f"{r['alpha']:g}", r["metric"],
                    _fmt(r["mean"]), _fmt(r["ci95"]), r["n"]])
    return buf.getvalue()


def read_summary_csv(text: str) -> list:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({
            "strategy": r["strategy"], "algorithm": r["algorithm"], "alpha": float(r["alpha"]),
            "metric": r["metric"],
            "mean": math.nan if r["mean"] == "n/a" else float(r["mean"]),
            "ci95": math.nan if r["ci95"] == "n/a" else float(r["ci95"]),
            "n": int(r["n"]),
        })
    return rows
