"""SLO violation diagnosis from low-level server metrics.

An epoch is a violation when its average response time exceeds the agreed
threshold.  A Gaussian naive Bayes classifier maps the per-epoch metric
vector to the SLO state; its per-metric log-likelihood contributions form a
*signature* of each violation, with positive contributions marking the
abnormal metrics.  Signatures are clustered and indexed so recurring
problems can be recognized and past annotations retrieved.

Metric logs are CSV: header ``ts,art_ms,<metric_1>,...,<metric_k>`` followed
by numeric rows.  Catalogs persist as JSON lines
``{ts, attributions, abnormal, annotation}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "MetricDataset",
    "SloConfig",
    "DiagnosisModel",
    "Classification",
    "Signature",
    "CatalogEntry",
    "SignatureCatalog",
    "ComparisonOutcome",
    "Ensemble",
    "EnsembleMember",
    "VARIANCE_FLOOR",
    "label_slo",
    "fit_classifier",
    "classify",
    "predict",
    "signature",
    "mcnemar_p_value",
    "accuracy_significant",
    "select_features",
    "cluster_signatures",
    "retrieve",
    "ensemble_fit",
    "ensemble_classify",
    "bootstrap_feature_confidence",
    "load_metrics_csv",
    "write_metrics_csv",
    "synth_metrics",
]

# Constant metrics must not collapse a class-conditional to a point mass.
VARIANCE_FLOOR = 1e-6


@dataclass(eq=False)
class MetricDataset:
    """Epoch-stamped server metrics with the monitored average response time."""

    timestamps: np.ndarray  # (n,)
    metrics: np.ndarray  # (n, k)
    art: np.ndarray  # (n,) average response time, milliseconds
    metric_names: tuple[str, ...]

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.metrics = np.asarray(self.metrics, dtype=float)
        self.art = np.asarray(self.art, dtype=float)
        n = self.timestamps.size
        if self.metrics.ndim != 2 or self.metrics.shape[0] != n or self.art.size != n:
            raise ValueError("timestamps, metrics and art must agree on epoch count")
        if self.metrics.shape[1] != len(self.metric_names) or not self.metric_names:
            raise ValueError("metric_names must match the metric column count")
        if n and np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")

    @property
    def n_epochs(self) -> int:
        return int(self.timestamps.size)

    @property
    def n_metrics(self) -> int:
        return int(self.metrics.shape[1])


@dataclass(frozen=True)
class SloConfig:
    threshold: float  # milliseconds

    def __post_init__(self) -> None:
        if not self.threshold > 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")


def label_slo(dataset: MetricDataset, config: SloConfig) -> np.ndarray:
    """Boolean labels per epoch: True where ART strictly exceeds the threshold."""
    return dataset.art > config.threshold


@dataclass(eq=False)
class DiagnosisModel:
    """Gaussian naive Bayes over a feature subset.

    prior is (P(compliant), P(violation)); per-feature arrays are aligned
    with feature_set order.
    """

    feature_set: tuple[int, ...]
    prior: tuple[float, float]
    mean_compliant: np.ndarray
    var_compliant: np.ndarray
    mean_violation: np.ndarray
    var_violation: np.ndarray
    metric_names: tuple[str, ...]


def fit_classifier(
    dataset: MetricDataset,
    labels: np.ndarray,
    feature_set: Sequence[int] | None = None,
) -> DiagnosisModel:
    """Maximum-likelihood Gaussian naive Bayes with a variance floor.

    ``labels`` is the boolean violation vector; both classes must be present.
    """
    y = np.asarray(labels, dtype=bool)
    if y.size != dataset.n_epochs:
        raise ValueError("labels must align with the dataset")
    if y.all() or not y.any():
        raise ValueError("need both classes")
    if feature_set is None:
        features = tuple(range(dataset.n_metrics))
    else:
        features = tuple(sorted(set(int(i) for i in feature_set)))
    if not features:
        raise ValueError("feature set must be non-empty")
    if features[0] < 0 or features[-1] >= dataset.n_metrics:
        raise ValueError("feature index out of range")

    cols = dataset.metrics[:, features]
    viol, comp = cols[y], cols[~y]
    return DiagnosisModel(
        feature_set=features,
        prior=(float((~y).mean()), float(y.mean())),
        mean_compliant=comp.mean(axis=0),
        var_compliant=np.maximum(comp.var(axis=0), VARIANCE_FLOOR),
        mean_violation=viol.mean(axis=0),
        var_violation=np.maximum(viol.var(axis=0), VARIANCE_FLOOR),
        metric_names=dataset.metric_names,
    )


def _attribution_matrix(model: DiagnosisModel, rows: np.ndarray) -> np.ndarray:
    """Per-metric log-likelihood difference toward the violation class,
    expanded to full metric width (zeros off the feature set)."""
    x = rows[:, model.feature_set]
    log_v = -0.5 * (np.log(2 * math.pi * model.var_violation)
                    + (x - model.mean_violation) ** 2 / model.var_violation)
    log_c = -0.5 * (np.log(2 * math.pi * model.var_compliant)
                    + (x - model.mean_compliant) ** 2 / model.var_compliant)
    out = np.zeros((rows.shape[0], len(model.metric_names)))
    out[:, model.feature_set] = log_v - log_c
    return out


def _check_vector(model: DiagnosisModel, x: Sequence[float] | np.ndarray) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.size != len(model.metric_names):
        raise ValueError(f"metric vector must have {len(model.metric_names)} entries")
    for i in model.feature_set:
        if not np.isfinite(v[i]):
            raise ValueError(f"missing value for metric '{model.metric_names[i]}'")
    return v


@dataclass(frozen=True)
class Classification:
    violation: bool
    log_odds: float
    posterior: tuple[float, float]  # (P(compliant|x), P(violation|x))


def classify(model: DiagnosisModel, x: Sequence[float] | np.ndarray) -> Classification:
    """Score one metric vector.  log_odds is the log posterior ratio
    violation:compliant; the class is violation iff log_odds > 0."""
    v = _check_vector(model, x)
    attr = _attribution_matrix(model, v[None, :])[0]
    log_odds = math.log(model.prior[1]) - math.log(model.prior[0]) + float(attr.sum())
    p_violation = 1.0 / (1.0 + math.exp(-log_odds)) if abs(log_odds) < 700 else float(log_odds > 0)
    return Classification(
        violation=log_odds > 0,
        log_odds=log_odds,
        posterior=(1.0 - p_violation, p_violation),
    )


def predict(model: DiagnosisModel, rows: np.ndarray) -> np.ndarray:
    """Vectorized violation predictions for a (n, k) metric matrix."""
    attr = _attribution_matrix(model, np.asarray(rows, dtype=float))
    log_prior = math.log(model.prior[1]) - math.log(model.prior[0])
    return attr.sum(axis=1) + log_prior > 0


def _posterior_violation(model: DiagnosisModel, rows: np.ndarray) -> np.ndarray:
    attr = _attribution_matrix(model, np.asarray(rows, dtype=float))
    log_odds = attr.sum(axis=1) + math.log(model.prior[1]) - math.log(model.prior[0])
    return 1.0 / (1.0 + np.exp(-np.clip(log_odds, -700, 700)))


@dataclass(eq=False)
class Signature:
    """Per-metric attribution of one epoch's classification.

    attributions[i] > 0 means metric i pushed the epoch toward the violation
    class; those metrics are flagged abnormal.  Metrics outside the model's
    feature set carry attribution 0.
    """

    attributions: np.ndarray
    abnormal: np.ndarray
    epoch: float


def signature(model: DiagnosisModel, x: Sequence[float] | np.ndarray, epoch: float = 0.0) -> Signature:
    """Signature of one epoch.  The attributions satisfy
    sum_i a_i + log(prior ratio) == classify(...).log_odds exactly."""
    v = _check_vector(model, x)
    attr = _attribution_matrix(model, v[None, :])[0]
    attr.flags.writeable = False
    return Signature(attributions=attr, abnormal=attr > 0, epoch=float(epoch))


def mcnemar_p_value(n01: int, n10: int) -> float:
    """Exact two-sided McNemar p-value from discordant-prediction counts."""
    if n01 < 0 or n10 < 0:
        raise ValueError("discordant counts must be >= 0")
    n = n01 + n10
    if n == 0:
        return 1.0
    k = min(n01, n10)
    tail = sum(math.comb(n, i) for i in range(k + 1)) * 0.5**n
    return min(1.0, 2.0 * tail)


@dataclass(frozen=True)
class ComparisonOutcome:
    better: str  # "a" | "b" | "tie"
    significant: bool
    p_value: float
    n01: int  # a correct, b wrong
    n10: int  # a wrong, b correct


def accuracy_significant(
    model_a: DiagnosisModel,
    model_b: DiagnosisModel,
    dataset: MetricDataset,
    labels: np.ndarray,
    alpha: float = 0.05,
) -> ComparisonOutcome:
    """McNemar exact test on whether two models' accuracies differ on the
    same evaluation epochs."""
    y = np.asarray(labels, dtype=bool)
    if y.size == 0:
        raise ValueError("evaluation set must be non-empty")
    ok_a = predict(model_a, dataset.metrics) == y
    ok_b = predict(model_b, dataset.metrics) == y
    n01 = int(np.count_nonzero(ok_a & ~ok_b))
    n10 = int(np.count_nonzero(~ok_a & ok_b))
    p = mcnemar_p_value(n01, n10)
    better = "tie" if n01 == n10 else ("a" if n01 > n10 else "b")
    return ComparisonOutcome(better=better, significant=p <= alpha, p_value=p, n01=n01, n10=n10)


def _contiguous_folds(n: int, n_folds: int) -> list[np.ndarray]:
    return [f for f in np.array_split(np.arange(n), n_folds) if f.size]


def _cv_predictions(
    dataset: MetricDataset, labels: np.ndarray, features: Sequence[int], folds: list[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Held-out predictions over all folds whose training part has both
    classes; returns (evaluated indices, predictions)."""
    y = np.asarray(labels, dtype=bool)
    idx_parts, pred_parts = [], []
    for fold in folds:
        train = np.setdiff1d(np.arange(dataset.n_epochs), fold)
        y_train = y[train]
        if y_train.all() or not y_train.any():
            continue
        sub = MetricDataset(dataset.timestamps[train], dataset.metrics[train],
                            dataset.art[train], dataset.metric_names)
        model = fit_classifier(sub, y_train, features)
        idx_parts.append(fold)
        pred_parts.append(predict(model, dataset.metrics[fold]))
    if not idx_parts:
        raise ValueError("no usable folds: need both classes in every training split")
    return np.concatenate(idx_parts), np.concatenate(pred_parts)


def select_features(
    dataset: MetricDataset,
    labels: np.ndarray,
    alpha: float = 0.05,
    max_features: int = 8,
    n_folds: int = 5,
) -> tuple[int, ...]:
    """Greedy forward feature selection gated on significant accuracy gains.

    Folds are contiguous in time.  The first feature is the cross-validated
    accuracy maximizer; each later candidate must beat the current model with
    a significant McNemar test on the pooled held-out predictions.  Ties
    break toward the lowest metric index.
    """
    if max_features < 1:
        raise ValueError("max_features must be >= 1")
    y = np.asarray(labels, dtype=bool)
    if y.all() or not y.any():
        raise ValueError("need both classes")
    folds = _contiguous_folds(dataset.n_epochs, n_folds)

    selected: list[int] = []
    current_pred: np.ndarray | None = None
    current_idx: np.ndarray | None = None
    while len(selected) < max_features:
        best: tuple[float, int, np.ndarray, np.ndarray] | None = None
        for f in range(dataset.n_metrics):
            if f in selected:
                continue
            idx, pred = _cv_predictions(dataset, y, selected + [f], folds)
            acc = float(np.mean(pred == y[idx]))
            if best is None or acc > best[0]:
                best = (acc, f, idx, pred)
        if best is None:
            break
        acc, f, idx, pred = best
        if current_pred is None:
            selected.append(f)
            current_pred, current_idx = pred, idx
            continue
        ok_cur = current_pred == y[current_idx]
        ok_new = pred == y[idx]
        n01 = int(np.count_nonzero(ok_cur & ~ok_new))
        n10 = int(np.count_nonzero(~ok_cur & ok_new))
        if n10 > n01 and mcnemar_p_value(n01, n10) <= alpha:
            selected.append(f)
            current_pred, current_idx = pred, idx
        else:
            break
    return tuple(sorted(selected))


def cluster_signatures(
    signatures: Sequence[Signature], k: int, seed: int = 0, max_iter: int = 100
) -> np.ndarray:
    """k-means over attribution vectors (L2, seeded k-means++ start).

    Returns the cluster index per signature; deterministic per seed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(signatures) < k:
        raise ValueError(f"need at least {k} signatures, got {len(signatures)}")
    x = np.stack([s.attributions for s in signatures])
    rng = np.random.default_rng(seed)

    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(len(x))]
    for j in range(1, k):
        d2 = np.min(((x[:, None, :] - centers[None, :j, :]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            centers[j] = x[rng.integers(len(x))]
        else:
            centers[j] = x[rng.choice(len(x), p=d2 / total)]

    assign = np.zeros(len(x), dtype=int)
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        for j in range(k):
            members = x[new_assign == j]
            if members.size:
                centers[j] = members.mean(axis=0)
            else:
                centers[j] = x[int(dist.min(axis=1).argmax())]
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return assign


@dataclass(frozen=True, eq=False)
class CatalogEntry:
    signature: Signature
    annotation: str


@dataclass(eq=False)
class SignatureCatalog:
    """Annotated signatures of past violations, searchable by similarity."""

    entries: list[CatalogEntry] = field(default_factory=list)

    def add(self, sig: Signature, annotation: str) -> None:
        self.entries.append(CatalogEntry(sig, annotation))

    def to_jsonl(self) -> str:
        lines = []
        for e in self.entries:
            lines.append(json.dumps({
                "ts": e.signature.epoch,
                "attributions": [float(a) for a in e.signature.attributions],
                "abnormal": [bool(b) for b in e.signature.abnormal],
                "annotation": e.annotation,
            }, sort_keys=True))
        return "".join(line + "\n" for line in lines)


def catalog_from_jsonl(text: str) -> SignatureCatalog:
    catalog = SignatureCatalog()
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        attr = np.asarray(obj["attributions"], dtype=float)
        sig = Signature(attributions=attr, abnormal=np.asarray(obj["abnormal"], dtype=bool),
                        epoch=float(obj["ts"]))
        catalog.add(sig, str(obj["annotation"]))
    return catalog


def retrieve(
    query: Signature, catalog: SignatureCatalog, top_k: int
) -> list[tuple[CatalogEntry, float]]:
    """Catalog entries ranked by ascending L2 distance to the query's
    attributions; ties keep insertion order."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if not catalog.entries:
        raise ValueError("catalog is empty")
    dists = np.array([
        float(np.linalg.norm(e.signature.attributions - query.attributions))
        for e in catalog.entries
    ])
    order = np.argsort(dists, kind="stable")[:top_k]
    return [(catalog.entries[i], float(dists[i])) for i in order]


@dataclass(frozen=True)
class EnsembleMember:
    start: int  # epoch index, inclusive
    end: int  # exclusive
    model: DiagnosisModel


@dataclass(eq=False)
class Ensemble:
    members: tuple[EnsembleMember, ...]
    window_length: int


def ensemble_fit(
    dataset: MetricDataset,
    labels: np.ndarray,
    window_length: int,
    feature_set: Sequence[int] | None = None,
) -> Ensemble:
    """One model per consecutive time window; single-class windows are
    skipped.  Keeps the classifier honest under workload change."""
    if window_length < 2:
        raise ValueError("window_length must be >= 2")
    y = np.asarray(labels, dtype=bool)
    members = []
    for start in range(0, dataset.n_epochs, window_length):
        end = min(start + window_length, dataset.n_epochs)
        y_win = y[start:end]
        if y_win.all() or not y_win.any():
            continue
        sub = MetricDataset(dataset.timestamps[start:end], dataset.metrics[start:end],
                            dataset.art[start:end], dataset.metric_names)
        members.append(EnsembleMember(start, end, fit_classifier(sub, y_win, feature_set)))
    if not members:
        raise ValueError("no valid windows")
    return Ensemble(members=tuple(members), window_length=window_length)


def ensemble_classify(
    ensemble: Ensemble,
    recent_metrics: np.ndarray,
    recent_labels: np.ndarray,
    x: Sequence[float] | np.ndarray,
) -> Classification:
    """Delegate to the member with the best Brier score on the recent
    labeled epochs (ties go to the earliest window)."""
    rows = np.asarray(recent_metrics, dtype=float)
    y = np.asarray(recent_labels, dtype=bool)
    if rows.shape[0] == 0 or rows.shape[0] != y.size:
        raise ValueError("recent labeled epochs must be non-empty and aligned")
    best_member = None
    best_brier = math.inf
    for member in ensemble.members:
        p = _posterior_violation(member.model, rows)
        brier = float(np.mean((p - y.astype(float)) ** 2))
        if brier < best_brier:
            best_brier = brier
            best_member = member
    return classify(best_member.model, x)


def bootstrap_feature_confidence(
    dataset: MetricDataset,
    labels: np.ndarray,
    b: int,
    seed: int = 0,
    alpha: float = 0.05,
    max_features: int = 8,
) -> np.ndarray:
    """Per-metric inclusion frequency of select_features over ``b`` bootstrap
    resamples: how much the data, rather than noise, insists on each metric."""
    if b < 1:
        raise ValueError("b must be >= 1")
    y = np.asarray(labels, dtype=bool)
    rng = np.random.default_rng(seed)
    counts = np.zeros(dataset.n_metrics)
    n = dataset.n_epochs
    for _ in range(b):
        for _attempt in range(100):
            idx = np.sort(rng.integers(0, n, n))
            y_boot = y[idx]
            if y_boot.any() and not y_boot.all():
                break
        else:
            raise ValueError("could not draw a two-class bootstrap resample")
        sub = MetricDataset(dataset.timestamps[idx], dataset.metrics[idx],
                            dataset.art[idx], dataset.metric_names)
        for f in select_features(sub, y_boot, alpha=alpha, max_features=max_features):
            counts[f] += 1
    return counts / b


def load_metrics_csv(text: str) -> MetricDataset:
    """Parse the metric log format (header ts,art_ms,<names...> then rows)."""
    lines = [line for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if not lines:
        raise ValueError("empty metrics file")
    header = [h.strip() for h in lines[0].split(",")]
    if len(header) < 3 or header[0] != "ts" or header[1] != "art_ms":
        raise ValueError("metrics header must be ts,art_ms,<metric names>")
    names = tuple(header[2:])
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    if rows.size == 0:
        raise ValueError("metrics file has no data rows")
    if rows.shape[1] != len(header):
        raise ValueError("metrics row width does not match header")
    return MetricDataset(rows[:, 0], rows[:, 2:], rows[:, 1], names)


def write_metrics_csv(dataset: MetricDataset) -> str:
    header = "ts,art_ms," + ",".join(dataset.metric_names)
    lines = [header]
    for i in range(dataset.n_epochs):
        cells = [repr(float(dataset.timestamps[i])), repr(float(dataset.art[i]))]
        cells += [repr(float(v)) for v in dataset.metrics[i]]
        lines.append(",".join(cells))
    return "".join(line + "\n" for line in lines)


def synth_metrics(
    n_epochs: int = 2000,
    n_metrics: int = 10,
    cause_metric_sets: Sequence[Sequence[int]] = ((0, 1, 2), (3, 4, 5), (6, 7, 8)),
    violation_fraction: float = 0.3,
    shift: float = 4.0,
    slo_threshold: float = 200.0,
    seed: int = 0,
) -> tuple[MetricDataset, np.ndarray, tuple[frozenset[int], ...]]:
    """Synthetic benchmark with planted violation causes.

    Violation epochs are assigned a cause; that cause's metrics are shifted
    by ``shift`` standard units and the ART is pushed above the SLO
    threshold.  Returns (dataset, cause index per epoch with -1 for
    compliant, planted abnormal-metric sets).
    """
    rng = np.random.default_rng(seed)
    base_mean = rng.uniform(20.0, 80.0, n_metrics)
    base_sd = rng.uniform(0.5, 2.0, n_metrics)
    x = base_mean + base_sd * rng.standard_normal((n_epochs, n_metrics))

    violating = rng.random(n_epochs) < violation_fraction
    cause = np.full(n_epochs, -1, dtype=int)
    n_causes = len(cause_metric_sets)
    cause[violating] = rng.integers(0, n_causes, int(violating.sum()))
    for j, metric_ids in enumerate(cause_metric_sets):
        rows = cause == j
        for i in metric_ids:
            x[rows, i] += shift * base_sd[i]

    art = np.where(
        violating,
        1.5 * slo_threshold + 0.10 * slo_threshold * rng.standard_normal(n_epochs),
        0.6 * slo_threshold + 0.05 * slo_threshold * rng.standard_normal(n_epochs),
    )
    dataset = MetricDataset(np.arange(n_epochs, dtype=float), x, art,
                            tuple(f"metric_{i:02d}" for i in range(n_metrics)))
    planted = tuple(frozenset(int(i) for i in s) for s in cause_metric_sets)
    return dataset, cause, planted
