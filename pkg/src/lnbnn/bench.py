"""Experiment drivers: accuracy reports, k and budget sweeps, class scaling.

Every driver returns plain rows; :func:`write_csv` turns them into
RFC-4180 CSV. Timing columns are the only values that vary between runs
with the same seed.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from lnbnn import classifiers as clf
from lnbnn.core import DEFAULT_ALPHA, LabeledDescriptorSet, QueryImage
from lnbnn.dataset import SyntheticSpec, generate_dataset, images_of

METHODS = ("nbnn", "local", "positive", "logodds")

K_HEADER = ("k", "accuracy")
CHECKS_HEADER = ("method", "checks", "accuracy", "query_seconds")
SCALING_HEADER = ("class_count", "method", "build_seconds", "mean_query_seconds_per_image", "accuracy")


@dataclass(frozen=True)
class EvalParams:
    k: int = clf.DEFAULT_K
    alpha: float = DEFAULT_ALPHA
    trees: int = 4
    checks: Optional[int] = None  # None: exact brute-force search
    seed: int = 0
    threads: int = 1
    bandwidth: float = clf.DEFAULT_BANDWIDTH


@dataclass
class ClassificationReport:
    confusion: np.ndarray
    per_class_accuracy: np.ndarray
    mean_per_class_accuracy: float
    build_seconds: float = 0.0
    query_seconds: float = 0.0
    predictions: list = field(default_factory=list)
    mean_increments: Optional[float] = None
    config: dict = field(default_factory=dict)

    @property
    def overall_accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())


def report_from_confusion(confusion, **extra) -> ClassificationReport:
    """Per-class accuracy is diagonal over row sum; the mean skips classes with no queries."""
    confusion = np.asarray(confusion, dtype=np.int64)
    rows = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(rows > 0, np.diag(confusion) / np.maximum(rows, 1), np.nan)
    mean = float(np.mean(per_class[rows > 0])) if np.any(rows > 0) else float("nan")
    return ClassificationReport(confusion, per_class, mean, **extra)


def build_model(method: str, train: LabeledDescriptorSet, params: EvalParams):
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method == "local":
        return clf.build_local_nbnn(train, params.k, params.checks, params.trees, params.seed)
    return clf.build_nbnn(train, params.checks, params.trees, params.seed)


def _classifier(method: str, model, params: EvalParams, checks: Optional[int]):
    if method == "nbnn":
        return lambda q: (clf.nbnn_classify(model, q, checks)[0], None)
    if method == "local":
        return lambda q: (clf.local_nbnn_classify(model, q, checks)[0], None)
    rule = clf.positive_increment_classify if method == "positive" else clf.log_odds_classify

    def run(q):
        label, _, applied = rule(model, q, checks, params.bandwidth)
        return label, applied

    return run


def classify_all(method: str, model, queries: Sequence[QueryImage], params: EvalParams,
                 checks: Optional[int] = None):
    """Predictions in query order, plus mean increments (log-odds rules only)."""
    run = _classifier(method, model, params, checks)
    if params.threads > 1:
        with ThreadPoolExecutor(max_workers=params.threads) as pool:
            results = list(pool.map(run, queries))
    else:
        results = [run(q) for q in queries]
    preds = [int(r[0]) for r in results]
    applied = [r[1] for r in results if r[1] is not None]
    return preds, (float(np.mean(applied)) if applied else None)


def _confusion(queries: Sequence[QueryImage], preds: Sequence[int], class_count: int) -> np.ndarray:
    conf = np.zeros((class_count, class_count), dtype=np.int64)
    for q, p in zip(queries, preds):
        if q.true_label is None:
            raise ValueError("every query image needs a true label for evaluation")
        conf[q.true_label, p] += 1
    return conf


def evaluate(method: str, train: LabeledDescriptorSet, queries: Sequence[QueryImage],
             params: EvalParams = EvalParams()) -> ClassificationReport:
    t0 = time.perf_counter()
    model = build_model(method, train, params)
    t1 = time.perf_counter()
    preds, applied = classify_all(method, model, queries, params, params.checks)
    t2 = time.perf_counter()
    config = {"method": method, **dataclasses.asdict(params)}
    return report_from_confusion(
        _confusion(queries, preds, train.class_count),
        build_seconds=t1 - t0, query_seconds=t2 - t1, predictions=preds,
        mean_increments=applied, config=config)


def accuracy_of(queries, preds, class_count) -> float:
    return report_from_confusion(_confusion(queries, preds, class_count)).mean_per_class_accuracy


def sweep_k(train: LabeledDescriptorSet, queries: Sequence[QueryImage], ks: Iterable[int],
            params: EvalParams = EvalParams()) -> list[tuple]:
    """Local NBNN accuracy for each k, all sharing one merged index."""
    ks = list(ks)
    base = clf.build_local_nbnn(train, ks[0], params.checks, params.trees, params.seed)
    rows = []
    for k in ks:
        model = dataclasses.replace(base, k=k)
        preds, _ = classify_all("local", model, queries, params, params.checks)
        rows.append((k, accuracy_of(queries, preds, train.class_count)))
    return rows


def sweep_checks(train: LabeledDescriptorSet, queries: Sequence[QueryImage], methods: Iterable[str],
                 budgets: Iterable[int], params: EvalParams = EvalParams()) -> list[tuple]:
    """Accuracy and query time per (method, budget).

    NBNN spends the budget in every per-class index; Local NBNN spends it
    once in the merged index.
    """
    budgets = list(budgets)
    rows = []
    for method in methods:
        forest_params = dataclasses.replace(params, checks=max(budgets))
        model = build_model(method, train, forest_params)
        for c in budgets:
            t0 = time.perf_counter()
            preds, _ = classify_all(method, model, queries, params, c)
            elapsed = time.perf_counter() - t0
            rows.append((method, c, accuracy_of(queries, preds, train.class_count), elapsed))
    return rows


def scaling_experiment(class_counts: Sequence[int], spec: SyntheticSpec, checks: int,
                       k: int = clf.DEFAULT_K, trees: int = 4, methods=("nbnn", "local"),
                       query_images: Optional[int] = None, repeats: int = 3) -> list[tuple]:
    """Build both models on growing class subsets of one dataset and time queries.

    The data for class c is identical at every class count; the query set is
    the held-out images of the classes present at the smallest count. Query
    time is the fastest of ``repeats`` passes, divided by the image count.
    """
    class_counts = list(class_counts)
    if any(b <= a for a, b in zip(class_counts, class_counts[1:])):
        raise ValueError("class counts must be strictly increasing")
    full = generate_dataset(dataclasses.replace(spec, class_count=class_counts[-1]))
    per_class = spec.train_images_per_class + spec.query_images_per_class
    within = full.image_ids % per_class
    is_train = within < spec.train_images_per_class
    held_out = ~is_train & (full.labels < class_counts[0])
    queries = images_of(full.subset(held_out, class_count=class_counts[0]))
    if query_images is not None:
        queries = queries[:query_images]
    params = EvalParams(k=k, trees=trees, checks=checks)
    rows = []
    for method in methods:
        for n_classes in class_counts:
            train = full.subset(is_train & (full.labels < n_classes), class_count=n_classes)
            t0 = time.perf_counter()
            model = build_model(method, train, params)
            build_s = time.perf_counter() - t0
            best = float("inf")
            for _ in range(repeats):
                t0 = time.perf_counter()
                preds, _ = classify_all(method, model, queries, params, checks)
                best = min(best, time.perf_counter() - t0)
            acc = accuracy_of(queries, preds, n_classes)
            rows.append((n_classes, method, build_s, best / len(queries), acc))
    return rows


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(header: Sequence[str], rows: Iterable[Sequence], out=None) -> str:
    """Write header + rows; ``out`` may be a path, a file object, or None (return text)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    text = buf.getvalue()
    if out is None:
        return text
    if hasattr(out, "write"):
        out.write(text)
    elif str(out) == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    return text
