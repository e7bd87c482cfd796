"""Baseline representations, simple classifiers and the metric suite.

TF-IDF uses smoothed idf, ``ln((1 + N) / (1 + df)) + 1``, raw term counts
and per-document L2 normalisation. Any external model can be scored by
loading its predictions from a ``row_id,predicted`` CSV.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from .errors import AlignmentError, SchemaError
from .table import AugmentedTable

# --------------------------------------------------------------------------- #
# tf-idf


@dataclass(frozen=True)
class TfidfSettings:
    lowercase: bool = True
    token_pattern: str = r"(?u)\b\w+\b"
    min_df: int = 1


@dataclass(frozen=True)
class TfidfModel:
    vocabulary: Mapping[str, int]
    idf: np.ndarray
    settings: TfidfSettings = field(default_factory=TfidfSettings)

    @property
    def terms(self) -> list[str]:
        return sorted(self.vocabulary, key=self.vocabulary.__getitem__)

    def tokenize(self, text: str) -> list[str]:
        if self.settings.lowercase:
            text = text.lower()
        return re.findall(self.settings.token_pattern, text)


def fit_tfidf(texts: Sequence[str], settings: TfidfSettings | None = None) -> TfidfModel:
    settings = settings or TfidfSettings()
    if not texts:
        raise ValueError("cannot fit tf-idf on an empty corpus")
    probe = TfidfModel({}, np.zeros(0), settings)
    df = Counter()
    for t in texts:
        df.update(set(probe.tokenize(t or "")))
    terms = sorted(t for t, c in df.items() if c >= settings.min_df)
    if not terms:
        raise ValueError("empty vocabulary after filtering")
    n = len(texts)
    idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms])
    return TfidfModel({t: i for i, t in enumerate(terms)}, idf, settings)


def term_counts(model: TfidfModel, texts: Sequence[str]) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for i, t in enumerate(texts):
        c = Counter(tok for tok in model.tokenize(t or "") if tok in model.vocabulary)
        for tok, k in sorted(c.items()):
            rows.append(i)
            cols.append(model.vocabulary[tok])
            vals.append(k)
    return sparse.csr_matrix((np.array(vals, dtype=float), (rows, cols)),
                             shape=(len(texts), len(model.vocabulary)))


def transform(model: TfidfModel, texts: Sequence[str], normalize: bool = True) -> sparse.csr_matrix:
    """Document-term weights; documents with no known term give a zero row."""
    m = term_counts(model, texts) @ sparse.diags(model.idf)
    m = sparse.csr_matrix(m)
    if normalize:
        norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
        norms[norms == 0] = 1.0
        m = sparse.csr_matrix(sparse.diags(1.0 / norms) @ m)
    return m


# --------------------------------------------------------------------------- #
# classifiers


@dataclass(frozen=True)
class Prediction:
    row_id: str
    predicted: str
    true: str


class NaiveClassifier:
    """``most_frequent`` always predicts the training mode (ties: first label
    in sorted order); ``uniform`` draws uniformly from the observed labels."""

    def __init__(self, labels: Sequence[str], mode: str, seed: int = 0):
        if not labels:
            raise ValueError("no training targets")
        if mode not in ("most_frequent", "uniform"):
            raise ValueError(f"unknown mode {mode!r}")
        counts = Counter(labels)
        self.classes = sorted(counts)
        self.mode = mode
        self.majority = min(self.classes, key=lambda c: (-counts[c], c))
        self._rng = np.random.default_rng(seed)

    def predict(self, n: int) -> list[str]:
        if self.mode == "most_frequent":
            return [self.majority] * n
        picks = self._rng.integers(0, len(self.classes), size=n)
        return [self.classes[k] for k in picks]


def naive_classifier(train_targets: Sequence[str], mode: str, seed: int = 0) -> NaiveClassifier:
    return NaiveClassifier(list(train_targets), mode, seed)


@dataclass
class NaiveBayes:
    classes: list
    log_prior: np.ndarray
    kind: str
    # multinomial: log P(term | class) [k, V]; categorical: list per feature of [k, card]
    log_likelihood: object

    def log_posterior(self, X) -> np.ndarray:
        if self.kind == "multinomial":
            X = sparse.csr_matrix(X, dtype=float)
            return np.asarray(X @ self.log_likelihood.T) + self.log_prior
        X = np.asarray(X)
        out = np.tile(self.log_prior, (X.shape[0], 1))
        for j, table in enumerate(self.log_likelihood):
            col = X[:, j]
            known = (col >= 0) & (col < table.shape[1])
            # unseen or missing values carry no evidence
            out[known] += table[:, col[known]].T
        return out

    def predict(self, X) -> list:
        lp = self.log_posterior(X)
        return [self.classes[k] for k in np.argmax(lp, axis=1)]


def naive_bayes_fit(X, y: Sequence[str], alpha: float = 1.0) -> NaiveBayes:
    """Naive Bayes with additive smoothing.

    Integer matrices are treated as categorical codes (``-1`` = missing) and
    fitted per feature; float or sparse matrices are fitted as multinomial
    term weights.
    """
    n = X.shape[0]
    if n != len(y):
        raise AlignmentError(f"{n} feature rows but {len(y)} targets")
    if n == 0:
        raise ValueError("no training rows")
    classes = sorted(set(y))
    yi = np.array([classes.index(v) for v in y])
    k = len(classes)
    prior = np.bincount(yi, minlength=k).astype(float)
    log_prior = np.log(prior / prior.sum())
    onehot = sparse.csr_matrix((np.ones(n), (yi, np.arange(n))), shape=(k, n))
    if sparse.issparse(X) or np.asarray(X).dtype.kind == "f":
        X = sparse.csr_matrix(X, dtype=float)
        fc = np.asarray((onehot @ X).todense()) + alpha
        ll = np.log(fc / fc.sum(axis=1, keepdims=True))
        return NaiveBayes(classes, log_prior, "multinomial", ll)
    X = np.asarray(X)
    tables = []
    for j in range(X.shape[1]):
        col = X[:, j]
        card = int(col.max()) + 1 if (col >= 0).any() else 1
        counts = np.zeros((k, card))
        ok = col >= 0
        np.add.at(counts, (yi[ok], col[ok]), 1)
        counts += alpha
        tables.append(np.log(counts / counts.sum(axis=1, keepdims=True)))
    return NaiveBayes(classes, log_prior, "categorical", tables)


def predict(model, X, row_ids: Sequence[str], truth: Sequence[str]) -> list[Prediction]:
    labels = model.predict(X) if not isinstance(model, NaiveClassifier) else model.predict(len(row_ids))
    return [Prediction(r, p, t) for r, p, t in zip(row_ids, labels, truth)]


# --------------------------------------------------------------------------- #
# metrics


@dataclass(frozen=True)
class MetricsReport:
    n: int
    accuracy: float
    macro_f1: float
    weighted_f1: float
    macro_precision: float
    macro_recall: float
    mae: float | None = None

    def to_dict(self) -> dict:
        return {k: (round(v, 10) if isinstance(v, float) else v) for k, v in self.__dict__.items()}

    def to_text(self) -> str:
        rows = [(k, "-" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v)))
                for k, v in self.__dict__.items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


def _ordinal_codes(values, order):
    if order is not None:
        pos = {str(c): i for i, c in enumerate(order)}
        try:
            return [pos[str(v)] for v in values]
        except KeyError as exc:
            raise SchemaError(f"label {exc.args[0]!r} not in the ordinal order") from exc
    try:
        return [int(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise SchemaError("MAE needs an ordinal target (integer labels or an explicit order)") from exc


def evaluate(preds: Sequence[Prediction], ordinal: bool = False,
             order: Sequence[str] | None = None) -> MetricsReport:
    """Accuracy, macro/weighted F1 and macro precision/recall.

    Averages run over the classes present in the truth. A class that is
    never predicted has precision 0. MAE is reported only for ordinal targets,
    on positions in ``order`` or on the labels read as integers.
    """
    if not preds:
        raise ValueError("no predictions to evaluate")
    truth = [str(p.true) for p in preds]
    guess = [str(p.predicted) for p in preds]
    n = len(preds)
    acc = sum(t == g for t, g in zip(truth, guess)) / n
    support = Counter(truth)
    predicted = Counter(guess)
    hits = Counter(t for t, g in zip(truth, guess) if t == g)
    precs, recs, f1s, weights = [], [], [], []
    for c in sorted(support):
        tp = hits[c]
        p = tp / predicted[c] if predicted[c] else 0.0
        r = tp / support[c]
        f = 2 * p * r / (p + r) if p + r else 0.0
        precs.append(p)
        recs.append(r)
        f1s.append(f)
        weights.append(support[c])
    mae = None
    if ordinal:
        tc, gc = _ordinal_codes(truth, order), _ordinal_codes(guess, order)
        mae = sum(abs(a - b) for a, b in zip(tc, gc)) / n
    return MetricsReport(
        n=n, accuracy=acc, macro_f1=float(np.mean(f1s)),
        weighted_f1=float(np.dot(f1s, weights) / n),
        macro_precision=float(np.mean(precs)), macro_recall=float(np.mean(recs)), mae=mae,
    )


# --------------------------------------------------------------------------- #
# feature matrices


def llm_code_matrix(table: AugmentedTable, exclude: Sequence[str] = ()) -> tuple[np.ndarray, list[str]]:
    """Integer code matrix of the categorical feature columns (``-1`` = missing)."""
    cols = [c for c in table.feature_columns() if c.is_categorical and c.name not in exclude]
    if not cols:
        return np.zeros((table.n_rows, 0), dtype=np.int64), []
    return np.stack([c.codes.astype(np.int64) for c in cols], axis=1), [c.name for c in cols]


def one_hot(table: AugmentedTable, exclude: Sequence[str] = ()) -> tuple[sparse.csr_matrix, list[str]]:
    """One column per (feature, category); ordinal columns add a scaled code column instead."""
    blocks, names = [], []
    for c in table.feature_columns():
        if not c.is_categorical or c.name in exclude:
            continue
        codes = c.codes
        ok = codes >= 0
        if c.kind == "ordinal":
            span = max(len(c.categories) - 1, 1)
            vals = np.where(ok, codes / span, 0.0)
            blocks.append(sparse.csr_matrix(vals.reshape(-1, 1)))
            names.append(c.name)
            continue
        m = sparse.csr_matrix((np.ones(ok.sum()), (np.flatnonzero(ok), codes[ok])),
                              shape=(table.n_rows, len(c.categories)))
        blocks.append(m)
        names.extend(f"{c.name}={v}" for v in c.categories)
    if not blocks:
        return sparse.csr_matrix((table.n_rows, 0)), []
    return sparse.csr_matrix(sparse.hstack(blocks)), names


def fuse_features(llm_table: AugmentedTable | None, tfidf: sparse.spmatrix,
                  tfidf_row_ids: Sequence[str], terms: Sequence[str] = (),
                  exclude: Sequence[str] = ()) -> tuple[sparse.csr_matrix, list[str]]:
    """TF-IDF block followed by the encoded LLM features, aligned by row id."""
    tfidf = sparse.csr_matrix(tfidf)
    names = list(terms) if terms else [f"tfidf_{j}" for j in range(tfidf.shape[1])]
    if llm_table is None:
        return tfidf, names
    if tuple(llm_table.row_ids) != tuple(tfidf_row_ids):
        raise AlignmentError("row ids of the LLM table and the tf-idf matrix differ")
    if tfidf.shape[0] != llm_table.n_rows:
        raise AlignmentError("tf-idf matrix has a different row count")
    block, extra = one_hot(llm_table, exclude)
    if block.shape[1] == 0:
        return tfidf, names
    return sparse.csr_matrix(sparse.hstack([tfidf, block])), names + extra


# --------------------------------------------------------------------------- #
# prediction files


def predictions_csv(preds: Sequence[Prediction]) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row_id", "predicted", "true"])
    for p in preds:
        w.writerow([p.row_id, p.predicted, p.true])
    return buf.getvalue()


def write_predictions(preds: Sequence[Prediction], path) -> None:
    Path(path).write_text(predictions_csv(preds), encoding="utf-8")


def read_predictions(path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"row_id", "predicted"} <= set(reader.fieldnames):
            raise SchemaError(f"{path}: expected columns row_id, predicted")
        out = {}
        for row in reader:
            if row["row_id"] in out:
                raise SchemaError(f"{path}: duplicate row_id {row['row_id']!r}")
            out[row["row_id"]] = row["predicted"]
    return out


def join_predictions(predicted: Mapping[str, str], table: AugmentedTable,
                     require_all: bool = False) -> list[Prediction]:
    """Pair external predictions with the table's truth.

    Ids absent from the table are an error; with ``require_all`` every row of
    the table must be predicted. Rows with a missing truth are skipped.
    """
    truth = dict(zip(table.row_ids, table.column(table.target).values))
    unknown = [r for r in predicted if r not in truth]
    if unknown:
        raise AlignmentError(f"{len(unknown)} predicted row ids are not in the table, "
                             f"e.g. {unknown[0]!r}")
    if require_all:
        missing = [r for r in truth if r not in predicted]
        if missing:
            raise AlignmentError(f"{len(missing)} rows have no prediction, e.g. {missing[0]!r}")
    return [Prediction(r, predicted[r], truth[r]) for r in table.row_ids
            if r in predicted and truth[r] is not None]


def metrics_json(report: MetricsReport, extra: Mapping | None = None) -> str:
    out = dict(extra or {})
    out["metrics"] = report.to_dict()
    return json.dumps(out, indent=2, sort_keys=True) + "\n"
