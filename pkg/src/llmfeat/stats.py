"""Feature validation: chi-squared independence, Cramér's V, bootstrap
stability, SMOG readability and correlation against reference columns."""
from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from . import kernels
from .errors import DegenerateTableError, SchemaError
from .table import AugmentedTable


@dataclass(frozen=True)
class ContingencyTable:
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    counts: np.ndarray
    excluded: int = 0

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape != (len(self.row_labels), len(self.col_labels)):
            raise ValueError("counts shape does not match labels")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "row_labels", tuple(self.row_labels))
        object.__setattr__(self, "col_labels", tuple(self.col_labels))

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_counts(cls, counts) -> "ContingencyTable":
        counts = np.asarray(counts)
        return cls(tuple(str(i) for i in range(counts.shape[0])),
                   tuple(str(j) for j in range(counts.shape[1])), counts)


@dataclass(frozen=True)
class FeatureTestResult:
    feature: str
    chi2: float
    dof: int
    p_value: float
    cramers_v: float
    stars: str
    bootstrap_significant_fraction: float
    bootstrap_reps: int
    bootstrap_degenerate: int
    n: int

    def robust(self, threshold: float = 0.95) -> bool:
        return self.bootstrap_significant_fraction >= threshold


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def contingency(table: AugmentedTable, feature: str, target: str | None = None) -> ContingencyTable:
    """Cross-tabulate two categorical columns, skipping rows missing either."""
    target = target or table.target
    f, t = table.column(feature), table.column(target)
    if not (f.is_categorical and t.is_categorical):
        raise SchemaError(f"{feature!r} and {target!r} must both be categorical")
    fc, tc = f.codes, t.codes
    ok = (fc >= 0) & (tc >= 0)
    counts = np.zeros((len(f.categories), len(t.categories)), dtype=np.int64)
    np.add.at(counts, (fc[ok], tc[ok]), 1)
    if (counts.sum(axis=1) > 0).sum() < 2:
        raise DegenerateTableError(f"feature {feature!r} has fewer than two observed categories")
    return ContingencyTable(f.categories, t.categories, counts, int((~ok).sum()))


def chi2_sf(stat, dof):
    """Upper tail of the chi-squared distribution, Q(dof/2, stat/2)."""
    return special.gammaincc(np.asarray(dof, dtype=float) / 2.0, np.asarray(stat, dtype=float) / 2.0)


def _pruned(counts):
    counts = np.asarray(counts, dtype=np.float64)
    counts = counts[counts.sum(axis=1) > 0]
    return counts[:, counts.sum(axis=0) > 0]


def chi_squared_test(ct: ContingencyTable) -> tuple[float, int, float]:
    """Pearson chi-squared test of independence (no continuity correction).

    All-zero rows and columns are removed first and the degrees of freedom
    follow the reduced shape.
    """
    if ct.n <= 0:
        raise DegenerateTableError("empty contingency table")
    obs = _pruned(ct.counts)
    r, c = obs.shape
    if r < 2 or c < 2:
        raise DegenerateTableError(f"table reduces to {r}x{c}; need at least 2x2")
    expected = obs.sum(axis=1, keepdims=True) * obs.sum(axis=0, keepdims=True) / obs.sum()
    if (expected <= 0).any():
        raise DegenerateTableError("zero expected count")
    stat = float(((obs - expected) ** 2 / expected).sum())
    dof = (r - 1) * (c - 1)
    return stat, dof, float(chi2_sf(stat, dof))


def cramers_v(ct: ContingencyTable) -> float:
    stat, _, _ = chi_squared_test(ct)
    k = min(_pruned(ct.counts).shape)
    return math.sqrt(stat / (ct.n * (k - 1)))


def _replicate_indices(n: int, reps: int, seed: int) -> np.ndarray:
    # one stream per replicate so replicates can be computed in any order
    out = np.empty((reps, n), dtype=np.int64)
    for b in range(reps):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, b])))
        out[b] = rng.integers(0, n, size=n)
    return out


def bootstrap_test(table: AugmentedTable, feature: str, target: str | None = None,
                   reps: int = 2500, alpha: float = 0.05, seed: int = 0) -> FeatureTestResult:
    """Chi-squared test on the full table plus its rejection rate under resampling.

    Each replicate resamples ``n`` complete rows with replacement and reruns
    the test; replicates that collapse to a single category count as not
    significant and are tallied in ``bootstrap_degenerate``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    target = target or table.target
    ct = contingency(table, feature, target)
    stat, dof, p = chi_squared_test(ct)
    k = min(_pruned(ct.counts).shape)
    v = math.sqrt(stat / (ct.n * (k - 1)))

    fc, tc = table.column(feature).codes, table.column(target).codes
    ok = (fc >= 0) & (tc >= 0)
    f = np.ascontiguousarray(fc[ok], dtype=np.int64)
    t = np.ascontiguousarray(tc[ok], dtype=np.int64)
    idx = _replicate_indices(len(f), reps, seed)
    counts = kernels.bootstrap_counts(f, t, idx, len(ct.row_labels), len(ct.col_labels))
    stats_b, dof_b = kernels.chi2_batch(counts)
    live = dof_b > 0
    p_b = np.ones(reps)
    p_b[live] = chi2_sf(stats_b[live], dof_b[live])
    significant = int(((p_b < alpha) & live).sum())
    return FeatureTestResult(
        feature=feature, chi2=stat, dof=dof, p_value=p, cramers_v=v,
        stars=significance_stars(p),
        bootstrap_significant_fraction=significant / reps,
        bootstrap_reps=reps, bootstrap_degenerate=int((~live).sum()), n=ct.n,
    )


REPORT_FIELDS = ("feature", "chi2", "dof", "p", "stars", "cramers_v", "bootstrap_fraction")


def _report_rows(results: Sequence[FeatureTestResult]):
    for r in results:
        yield {
            "feature": r.feature,
            "chi2": round(r.chi2, 6),
            "dof": r.dof,
            "p": float(f"{r.p_value:.6g}"),
            "stars": r.stars,
            "cramers_v": round(r.cramers_v, 6),
            "bootstrap_fraction": round(r.bootstrap_significant_fraction, 6),
        }


def report_csv(results: Sequence[FeatureTestResult]) -> str:
    buf = io.StringIO(newline="")
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in _report_rows(results):
        w.writerow(row)
    return buf.getvalue()


def report_json(results: Sequence[FeatureTestResult]) -> str:
    rows = list(_report_rows(results))
    for row, r in zip(rows, results):
        row["n"] = r.n
        row["bootstrap_reps"] = r.bootstrap_reps
        row["bootstrap_degenerate"] = r.bootstrap_degenerate
    return json.dumps(rows, indent=2) + "\n"


# --------------------------------------------------------------------------- #
# readability

_WORD = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)*")
_SENTENCE_END = re.compile(r"[.!?]+(?=\s|$)")
_VOWEL_GROUP = re.compile(r"[aeiouy]+")


def count_syllables(word: str) -> int:
    """Vowel-group count with a silent trailing 'e' (but not '-le').

    Every word has at least one syllable.
    """
    w = word.lower().strip("'")
    w = re.sub(r"[^a-z]", "", w)
    if not w:
        return 0
    n = len(_VOWEL_GROUP.findall(w))
    if n > 1 and w.endswith("e") and not w.endswith(("le", "ee", "ye")):
        n -= 1
    return max(n, 1)


def count_sentences(text: str) -> int:
    """Sentence ends are runs of . ! ? followed by whitespace or end of text."""
    return len(_SENTENCE_END.findall(text.strip()))


def polysyllable_count(text: str) -> int:
    return sum(1 for w in _WORD.findall(text) if count_syllables(w) >= 3)


def smog_from_counts(polysyllables: int, sentences: int) -> float:
    if sentences <= 0:
        raise ValueError("no sentences")
    return 1.043 * math.sqrt(polysyllables * 30 / sentences) + 3.1291


def smog_index(text: str) -> float:
    """SMOG grade of ``text``; raises ValueError when no sentence is found."""
    if not text or not text.strip():
        raise ValueError("empty text")
    sentences = count_sentences(text)
    if sentences == 0:
        raise ValueError("no sentence boundary found")
    return smog_from_counts(polysyllable_count(text), sentences)


# --------------------------------------------------------------------------- #
# correlation


def _ranks(x):
    from scipy.stats import rankdata

    return rankdata(x)


def correlate(x: Sequence, y: Sequence, method: str = "pearson") -> float:
    """Pearson or Spearman coefficient after pairwise removal of missing values."""
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    pairs = [(float(a), float(b)) for a, b in zip(x, y)
             if a is not None and b is not None and not (isinstance(a, float) and math.isnan(a))
             and not (isinstance(b, float) and math.isnan(b))]
    if len(pairs) < 3:
        raise ValueError("need at least three complete pairs")
    xs = np.array([p[0] for p in pairs])
    ys = np.array([p[1] for p in pairs])
    if method == "spearman":
        xs, ys = _ranks(xs), _ranks(ys)
    elif method != "pearson":
        raise ValueError(f"unknown method {method!r}")
    dx, dy = xs - xs.mean(), ys - ys.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise ValueError("correlation undefined: zero variance")
    r = float(dx @ dy) / (sx * sy)
    return max(-1.0, min(1.0, r))


def column_as_numbers(table: AugmentedTable, name: str) -> list:
    """Numeric view: ordinal/categorical columns give codes, numeric give values."""
    c = table.column(name)
    if c.is_categorical:
        return [None if k < 0 else int(k) for k in c.codes.tolist()]
    if c.kind == "numeric":
        return list(c.values)
    raise SchemaError(f"column {name!r} of kind {c.kind} has no numeric view")
