import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from llmfeat.errors import DegenerateTableError
from llmfeat.stats import (
    ContingencyTable, bootstrap_test, chi2_sf, chi_squared_test, column_as_numbers, contingency,
    smog_from_counts,
    correlate, count_sentences, count_syllables, cramers_v, polysyllable_count, report_csv,
    report_json, significance_stars, smog_index,
)
from llmfeat.table import from_records


def test_hand_computed_chi_squared():
    # expected 15 everywhere, each cell off by 5: 4 * 25 / 15
    stat, dof, p = chi_squared_test(ContingencyTable.from_counts([[10, 20], [20, 10]]))
    assert stat == pytest.approx(20 / 3)
    assert dof == 1
    assert p == pytest.approx(math.erfc(math.sqrt(stat / 2)), rel=1e-12)


tables = st.lists(st.lists(st.integers(0, 40), min_size=2, max_size=4), min_size=2, max_size=4)


@given(tables)
def test_chi_squared_matches_scipy(rows):
    width = min(len(r) for r in rows)
    counts = np.array([r[:width] for r in rows])
    pruned = counts[counts.sum(1) > 0]
    pruned = pruned[:, pruned.sum(0) > 0]
    ct = ContingencyTable.from_counts(counts)
    if pruned.ndim != 2 or min(pruned.shape) < 2:
        with pytest.raises(DegenerateTableError):
            chi_squared_test(ct)
        return
    stat, dof, p = chi_squared_test(ct)
    ref = sps.chi2_contingency(pruned, correction=False)
    assert stat == pytest.approx(ref[0], rel=1e-9, abs=1e-9)
    assert dof == ref[2]
    assert p == pytest.approx(ref[1], rel=1e-7, abs=1e-12)
    v = cramers_v(ct)
    assert 0.0 <= v <= 1.0 + 1e-12


@pytest.mark.parametrize("dof", [1, 5, 40])
def test_chi2_tail_relative_accuracy(dof):
    for stat in (0.5, 20.0, 200.0):
        ref = mpmath.gammainc(mpmath.mpf(dof) / 2, mpmath.mpf(stat) / 2, mpmath.inf,
                              regularized=True)
        assert float(chi2_sf(stat, dof)) == pytest.approx(float(ref), rel=1e-10)


def test_cramers_v_extremes():
    perm = np.eye(4, dtype=int)[[2, 0, 3, 1]] * 9
    assert cramers_v(ContingencyTable.from_counts(perm)) == pytest.approx(1.0)
    assert cramers_v(ContingencyTable.from_counts([[5, 10, 15], [10, 20, 30]])) == \
        pytest.approx(0.0, abs=1e-12)


def test_significance_stars():
    assert [significance_stars(p) for p in (0.0005, 0.005, 0.03, 0.05, 0.5)] == \
        ["***", "**", "*", "", ""]


def _null_table():
    recs = ([{"f": "x", "y": "a"}] * 40 + [{"f": "x", "y": "b"}] * 40
            + [{"f": "z", "y": "a"}] * 40 + [{"f": "z", "y": "b"}] * 40)
    return from_records(recs, target="y")


def test_target_copy_is_highly_significant():
    recs = [{"f": v, "y": v} for v in "abcab" * 20]
    t = from_records(recs, target="y")
    r = bootstrap_test(t, "f", reps=200, seed=1)
    assert r.stars == "***" and r.cramers_v == pytest.approx(1.0)
    assert r.bootstrap_significant_fraction == 1.0 and r.robust()


def test_bootstrap_is_seeded():
    t = _null_table()
    a = bootstrap_test(t, "f", reps=300, seed=1)
    assert a == bootstrap_test(t, "f", reps=300, seed=1)
    assert a.chi2 == pytest.approx(0.0) and a.p_value == pytest.approx(1.0)
    # under the null the rejection rate sits near alpha
    assert 0.0 < a.bootstrap_significant_fraction < 0.2
    with pytest.raises(ValueError):
        bootstrap_test(t, "f", reps=0)


def test_bootstrap_counts_degenerate_replicates():
    # one rare category: some resamples drop it and collapse to a single row
    recs = [{"f": "x", "y": "a"}] * 10 + [{"f": "x", "y": "b"}] * 10 + [{"f": "z", "y": "a"}]
    r = bootstrap_test(from_records(recs, target="y"), "f", reps=400, seed=5)
    assert r.bootstrap_degenerate > 0
    assert r.bootstrap_reps == 400


def test_contingency_skips_missing_and_rejects_constant():
    recs = [{"f": "x", "y": "a"}, {"f": None, "y": "b"}, {"f": "z", "y": "b"}]
    ct = contingency(from_records(recs, target="y"), "f")
    assert ct.n == 2 and ct.excluded == 1
    with pytest.raises(DegenerateTableError):
        contingency(from_records([{"f": "x", "y": "a"}, {"f": "x", "y": "b"}], target="y"), "f")


def test_reports_carry_cramers_v():
    r = bootstrap_test(_null_table(), "f", reps=50, seed=0)
    csv_text = report_csv([r])
    assert csv_text.splitlines()[0] == "feature,chi2,dof,p,stars,cramers_v,bootstrap_fraction"
    assert '"bootstrap_reps": 50' in report_json([r])


@pytest.mark.parametrize("word,n", [
    ("cat", 1), ("the", 1), ("make", 1), ("table", 2), ("beautiful", 3), ("agree", 2),
    ("reproducibility", 7), ("university", 5), ("rhythm", 1), ("queue", 1),
])
def test_syllables(word, n):
    assert count_syllables(word) == n


def test_sentences_and_polysyllables():
    # decimals do not end sentences; abbreviations do, by design
    assert count_sentences("Smith arrived! Was it 3.5 hours? Yes... definitely.") == 4
    assert count_sentences("Dr. Smith arrived.") == 2
    assert polysyllable_count("The university library is beautiful.") == 3
    with pytest.raises(ValueError):
        smog_index("   ")
    with pytest.raises(ValueError):
        smog_index("no terminal punctuation here")


def test_smog_direct_evaluation():
    text = "Comprehensive evaluation matters. We agree. It works."
    polys, sents = polysyllable_count(text), count_sentences(text)
    assert (polys, sents) == (2, 3)
    assert smog_index(text) == pytest.approx(1.043 * math.sqrt(2 * 30 / 3) + 3.1291)


pairs = st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=40)


@given(pairs)
def test_correlation_matches_scipy(data):
    x, y = [a for a, _ in data], [b for _, b in data]
    if len(set(x)) < 2 or len(set(y)) < 2:
        with pytest.raises(ValueError):
            correlate(x, y)
        return
    assert correlate(x, y) == pytest.approx(sps.pearsonr(x, y)[0], abs=1e-9)
    assert correlate(x, y, "spearman") == pytest.approx(sps.spearmanr(x, y)[0], abs=1e-9)


def test_correlation_pairwise_missing():
    x = [1, 2, None, 4, 5, float("nan")]
    y = [2, 4, 6, None, 10, 12]
    assert correlate(x, y) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        correlate([1, 2], [1, 2])
    with pytest.raises(ValueError):
        correlate([1, 2, 3], [1, 2, 3], method="kendall")


def test_column_as_numbers_uses_codes():
    t = from_records([{"r": "low", "y": "a"}, {"r": "high", "y": "b"}, {"r": None, "y": "a"}],
                     target="y", kinds={"r": {"kind": "ordinal", "categories": ["low", "high"]}})
    assert column_as_numbers(t, "r") == [0, 1, None]


@given(tables)
def test_cramers_v_zero_iff_chi2_zero(rows):
    width = min(len(r) for r in rows)
    ct = ContingencyTable.from_counts(np.array([r[:width] for r in rows]))
    try:
        stat, _, _ = chi_squared_test(ct)
    except DegenerateTableError:
        return
    v = cramers_v(ct)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert (v == 0.0) == (stat == 0.0)


@given(st.integers(0, 200), st.integers(1, 50))
def test_smog_monotone_in_polysyllables(polys, sents):
    assert smog_from_counts(polys + 1, sents) >= smog_from_counts(polys, sents)


@given(pairs, st.floats(0.1, 100), st.floats(-1e3, 1e3))
def test_correlation_symmetry_and_affine_invariance(data, a, b):
    x, y = [float(p) for p, _ in data], [float(q) for _, q in data]
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    r = correlate(x, y)
    assert correlate(y, x) == pytest.approx(r, abs=1e-12)
    assert correlate([a * v + b for v in x], y) == pytest.approx(r, abs=1e-9)
    assert correlate(x, y, "spearman") == pytest.approx(correlate(y, x, "spearman"), abs=1e-12)
