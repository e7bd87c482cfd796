import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from llmfeat import _kernels_py as py

BACKENDS = [py]
try:
    from llmfeat import _kernels as cy
    BACKENDS.append(cy)
except ImportError:  # extension not built
    cy = None


def loop_tally(rows, codes, attrs, max_card, target, n_classes):
    out = np.zeros((len(attrs), max_card, n_classes), dtype=np.int64)
    for r in rows:
        if target[r] < 0:
            continue
        for i, a in enumerate(attrs):
            if codes[r, a] >= 0:
                out[i, codes[r, a], target[r]] += 1
    return out


@st.composite
def tally_case(draw):
    n = draw(st.integers(0, 40))
    m = draw(st.integers(1, 5))
    card = draw(st.integers(1, 4))
    k = draw(st.integers(1, 3))
    codes = np.array(draw(st.lists(st.integers(-1, card - 1), min_size=n * m, max_size=n * m)),
                     dtype=np.int64).reshape(n, m)
    target = np.array(draw(st.lists(st.integers(-1, k - 1), min_size=n, max_size=n)),
                      dtype=np.int64)
    rows = np.array(sorted(draw(st.sets(st.integers(0, max(n - 1, 0)), max_size=n))) if n else [],
                    dtype=np.int64)
    attrs = np.array(draw(st.lists(st.integers(0, m - 1), min_size=0, max_size=m, unique=True)),
                     dtype=np.int64)
    return rows, codes, attrs, card, target, k


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@given(case=tally_case())
def test_extension_tally_matches_loop(mod, case):
    got = mod.extension_tally(*case)
    assert np.array_equal(got, loop_tally(*case))


@st.composite
def bootstrap_case(draw):
    n = draw(st.integers(1, 30))
    r, c = draw(st.integers(1, 4)), draw(st.integers(1, 4))
    f = np.array(draw(st.lists(st.integers(0, r - 1), min_size=n, max_size=n)), dtype=np.int64)
    t = np.array(draw(st.lists(st.integers(0, c - 1), min_size=n, max_size=n)), dtype=np.int64)
    reps = draw(st.integers(1, 6))
    idx = np.array(draw(st.lists(st.integers(0, n - 1), min_size=reps * n, max_size=reps * n)),
                   dtype=np.int64).reshape(reps, n)
    return f, t, idx, r, c


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@given(case=bootstrap_case())
def test_bootstrap_counts_and_chi2(mod, case):
    f, t, idx, r, c = case
    counts = mod.bootstrap_counts(f, t, idx, r, c)
    assert counts.shape == (len(idx), r, c)
    for b, rows in enumerate(idx):
        want = np.zeros((r, c), dtype=np.int64)
        np.add.at(want, (f[rows], t[rows]), 1)
        assert np.array_equal(counts[b], want)
    stats, dof = mod.chi2_batch(counts)
    for b in range(len(idx)):
        tab = counts[b]
        tab = tab[tab.sum(1) > 0][:, tab.sum(0) > 0]
        if min(tab.shape) < 2:
            assert dof[b] == 0 and stats[b] == 0
        else:
            ref = sps.chi2_contingency(tab, correction=False)
            assert dof[b] == ref[2]
            assert stats[b] == pytest.approx(ref[0], rel=1e-10, abs=1e-10)


@pytest.mark.skipif(cy is None, reason="compiled extension not built")
def test_backends_agree_on_large_input():
    rng = np.random.default_rng(0)
    codes = rng.integers(-1, 6, size=(5000, 12))
    target = rng.integers(-1, 3, size=5000)
    rows = np.sort(rng.choice(5000, 3000, replace=False))
    attrs = np.arange(12)
    assert np.array_equal(py.extension_tally(rows, codes, attrs, 6, target, 3),
                          cy.extension_tally(rows, codes, attrs, 6, target, 3))
    f, t = rng.integers(0, 5, 800), rng.integers(0, 3, 800)
    idx = rng.integers(0, 800, size=(200, 800))
    a, b = py.bootstrap_counts(f, t, idx, 5, 3), cy.bootstrap_counts(f, t, idx, 5, 3)
    assert np.array_equal(a, b)
    sa, da = py.chi2_batch(a)
    sb, db = cy.chi2_batch(b)
    assert np.array_equal(da, db) and np.allclose(sa, sb, rtol=1e-12, atol=0)


def test_env_var_forces_fallback():
    env = dict(os.environ, LLMFEAT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from llmfeat import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
