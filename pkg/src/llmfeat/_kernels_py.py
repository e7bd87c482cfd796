"""Pure numpy implementations of the counting kernels.

Signatures and results are identical to the compiled ``_kernels`` module;
``llmfeat.kernels`` picks whichever is importable.
"""
import numpy as np


def extension_tally(rows, codes, attrs, max_card, target, n_classes):
    """Count (attribute, value, class) triples over a subset of rows.

    ``out[i, v, t]`` is the number of rows in ``rows`` where column
    ``attrs[i]`` of ``codes`` equals ``v`` and ``target`` equals ``t``.
    Negative codes mean missing and are skipped.
    """
    rows = np.asarray(rows, dtype=np.int64)
    attrs = np.asarray(attrs, dtype=np.int64)
    out = np.zeros((len(attrs), max_card, n_classes), dtype=np.int64)
    if len(rows) == 0 or len(attrs) == 0:
        return out
    t = target[rows].astype(np.int64)
    sub = codes[np.ix_(rows, attrs)].astype(np.int64)
    ok = (sub >= 0) & (t >= 0)[:, None]
    a = np.broadcast_to(np.arange(len(attrs), dtype=np.int64), sub.shape)
    key = (a * max_card + sub) * n_classes + t[:, None]
    flat = np.bincount(key[ok], minlength=len(attrs) * max_card * n_classes)
    return flat.reshape(out.shape)


def bootstrap_counts(feature, target, idx, n_rows_cat, n_cols_cat):
    """Contingency tables for every bootstrap replicate.

    ``idx`` has shape (reps, n) and holds resampled row indices.
    Returns an int64 array of shape (reps, n_rows_cat, n_cols_cat).
    """
    idx = np.asarray(idx, dtype=np.int64)
    reps = idx.shape[0]
    cells = n_rows_cat * n_cols_cat
    key = feature[idx].astype(np.int64) * n_cols_cat + target[idx]
    key += (np.arange(reps, dtype=np.int64) * cells)[:, None]
    flat = np.bincount(key.ravel(), minlength=reps * cells)
    return flat.reshape(reps, n_rows_cat, n_cols_cat)


def chi2_batch(counts):
    """Pearson statistic and degrees of freedom per table.

    All-zero rows and columns are dropped before computing expected counts.
    Tables left with fewer than two rows or columns get ``dof == 0`` and a
    statistic of 0.
    """
    counts = np.asarray(counts, dtype=np.float64)
    reps = counts.shape[0]
    row = counts.sum(axis=2)
    col = counts.sum(axis=1)
    n = row.sum(axis=1)
    r_eff = (row > 0).sum(axis=1)
    c_eff = (col > 0).sum(axis=1)
    dof = (r_eff - 1) * (c_eff - 1)
    dof = np.where((r_eff >= 2) & (c_eff >= 2), dof, 0).astype(np.int64)
    chi2 = np.zeros(reps, dtype=np.float64)
    live = dof > 0
    if live.any():
        expected = row[live][:, :, None] * col[live][:, None, :] / n[live][:, None, None]
        obs = counts[live]
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(expected > 0, (obs - expected) ** 2 / expected, 0.0)
        chi2[live] = term.sum(axis=(1, 2))
    return chi2, dof
