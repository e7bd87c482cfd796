"""Tabular data model: columns, categorical encoding, target binning and splits.

Tables are immutable. Every operation returns a new table and leaves its
inputs untouched. Categorical cells are stored as their original strings;
integer codes are derived from the column's category order.
"""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import EncodingError, ParseError, SchemaError

CATEGORICAL_KINDS = ("categorical", "ordinal", "binary")
KINDS = CATEGORICAL_KINDS + ("text", "numeric")
CODE_SUFFIX = "_code"


class Item(NamedTuple):
    attribute: str
    value: str

    def __str__(self):
        return f"{self.attribute}={self.value}"


class InvalidCell(NamedTuple):
    row_id: str
    column: str
    value: str


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    values: tuple
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "categories", tuple(self.categories))
        if self.kind in CATEGORICAL_KINDS:
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"column {self.name!r}: duplicate categories")
            if self.kind == "binary" and len(self.categories) != 2:
                raise SchemaError(
                    f"binary column {self.name!r} needs exactly two categories, "
                    f"got {list(self.categories)}"
                )
            allowed = set(self.categories)
            for v in self.values:
                if v is not None and v not in allowed:
                    raise SchemaError(f"column {self.name!r}: value {v!r} not in categories")

    @property
    def is_categorical(self):
        return self.kind in CATEGORICAL_KINDS

    def __len__(self):
        return len(self.values)

    @cached_property
    def codes(self) -> np.ndarray:
        """Integer codes in category order; -1 marks a missing cell."""
        if not self.is_categorical:
            raise SchemaError(f"column {self.name!r} of kind {self.kind} has no codes")
        index = {c: i for i, c in enumerate(self.categories)}
        arr = np.array([-1 if v is None else index[v] for v in self.values], dtype=np.int32)
        arr.setflags(write=False)
        return arr

    def decode(self, codes: Iterable[int]) -> list:
        return [None if c < 0 else self.categories[c] for c in codes]

    def take(self, indices: Sequence[int]) -> "Column":
        return replace(self, values=tuple(self.values[i] for i in indices))

    def missing_count(self):
        if self.kind == "numeric":
            return sum(1 for v in self.values if v is None or (isinstance(v, float) and math.isnan(v)))
        return sum(1 for v in self.values if v is None)


@dataclass(frozen=True)
class AugmentedTable:
    columns: tuple[Column, ...]
    target: str
    row_ids: tuple[str, ...]
    invalid: tuple[InvalidCell, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "row_ids", tuple(str(r) for r in self.row_ids))
        object.__setattr__(self, "invalid", tuple(self.invalid))
        n = len(self.row_ids)
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")
        if len(set(self.row_ids)) != n:
            raise SchemaError("row ids must be unique")
        for c in self.columns:
            if len(c) != n:
                raise SchemaError(f"column {c.name!r} has {len(c)} cells, expected {n}")
        if self.target not in names:
            raise SchemaError(f"target column {self.target!r} not in table")
        if not self.column(self.target).is_categorical:
            raise SchemaError(f"target column {self.target!r} must be categorical or ordinal")

    @property
    def n_rows(self):
        return len(self.row_ids)

    @property
    def names(self):
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"no column named {name!r}")

    def __contains__(self, name):
        return name in self.names

    def take(self, indices: Sequence[int]) -> "AugmentedTable":
        indices = list(indices)
        keep = {self.row_ids[i] for i in indices}
        return replace(
            self,
            columns=tuple(c.take(indices) for c in self.columns),
            row_ids=tuple(self.row_ids[i] for i in indices),
            invalid=tuple(x for x in self.invalid if x.row_id in keep),
        )

    def with_column(self, col: Column) -> "AugmentedTable":
        cols = list(self.columns)
        for i, c in enumerate(cols):
            if c.name == col.name:
                cols[i] = col
                break
        else:
            cols.append(col)
        return replace(self, columns=tuple(cols))

    def without_columns(self, names: Iterable[str]) -> "AugmentedTable":
        drop = set(names)
        if self.target in drop:
            raise SchemaError("cannot drop the target column")
        return replace(self, columns=tuple(c for c in self.columns if c.name not in drop))

    def feature_columns(self) -> list[Column]:
        """Categorical, ordinal and binary columns other than the target."""
        return [c for c in self.columns if c.is_categorical and c.name != self.target]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 42

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


@dataclass(frozen=True)
class TargetBinning:
    """Maps raw target categories onto bin labels, e.g. {'1': 'good', '2': 'good'}."""

    mapping: Mapping[str, str]

    @classmethod
    def from_bins(cls, bins: Mapping[str, Iterable]) -> "TargetBinning":
        """Build from ``{label: [categories...]}``."""
        mapping = {}
        for label, cats in bins.items():
            for c in cats:
                c = str(c)
                if c in mapping:
                    raise SchemaError(f"category {c!r} assigned to two bins")
                mapping[c] = str(label)
        return cls(mapping)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.mapping.values()))


# --------------------------------------------------------------------------- #
# CSV input / output


def _natural_key(s):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def _infer_kind(name, cells):
    present = [c for c in cells if c is not None]
    if not present:
        return "text"
    uniques = set(present)
    if all(_is_number(c) for c in present):
        # small integer code sets (0/1 flags, 1..5 grades) are categories
        if len(uniques) <= 15 and all(float(c).is_integer() for c in uniques):
            return "categorical"
        return "numeric"
    mean_len = sum(len(c) for c in present) / len(present)
    if mean_len > 40 or len(uniques) > max(15, len(present) // 2):
        return "text"
    return "categorical"


def _hint(schema, name):
    h = (schema or {}).get(name)
    if h is None:
        return None, None
    if isinstance(h, str):
        return h, None
    return h.get("kind"), h.get("categories")


def load_csv(
    path,
    schema: Mapping | None = None,
    *,
    target: str | None = None,
    id_column: str | None = None,
    multilabel_sep: str = ";",
) -> AugmentedTable:
    """Read a UTF-8 CSV into an :class:`AugmentedTable`.

    ``schema`` maps column names either to a kind string or to a dict with
    ``kind`` and (for categorical kinds) an ordered ``categories`` list.
    Cells outside the declared categories become missing and are recorded in
    ``table.invalid``. Columns that come in ``name``/``name_code`` pairs (the
    export format) recover their category order from the codes.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8-sig")
    if not text.strip():
        raise ParseError(f"{path}: empty file", row=0)
    return _parse_csv(text, str(path), schema, target, id_column)


def read_csv_text(text: str, schema=None, *, target=None, id_column=None) -> AugmentedTable:
    if not text.strip():
        raise ParseError("empty CSV input", row=0)
    return _parse_csv(text, "<string>", schema, target, id_column)


def _parse_csv(text, source, schema, target, id_column):
    schema = dict(schema or {})
    target = target or schema.pop("__target__", None)
    id_column = id_column or schema.pop("__id__", None)
    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    try:
        rows = list(reader)
    except csv.Error as exc:
        raise ParseError(f"{source}: line {reader.line_num}: {exc}", row=reader.line_num) from exc
    header = rows[0]
    if len(set(header)) != len(header):
        raise ParseError(f"{source}: duplicate header names", row=1)
    body = [r for r in rows[1:] if r]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise ParseError(
                f"{source}: row {i + 2} has {len(r)} fields, expected {len(header)}", row=i + 2
            )
    if target is None:
        raise SchemaError("target column not specified")
    if target not in header:
        raise SchemaError(f"target column {target!r} absent from {source}")
    if id_column is not None and id_column not in header:
        raise SchemaError(f"id column {id_column!r} absent from {source}")

    raw = {h: [None if r[j] == "" else r[j] for r in body] for j, h in enumerate(header)}
    if id_column is not None:
        row_ids = [r or "" for r in raw.pop(id_column)]
    else:
        row_ids = [str(i) for i in range(len(body))]

    code_pairs = {
        h[: -len(CODE_SUFFIX)]
        for h in header
        if h.endswith(CODE_SUFFIX) and h[: -len(CODE_SUFFIX)] in raw
    }
    invalid = []
    columns = []
    for name in header:
        if name == id_column or name.endswith(CODE_SUFFIX) and name[: -len(CODE_SUFFIX)] in code_pairs:
            continue
        cells = raw[name]
        kind, cats = _hint(schema, name)
        if cats is None and name in code_pairs:
            cats = _categories_from_codes(cells, raw[name + CODE_SUFFIX])
        if kind is None:
            if name == target or cats is not None:
                kind = "categorical"
            else:
                kind = _infer_kind(name, cells)
            if kind == "categorical" and cats is not None and len(cats) == 2 and name != target:
                kind = "binary"
        if kind == "numeric":
            columns.append(Column(name, kind, [None if c is None else float(c) for c in cells]))
        elif kind == "text":
            columns.append(Column(name, kind, cells))
        else:
            if cats is None:
                cats = sorted({c for c in cells if c is not None}, key=_natural_key)
            cats = [str(c) for c in cats]
            allowed = set(cats)
            clean = []
            for rid, c in zip(row_ids, cells):
                if c is not None and c not in allowed:
                    invalid.append(InvalidCell(rid, name, c))
                    c = None
                clean.append(c)
            columns.append(Column(name, kind, clean, cats))
    return AugmentedTable(tuple(columns), target, tuple(row_ids), tuple(invalid))


def _categories_from_codes(cells, codes):
    pairs = {}
    for v, c in zip(cells, codes):
        if v is None or c is None:
            continue
        pairs.setdefault(int(c), v)
    return [pairs[k] for k in sorted(pairs)]


def write_csv(table: AugmentedTable, path, *, id_column: str = "row_id") -> None:
    """Export with original strings and ``_code`` columns side by side."""
    Path(path).write_text(to_csv_text(table, id_column=id_column), encoding="utf-8")


def _fmt_number(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def to_csv_text(table: AugmentedTable, *, id_column: str = "row_id") -> str:
    header = [id_column]
    for c in table.columns:
        header.append(c.name)
        if c.is_categorical:
            header.append(c.name + CODE_SUFFIX)
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i, rid in enumerate(table.row_ids):
        row = [rid]
        for c in table.columns:
            v = c.values[i]
            if c.kind == "numeric":
                row.append(_fmt_number(v))
            else:
                row.append("" if v is None else v)
            if c.is_categorical:
                code = int(c.codes[i])
                row.append("" if code < 0 else str(code))
        w.writerow(row)
    return buf.getvalue()


def schema_of(table: AugmentedTable) -> dict:
    """Schema hints that let :func:`load_csv` restore ``table`` exactly."""
    out = {"__target__": table.target}
    for c in table.columns:
        entry = {"kind": c.kind}
        if c.is_categorical:
            entry["categories"] = list(c.categories)
        out[c.name] = entry
    return out


# --------------------------------------------------------------------------- #
# encoding


def encode_ordinal(col: Column, order: Sequence[str]) -> Column:
    """Re-express ``col`` with categories in ``order`` (codes 0..k-1).

    Two-value orders keep the ``binary`` kind; longer ones become ``ordinal``.
    """
    order = [str(o) for o in order]
    if len(set(order)) != len(order):
        raise EncodingError(f"order for {col.name!r} has duplicates")
    allowed = set(order)
    bad = [(i, v) for i, v in enumerate(col.values) if v is not None and str(v) not in allowed]
    if bad:
        raise EncodingError(
            f"column {col.name!r}: values outside order {order}: "
            + ", ".join(f"row {i}={v!r}" for i, v in bad[:10]),
            offending=bad,
        )
    kind = "binary" if len(order) == 2 and col.kind in ("binary", "categorical") else "ordinal"
    values = [None if v is None else str(v) for v in col.values]
    return Column(col.name, kind, values, order)


def _label_column_name(prefix, label):
    slug = re.sub(r"[^0-9a-zA-Z]+", "_", label).strip("_").lower() or "label"
    return f"{prefix}_{slug}"


def explode_multilabel(col: Column, labels: Sequence[str], sep: str = ";") -> list[Column]:
    """One binary ``{0, 1}`` column per label for a set-valued column.

    Cells hold ``sep``-separated labels (or already-split tuples/lists).
    """
    labels = list(labels)
    names = [_label_column_name(col.name, lab) for lab in labels]
    seen = {}
    for i, n in enumerate(names):
        if n in seen:
            names[i] = f"{n}_{i}"
        seen[names[i]] = True
    known = set(labels)
    rows = []
    for r, cell in enumerate(col.values):
        if cell is None:
            present = set()
        elif isinstance(cell, (tuple, list, frozenset, set)):
            present = {str(x).strip() for x in cell}
        else:
            present = {p.strip() for p in str(cell).split(sep) if p.strip()}
        unknown = present - known
        if unknown:
            raise EncodingError(
                f"column {col.name!r} row {r}: unknown label(s) {sorted(unknown)}",
                offending=[(r, u) for u in sorted(unknown)],
            )
        rows.append(present)
    return [
        Column(name, "binary", ["1" if lab in present else "0" for present in rows], ("0", "1"))
        for name, lab in zip(names, labels)
    ]


# --------------------------------------------------------------------------- #
# splitting, binning, transactions


def split(table: AugmentedTable, spec: SplitSpec) -> tuple[AugmentedTable, AugmentedTable]:
    """Seeded shuffle of row positions followed by a prefix cut.

    The shuffle is ``numpy.random.default_rng(seed).permutation(n)`` (PCG64),
    whose stream numpy keeps stable for a given seed.
    """
    n = table.n_rows
    if n < 2:
        raise ValueError("need at least two rows to split")
    n_train = int(math.floor(n * spec.train_fraction + 0.5))
    if n_train <= 0 or n_train >= n:
        raise ValueError(
            f"train_fraction {spec.train_fraction} on {n} rows leaves an empty partition"
        )
    perm = np.random.default_rng(spec.seed).permutation(n)
    train_idx = sorted(perm[:n_train].tolist())
    test_idx = sorted(perm[n_train:].tolist())
    return table.take(train_idx), table.take(test_idx)


def stratified_sample(table: AugmentedTable, n: int, seed: int) -> AugmentedTable:
    """Seeded downsampling that keeps target proportions (largest remainder)."""
    if not 0 < n <= table.n_rows:
        raise ValueError(f"sample size {n} outside 1..{table.n_rows}")
    codes = table.column(table.target).codes
    groups = {}
    for i, c in enumerate(codes.tolist()):
        groups.setdefault(c, []).append(i)
    keys = sorted(groups)
    exact = [n * len(groups[k]) / table.n_rows for k in keys]
    quota = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(keys)), key=lambda j: (-(exact[j] - quota[j]), keys[j]))
    for j in order[: n - sum(quota)]:
        quota[j] += 1
    rng = np.random.default_rng(seed)
    chosen = []
    for k, q in zip(keys, quota):
        idx = np.array(groups[k])
        chosen.extend(rng.choice(idx, size=q, replace=False).tolist())
    return table.take(sorted(chosen))


def bin_target(table: AugmentedTable, binning: TargetBinning) -> AugmentedTable:
    """Replace the target with bin labels; unmapped categories become missing.

    Rows with a missing target stay in the table but are skipped by
    :func:`to_transactions`.
    """
    col = table.column(table.target)
    unknown = [c for c in binning.mapping if c not in col.categories]
    if unknown:
        raise SchemaError(
            f"binning refers to categories {unknown} absent from target {table.target!r} "
            f"(known: {list(col.categories)})"
        )
    values = [None if v is None else binning.mapping.get(v) for v in col.values]
    return table.with_column(Column(col.name, "categorical", values, binning.labels))


def excluded_rows(table: AugmentedTable) -> int:
    """Rows that mining skips because their target is missing."""
    return table.column(table.target).missing_count()


def to_transactions(
    table: AugmentedTable, attributes: Sequence[str] | None = None
) -> list[frozenset[Item]]:
    """Itemset view: one set of ``(attribute, value)`` items per row plus the target item.

    Missing cells contribute no item. Rows with a missing target are dropped.
    """
    if attributes is None:
        cols = table.feature_columns()
    else:
        cols = [table.column(a) for a in attributes]
        for c in cols:
            if not c.is_categorical:
                raise SchemaError(f"column {c.name!r} of kind {c.kind} cannot be mined")
            if c.name == table.target:
                raise SchemaError("the target cannot be a mined attribute")
    tcol = table.column(table.target)
    out = []
    for i in range(table.n_rows):
        t = tcol.values[i]
        if t is None:
            continue
        items = [Item(c.name, c.values[i]) for c in cols if c.values[i] is not None]
        items.append(Item(table.target, t))
        out.append(frozenset(items))
    return out


def from_records(
    records: Sequence[Mapping], target: str, kinds: Mapping | None = None, row_ids=None
) -> AugmentedTable:
    """Build a table from dict rows; handy for tests and synthetic data."""
    names = list(dict.fromkeys(k for r in records for k in r))
    lines = [names] + [["" if r.get(n) is None else str(r.get(n)) for n in names] for r in records]
    buf = io.StringIO(newline="")
    csv.writer(buf, lineterminator="\n").writerows(lines)
    table = read_csv_text(buf.getvalue(), kinds, target=target)
    if row_ids is not None:
        table = replace(table, row_ids=tuple(str(r) for r in row_ids))
    return table
