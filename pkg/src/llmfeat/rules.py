"""Classification rules, action rules, uplift and dominant-rule reduction.

Classification rules ``antecedent => target=value`` are enumerated levelwise
over an integer-coded view of the data. Action rules pair an undesired-state
rule with a desired-state rule that agree on stable conditions and differ on
at least ``min_flexible`` flexible attributes.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import SchemaError, SettingsError
from .table import AugmentedTable, Item, excluded_rows


@dataclass(frozen=True)
class ClassificationRule:
    antecedent: tuple[Item, ...]
    consequent: Item
    support: int
    confidence: float
    cover: int | None = None

    def __post_init__(self):
        ante = tuple(sorted(Item(*i) for i in self.antecedent))
        if not ante:
            raise ValueError("antecedent needs at least one item")
        attrs = [i.attribute for i in ante]
        if len(set(attrs)) != len(attrs):
            raise ValueError(f"antecedent repeats an attribute: {ante}")
        object.__setattr__(self, "antecedent", ante)
        object.__setattr__(self, "consequent", Item(*self.consequent))

    def __str__(self):
        lhs = " & ".join(str(i) for i in self.antecedent)
        return f"{lhs} => {self.consequent} (supp={self.support}, conf={self.confidence:.3f})"


class Action(NamedTuple):
    attribute: str
    before: str
    after: str

    @property
    def changes(self):
        return self.before != self.after

    def __str__(self):
        if self.changes:
            return f"{self.attribute}=({self.before} -> {self.after})"
        return f"{self.attribute}={self.before}"


@dataclass(frozen=True)
class MiningSettings:
    stable_attributes: tuple[str, ...]
    flexible_attributes: tuple[str, ...]
    target: str
    undesired_state: str
    desired_state: str
    min_stable: int = 0
    min_flexible: int = 1
    min_undesired_support: int = 1
    min_desired_support: int = 1
    min_undesired_confidence: float = 0.5
    min_desired_confidence: float = 0.5
    keep_negative: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stable_attributes", tuple(self.stable_attributes))
        object.__setattr__(self, "flexible_attributes", tuple(self.flexible_attributes))
        object.__setattr__(self, "undesired_state", str(self.undesired_state))
        object.__setattr__(self, "desired_state", str(self.desired_state))
        both = set(self.stable_attributes) & set(self.flexible_attributes)
        if both:
            raise SettingsError(f"attributes both stable and flexible: {sorted(both)}")
        if self.target in self.stable_attributes or self.target in self.flexible_attributes:
            raise SettingsError("the target cannot be a stable or flexible attribute")
        if self.undesired_state == self.desired_state:
            raise SettingsError("undesired and desired states must differ")
        if self.min_flexible < 1:
            raise SettingsError("min_flexible must be at least 1")
        if self.min_stable < 0:
            raise SettingsError("min_stable cannot be negative")
        if self.min_undesired_support < 1 or self.min_desired_support < 1:
            raise SettingsError("minimum supports must be at least 1")
        for c in (self.min_undesired_confidence, self.min_desired_confidence):
            if not 0 < c <= 1:
                raise SettingsError(f"confidence threshold {c} outside (0, 1]")

    @property
    def attributes(self):
        return self.stable_attributes + self.flexible_attributes

    # field names as used in experiment configuration files
    _CONFIG_KEYS = {
        "stable_attributes": "stable_attributes",
        "flexible_attributes": "flexible_attributes",
        "min_stable_attributes": "min_stable",
        "min_flexible_attributes": "min_flexible",
        "min_undesired_support": "min_undesired_support",
        "min_desired_support": "min_desired_support",
        "min_undesired_confidence": "min_undesired_confidence",
        "min_desired_confidence": "min_desired_confidence",
        "target": "target",
        "undesired_state": "undesired_state",
        "desired_state": "desired_state",
        "keep_negative_uplift": "keep_negative",
    }

    @classmethod
    def from_config(cls, section: Mapping) -> "MiningSettings":
        kwargs = {}
        for key, value in section.items():
            if key in cls._CONFIG_KEYS:
                kwargs[cls._CONFIG_KEYS[key]] = value
        missing = {"stable_attributes", "flexible_attributes", "target",
                   "undesired_state", "desired_state"} - set(kwargs)
        if missing:
            raise SettingsError(f"mining settings missing {sorted(missing)}")
        return cls(**kwargs)

    def to_config(self) -> dict:
        inv = {v: k for k, v in self._CONFIG_KEYS.items()}
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            out[inv[name]] = list(v) if isinstance(v, tuple) else v
        return out


@dataclass(frozen=True)
class ActionRule:
    stable_conditions: tuple[Item, ...]
    actions: tuple[Action, ...]
    undesired_rule: ClassificationRule
    desired_rule: ClassificationRule
    target: str
    undesired_state: str
    desired_state: str
    uplift: float

    @property
    def changes(self) -> tuple[Action, ...]:
        return tuple(a for a in self.actions if a.changes)

    @property
    def context(self) -> tuple[Action, ...]:
        return tuple(a for a in self.actions if not a.changes)

    def constraints(self) -> frozenset:
        """Attribute-level conditions used for dominance comparisons."""
        out = {(i.attribute, i.value, i.value) for i in self.stable_conditions}
        out.update(tuple(a) for a in self.actions)
        return frozenset(out)

    def __str__(self):
        parts = [str(i) for i in self.stable_conditions] + [str(a) for a in self.actions]
        lhs = " & ".join(parts)
        return (f"{lhs} => {self.target}=({self.undesired_state} -> {self.desired_state})"
                f" [uplift={100 * self.uplift:.2f}%]")

    def sort_key(self):
        return (-self.uplift, str(self))

    def to_dict(self) -> dict:
        return {
            "stable_conditions": [[i.attribute, i.value] for i in self.stable_conditions],
            "actions": [[a.attribute, a.before, a.after] for a in self.actions],
            "target": self.target,
            "undesired_state": self.undesired_state,
            "desired_state": self.desired_state,
            # rounded so serialized reports do not depend on last-bit float noise
            "uplift": round(self.uplift, 12),
            "undesired_support": self.undesired_rule.support,
            "undesired_confidence": round(self.undesired_rule.confidence, 12),
            "desired_support": self.desired_rule.support,
            "desired_confidence": round(self.desired_rule.confidence, 12),
        }


@dataclass(frozen=True)
class RuleReport:
    settings: MiningSettings
    discovered: tuple[ActionRule, ...]
    dominant: tuple[ActionRule, ...] | None
    dataset_size: int
    excluded_rows: int = 0

    def to_dict(self) -> dict:
        out = {
            "settings": self.settings.to_config(),
            "dataset_size": self.dataset_size,
            "excluded_rows": self.excluded_rows,
            "discovered_count": len(self.discovered),
            "discovered": [r.to_dict() for r in self.discovered],
        }
        if self.dominant is not None:
            out["dominant_count"] = len(self.dominant)
            out["dominant"] = [r.to_dict() for r in self.dominant]
        return out


# --------------------------------------------------------------------------- #
# uplift


def uplift_value(conf_desired: float, conf_undesired: float, supp_undesired: float,
                 dataset_size: int) -> float:
    if conf_undesired <= 0:
        raise ValueError("undesired confidence must be positive")
    if dataset_size < 1:
        raise ValueError("dataset size must be at least 1")
    return ((conf_desired - (1 - conf_undesired)) * (supp_undesired / conf_undesired)
            / dataset_size)


def compute_uplift(r_undesired: ClassificationRule, r_desired: ClassificationRule,
                   dataset_size: int) -> float:
    """Share of the whole dataset expected to move from the undesired to the desired state.

    The undesired rule's cover (support / confidence) is the population the
    action applies to; the net gain per covered instance is the desired
    confidence minus the rate at which that population was already desired.
    When both covers are known the value is computed from the counts, so a
    zero uplift comes out exactly zero.
    """
    cu, cd = r_undesired.cover, r_desired.cover
    if cu and cd:
        if dataset_size < 1:
            raise ValueError("dataset size must be at least 1")
        return (r_desired.support * cu / cd - (cu - r_undesired.support)) / dataset_size
    return uplift_value(r_desired.confidence, r_undesired.confidence,
                        r_undesired.support, dataset_size)


# --------------------------------------------------------------------------- #
# levelwise enumeration


class _Encoded(NamedTuple):
    attributes: tuple[str, ...]
    categories: tuple[tuple[str, ...], ...]
    codes: np.ndarray  # (n, m) int32, -1 = missing
    target: np.ndarray  # (n,) int32 class index
    classes: tuple[str, ...]


def _enumerate(enc: _Encoded, keep: Callable[[np.ndarray], bool]) -> dict:
    """All antecedents whose per-class tally satisfies ``keep``.

    ``keep`` must be anti-monotone (if it rejects an itemset it rejects all
    supersets). Returns ``{((attr_idx, code), ...): tally}`` with attribute
    indices strictly increasing inside each key.
    """
    n, m = enc.codes.shape
    n_classes = len(enc.classes)
    max_card = max((len(c) for c in enc.categories), default=0)
    found: dict = {}
    if n == 0 or m == 0 or max_card == 0:
        return found

    frontier = [((), np.arange(n, dtype=np.int64))]
    level_keys: set = {()}
    while frontier:
        next_frontier = []
        next_keys = set()
        for key, rows in frontier:
            start = key[-1][0] + 1 if key else 0
            ext = np.arange(start, m, dtype=np.int64)
            if len(ext) == 0 or len(rows) == 0:
                continue
            tally = kernels.extension_tally(rows, enc.codes, ext, max_card, enc.target, n_classes)
            for j, a in enumerate(ext.tolist()):
                for v in range(len(enc.categories[a])):
                    t = tally[j, v]
                    if not keep(t):
                        continue
                    new = key + ((a, v),)
                    # downward closure: every one-smaller subset must have survived
                    if len(new) >= 2 and any(
                        sub not in level_keys for sub in combinations(new, len(new) - 1)
                    ):
                        continue
                    found[new] = t.copy()
                    sub_rows = rows[enc.codes[rows, a] == v]
                    next_frontier.append((new, sub_rows))
                    next_keys.add(new)
        frontier = next_frontier
        level_keys = next_keys
    return found


def _encode_transactions(transactions, target_item: Item, universe) -> _Encoded:
    target_item = Item(*target_item)
    attrs = sorted(set(universe) - {target_item.attribute})
    pos = {a: i for i, a in enumerate(attrs)}
    values: list[set] = [set() for _ in attrs]
    for t in transactions:
        for it in t:
            if it.attribute in pos:
                values[pos[it.attribute]].add(it.value)
    categories = tuple(tuple(sorted(v)) for v in values)
    index = [{c: k for k, c in enumerate(cats)} for cats in categories]
    codes = np.full((len(transactions), len(attrs)), -1, dtype=np.int32)
    target = np.zeros(len(transactions), dtype=np.int32)
    for r, t in enumerate(transactions):
        for it in t:
            j = pos.get(it.attribute)
            if j is None:
                continue
            if codes[r, j] != -1:
                raise ValueError(f"transaction {r} has two items for {it.attribute!r}")
            codes[r, j] = index[j][it.value]
        if target_item in t:
            target[r] = 1
    return _Encoded(tuple(attrs), categories, codes, target, ("other", "target"))


def mine_classification_rules(
    transactions: Sequence[Iterable[Item]],
    target_item: Item,
    min_support: int,
    min_confidence: float,
    attribute_universe: Iterable[str],
) -> list[ClassificationRule]:
    """Every rule ``phi => target_item`` meeting both thresholds.

    Support is the absolute number of transactions holding the antecedent and
    the target; confidence divides it by the antecedent's cover. Antecedents
    use at most one item per attribute from ``attribute_universe``.
    """
    if min_support < 1:
        raise ValueError("min_support must be at least 1")
    if not 0 < min_confidence <= 1:
        raise ValueError("min_confidence must be in (0, 1]")
    transactions = [frozenset(Item(*i) for i in t) for t in transactions]
    target_item = Item(*target_item)
    if not transactions:
        return []
    enc = _encode_transactions(transactions, target_item, attribute_universe)
    found = _enumerate(enc, lambda t: t[1] >= min_support)
    rules = []
    for key, tally in found.items():
        supp, cover = int(tally[1]), int(tally.sum())
        conf = supp / cover
        if conf >= min_confidence:
            ante = tuple(Item(enc.attributes[a], enc.categories[a][v]) for a, v in key)
            rules.append(ClassificationRule(ante, target_item, supp, conf, cover))
    rules.sort(key=lambda r: (len(r.antecedent), r.antecedent))
    return rules


# --------------------------------------------------------------------------- #
# action rules


def _split_antecedent(rule: ClassificationRule, stable: set, flexible: set):
    st, fl = [], {}
    for it in rule.antecedent:
        if it.attribute in stable:
            st.append(it)
        elif it.attribute in flexible:
            fl[it.attribute] = it.value
        else:
            raise SettingsError(
                f"rule item {it} uses an attribute that is neither stable nor flexible"
            )
    return tuple(sorted(st)), fl


def pair_action_rules(
    undesired_rules: Sequence[ClassificationRule],
    desired_rules: Sequence[ClassificationRule],
    settings: MiningSettings,
    dataset_size: int,
) -> list[ActionRule]:
    """Combine undesired/desired classification rules into action rules.

    A pair qualifies when both rules carry the same stable items and the same
    set of flexible attributes, at least ``min_flexible`` of those attributes
    change value, and the stable part has ``min_stable`` items or more.
    Flexible attributes that keep their value appear as unchanged context.
    """
    stable = set(settings.stable_attributes)
    flexible = set(settings.flexible_attributes)
    u_item = Item(settings.target, settings.undesired_state)
    d_item = Item(settings.target, settings.desired_state)

    groups: dict = {}
    for r in desired_rules:
        if r.consequent != d_item:
            continue
        st, fl = _split_antecedent(r, stable, flexible)
        if len(st) < settings.min_stable or len(fl) < settings.min_flexible:
            continue
        groups.setdefault((st, frozenset(fl)), []).append((r, fl))

    out = []
    for ru in undesired_rules:
        if ru.consequent != u_item:
            continue
        st, fl_u = _split_antecedent(ru, stable, flexible)
        if len(st) < settings.min_stable or len(fl_u) < settings.min_flexible:
            continue
        for rd, fl_d in groups.get((st, frozenset(fl_u)), ()):
            actions = tuple(Action(a, fl_u[a], fl_d[a]) for a in sorted(fl_u))
            if sum(a.changes for a in actions) < settings.min_flexible:
                continue
            up = compute_uplift(ru, rd, dataset_size)
            if up < 0 and not settings.keep_negative:
                continue
            out.append(ActionRule(st, actions, ru, rd, settings.target,
                                  settings.undesired_state, settings.desired_state, up))
    out.sort(key=ActionRule.sort_key)
    return out


def reduce_dominant(rules: Sequence[ActionRule]) -> list[ActionRule]:
    """Drop every rule that a strictly smaller rule matches or beats on uplift."""
    rules = list(rules)
    cons = [r.constraints() for r in rules]
    keep = []
    for j, b in enumerate(rules):
        dominated = any(
            i != j and cons[i] < cons[j] and rules[i].uplift >= b.uplift
            for i in range(len(rules))
        )
        if not dominated:
            keep.append(b)
    keep.sort(key=ActionRule.sort_key)
    return keep


def _encode_table(table: AugmentedTable, settings: MiningSettings) -> _Encoded:
    if settings.target != table.target:
        raise SettingsError(
            f"settings target {settings.target!r} differs from table target {table.target!r}"
        )
    tcol = table.column(table.target)
    for state in (settings.undesired_state, settings.desired_state):
        if state not in tcol.categories:
            raise SettingsError(
                f"state {state!r} is not a category of {table.target!r} "
                f"(known: {list(tcol.categories)})"
            )
    attrs = list(settings.attributes)
    cols = []
    for a in attrs:
        if a not in table:
            raise SchemaError(f"mining attribute {a!r} missing from table")
        c = table.column(a)
        if not c.is_categorical:
            raise SchemaError(f"mining attribute {a!r} has kind {c.kind}")
        cols.append(c)
    mask = tcol.codes >= 0
    codes = (np.stack([c.codes for c in cols], axis=1)[mask] if cols
             else np.zeros((int(mask.sum()), 0), dtype=np.int32))
    return _Encoded(tuple(attrs), tuple(c.categories for c in cols),
                    np.ascontiguousarray(codes, dtype=np.int32),
                    np.ascontiguousarray(tcol.codes[mask], dtype=np.int32),
                    tcol.categories)


def mine_action_rules(table: AugmentedTable, settings: MiningSettings,
                      dominant: bool = True) -> RuleReport:
    """Discover action rules on ``table`` (already binned) under ``settings``.

    Rows whose target is missing are left out; the remaining row count is the
    dataset size used for uplift. Candidates are pruned as soon as neither
    the undesired nor the desired support threshold can still be met.
    """
    enc = _encode_table(table, settings)
    n = len(enc.target)
    u = enc.classes.index(settings.undesired_state)
    d = enc.classes.index(settings.desired_state)
    su, sd = settings.min_undesired_support, settings.min_desired_support
    found = _enumerate(enc, lambda t: t[u] >= su or t[d] >= sd)

    u_item = Item(settings.target, settings.undesired_state)
    d_item = Item(settings.target, settings.desired_state)
    undesired, desired = [], []
    for key, tally in found.items():
        cover = int(tally.sum())
        ante = tuple(Item(enc.attributes[a], enc.categories[a][v]) for a, v in key)
        if tally[u] >= su and tally[u] / cover >= settings.min_undesired_confidence:
            undesired.append(ClassificationRule(ante, u_item, int(tally[u]),
                                                float(tally[u]) / cover, cover))
        if tally[d] >= sd and tally[d] / cover >= settings.min_desired_confidence:
            desired.append(ClassificationRule(ante, d_item, int(tally[d]),
                                              float(tally[d]) / cover, cover))

    discovered = pair_action_rules(undesired, desired, settings, n) if n else []
    dom = reduce_dominant(discovered) if dominant else None
    return RuleReport(settings, tuple(discovered), None if dom is None else tuple(dom), n,
                      excluded_rows(table))


# --------------------------------------------------------------------------- #
# reporting


def format_rule_table(rules: Sequence[ActionRule], title: str | None = None) -> str:
    """Plain-text table: id, stable conditions, actions, target transition, uplift %."""
    header = ("rule", "stable conditions", "actions", "target", "uplift %")
    rows = []
    for k, r in enumerate(rules, 1):
        rows.append((
            f"r{k}",
            ", ".join(str(i) for i in r.stable_conditions) or "-",
            ", ".join(str(a) for a in r.actions),
            f"{r.target}=({r.undesired_state} -> {r.desired_state})",
            f"{100 * r.uplift:.2f}",
        ))
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def format_report(report: RuleReport) -> str:
    s = report.settings
    head = (f"target {s.target}: {s.undesired_state} -> {s.desired_state}; "
            f"|D| = {report.dataset_size} (excluded {report.excluded_rows})\n")
    out = head + format_rule_table(report.discovered,
                                   f"discovered action rules: {len(report.discovered)}")
    if report.dominant is not None:
        out += "\n" + format_rule_table(report.dominant,
                                        f"dominant action rules: {len(report.dominant)}")
    return out
