import json
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import as_comparable, random_mining_case
from llmfeat.errors import SettingsError
from llmfeat.rules import (
    Action, ActionRule, ClassificationRule, MiningSettings, RuleReport, compute_uplift,
    format_report, mine_action_rules, mine_classification_rules, pair_action_rules,
    reduce_dominant, uplift_value,
)
from llmfeat.table import Item, from_records, to_transactions

ATTRS = ["a", "b", "c"]
row_strategy = st.lists(
    st.tuples(st.sampled_from(["x", "y", None]), st.sampled_from(["x", "y"]),
              st.sampled_from(["p", "q", "r"]), st.sampled_from(["good", "bad"])),
    min_size=1, max_size=60,
)


def _table(rows):
    recs = [{"a": a, "b": b, "c": c, "t": t} for a, b, c, t in rows]
    return from_records(recs, target="t", kinds={k: "categorical" for k in ATTRS})


@given(row_strategy, st.integers(1, 5), st.sampled_from([0.1, 0.5, 0.75, 1.0]))
def test_classification_rules_match_brute_force(rows, min_support, min_conf):
    table = _table(rows)
    got = mine_classification_rules(to_transactions(table), Item("t", "bad"), min_support,
                                    min_conf, ATTRS)
    tx = [(frozenset((a, v) for a, v in zip(ATTRS, r[:3]) if v is not None), r[3]) for r in rows]
    domains = {a: sorted({r[i] for r in rows if r[i] is not None}) for i, a in enumerate(ATTRS)}
    domains = {a: d for a, d in domains.items() if d}
    want = oracles.classification_rules(tx, domains, "bad", min_support, min_conf)
    assert {frozenset(r.antecedent): (r.support, r.cover) for r in got} == \
        {frozenset(Item(*i) for i in k): v for k, v in want.items()}
    for r in got:
        assert r.confidence == r.support / r.cover


def test_classification_rule_validation():
    with pytest.raises(ValueError):
        ClassificationRule((), Item("t", "x"), 1, 1.0)
    with pytest.raises(ValueError):
        ClassificationRule((Item("a", "1"), Item("a", "2")), Item("t", "x"), 1, 1.0)


def test_mining_requires_thresholds():
    with pytest.raises(ValueError):
        mine_classification_rules([], Item("t", "x"), 0, 0.5, ["a"])
    assert mine_classification_rules([], Item("t", "x"), 1, 0.5, ["a"]) == []


@pytest.mark.parametrize("kwargs", [
    {"stable_attributes": ["a"], "flexible_attributes": ["a"]},
    {"flexible_attributes": ["t"]},
    {"desired_state": "bad"},
    {"min_flexible": 0},
    {"min_stable": -1},
    {"min_undesired_support": 0},
    {"min_desired_confidence": 0.0},
])
def test_settings_validation(kwargs):
    base = dict(stable_attributes=["a"], flexible_attributes=["b"], target="t",
                undesired_state="bad", desired_state="good")
    base.update(kwargs)
    with pytest.raises(SettingsError):
        MiningSettings(**base)


def test_settings_config_round_trip():
    s = MiningSettings(("area",), ("rigor", "novelty"), "evaluation", "bad", "good",
                       min_stable=1, min_undesired_support=40, min_desired_confidence=0.7)
    assert MiningSettings.from_config(s.to_config()) == s
    with pytest.raises(SettingsError):
        MiningSettings.from_config({"target": "t"})


@pytest.mark.parametrize("seed", range(100, 130))
def test_action_rules_match_oracle(seed):
    table, cfg, rows, domains, stable, flexible, s = random_mining_case(seed, max_rows=120)
    got = mine_action_rules(table, cfg, dominant=False).discovered
    want = oracles.action_rules(rows, domains, stable, flexible, s)
    assert {as_comparable(r) for r in got} == {w[:4] for w in want}
    exact = {w[:4]: w[4] for w in want}
    for r in got:
        assert r.uplift == pytest.approx(float(exact[as_comparable(r)]), abs=1e-12)


@pytest.mark.parametrize("seed", range(200, 215))
def test_action_rule_invariants(seed):
    table, cfg, *_ = random_mining_case(seed)
    report = mine_action_rules(table, cfg)
    for r in report.discovered:
        assert all(i.attribute in cfg.stable_attributes for i in r.stable_conditions)
        assert all(a.attribute in cfg.flexible_attributes for a in r.actions)
        assert len(r.changes) >= cfg.min_flexible
        assert len(r.stable_conditions) >= cfg.min_stable
        assert cfg.keep_negative or r.uplift >= 0
    assert list(report.discovered) == sorted(report.discovered, key=ActionRule.sort_key)
    assert set(report.dominant) <= set(report.discovered)


def test_min_stable_fixes_rules_to_an_area():
    recs = []
    for area in ("chem", "bio"):
        recs += [{"area": area, "rigor": "medium", "y": "bad"}] * 8
        recs += [{"area": area, "rigor": "medium", "y": "good"}] * 2
        recs += [{"area": area, "rigor": "high", "y": "good"}] * 8
        recs += [{"area": area, "rigor": "high", "y": "bad"}] * 2
    table = from_records(recs, target="y")
    base = dict(stable_attributes=["area"], flexible_attributes=["rigor"], target="y",
                undesired_state="bad", desired_state="good", min_undesired_support=2,
                min_desired_support=2, min_undesired_confidence=0.6, min_desired_confidence=0.6)
    free = mine_action_rules(table, MiningSettings(**base)).discovered
    fixed = mine_action_rules(table, MiningSettings(**base, min_stable=1)).discovered
    assert any(not r.stable_conditions for r in free)
    assert fixed and all(r.stable_conditions for r in fixed)
    # (0.8 - 0.2) * 10 / 40 per area, (0.8 - 0.2) * 20 / 40 overall
    assert {round(r.uplift, 12) for r in fixed} == {0.15}
    assert max(r.uplift for r in free) == pytest.approx(0.3)


def test_negative_uplift_dropped_unless_kept():
    ru = ClassificationRule((Item("f", "x"),), Item("t", "bad"), 6, 0.6, 10)
    rd = ClassificationRule((Item("f", "y"),), Item("t", "good"), 2, 0.2, 10)
    s = MiningSettings((), ("f",), "t", "bad", "good")
    assert compute_uplift(ru, rd, 100) < 0
    assert pair_action_rules([ru], [rd], s, 100) == []
    kept = pair_action_rules([ru], [rd], MiningSettings((), ("f",), "t", "bad", "good",
                                                        keep_negative=True), 100)
    assert len(kept) == 1 and kept[0].uplift == pytest.approx(-0.02)


def test_uplift_count_and_confidence_forms_agree():
    ru = ClassificationRule((Item("f", "x"),), Item("t", "bad"), 50, 50 / 70, 70)
    rd = ClassificationRule((Item("f", "y"),), Item("t", "good"), 249, 249 / 349, 349)
    by_counts = compute_uplift(ru, rd, 2000)
    by_conf = uplift_value(249 / 349, 50 / 70, 50, 2000)
    assert by_counts == pytest.approx(by_conf, abs=1e-15)
    exact = (Fraction(249, 349) - (1 - Fraction(50, 70))) * 70 / 2000
    assert by_counts == pytest.approx(float(exact), abs=1e-15)
    with pytest.raises(ValueError):
        uplift_value(0.5, 0.0, 1, 10)


def _rule(acts, up, stable=()):
    ru = ClassificationRule(tuple(Item(a, b) for a, b, _ in acts) + stable, Item("t", "u"), 1, 1.0)
    rd = ClassificationRule(tuple(Item(a, c) for a, _, c in acts) + stable, Item("t", "d"), 1, 1.0)
    return ActionRule(stable, tuple(Action(*x) for x in acts), ru, rd, "t", "u", "d", up)


rule_sets = st.lists(
    st.tuples(
        st.frozensets(st.sampled_from(["a", "b", "c"]), min_size=1),
        st.sampled_from(["p", "q"]),
        st.sampled_from([0.0, 0.01, 0.03, 0.1]),
    ),
    max_size=10,
)


@given(rule_sets)
def test_dominance_properties(spec):
    rules = [_rule([(a, "p", "q" if k == 0 else v) for k, a in enumerate(sorted(attrs))], up)
             for attrs, v, up in spec]
    kept = reduce_dominant(rules)
    assert reduce_dominant(kept) == kept
    assert set(map(str, kept)) <= set(map(str, rules))
    idx = oracles.dominant([(r.constraints(), r.uplift) for r in rules])
    assert sorted(map(str, kept)) == sorted(str(rules[i]) for i in idx)


def test_dominance_tie_keeps_shorter_rule():
    short = _rule([("rigor", "medium", "high")], 0.1)
    long = _rule([("rigor", "medium", "high"), ("grammar", "1", "0")], 0.1)
    assert reduce_dominant([long, short]) == [short]
    better = _rule([("rigor", "medium", "high"), ("grammar", "1", "0")], 0.2)
    assert set(map(str, reduce_dominant([short, better]))) == {str(short), str(better)}


def test_report_serialisation_and_text():
    table, cfg, *_ = random_mining_case(3)
    report = mine_action_rules(table, cfg)
    body = report.to_dict()
    json.dumps(body)
    assert body["discovered_count"] == len(report.discovered)
    assert "dominant" in body
    no_dom = mine_action_rules(table, cfg, dominant=False)
    assert no_dom.dominant is None and "dominant" not in no_dom.to_dict()
    text = format_report(report)
    assert "discovered action rules" in text and "uplift %" in text
    assert "dominant action rules" not in format_report(no_dom)
    assert isinstance(report, RuleReport)


@given(row_strategy, st.integers(1, 4), st.sampled_from([0.2, 0.5, 0.8]))
def test_rules_recount_and_downward_closure(rows, min_support, min_conf):
    tx = to_transactions(_table(rows))
    target = Item("t", "bad")
    for r in mine_classification_rules(tx, target, min_support, min_conf, ATTRS):
        ante = set(r.antecedent)
        cover = sum(ante <= t for t in tx)
        support = sum(ante <= t and target in t for t in tx)
        assert (r.support, r.cover, r.confidence) == (support, cover, support / cover)
        for drop in r.antecedent:
            sub = ante - {drop}
            assert sum(sub <= t for t in tx) >= r.support


@given(st.integers(1, 500), st.integers(1, 500), st.integers(1, 500), st.integers(1, 500),
       st.integers(1, 5000))
def test_uplift_sign(su, cu_extra, sd, cd_extra, n):
    cu, cd = su + cu_extra - 1, sd + cd_extra - 1
    ru = ClassificationRule((Item("f", "x"),), Item("t", "bad"), su, su / cu, cu)
    rd = ClassificationRule((Item("f", "y"),), Item("t", "good"), sd, sd / cd, cd)
    up = compute_uplift(ru, rd, n)
    total = Fraction(sd, cd) + Fraction(su, cu)
    assert (up > 0) == (total > 1)
    assert (up == 0) == (total == 1)


@pytest.mark.parametrize("seed,k", [(300, 2), (301, 3), (302, 2), (303, 4)])
def test_replicating_transactions_scales_support_only(seed, k):
    table, cfg, *_ = random_mining_case(seed, max_rows=80)
    base = mine_action_rules(table, cfg, dominant=False).discovered
    names = [c.name for c in table.columns]
    recs = [dict(zip(names, vals)) for vals in zip(*(c.values for c in table.columns))] * k
    big = from_records(recs, target="y", kinds={n: "categorical" for n in names if n != "y"})
    scaled = MiningSettings.from_config({
        **cfg.to_config(),
        "min_undesired_support": cfg.min_undesired_support * k,
        "min_desired_support": cfg.min_desired_support * k,
    })
    rep = mine_action_rules(big, scaled, dominant=False).discovered
    assert len(rep) == len(base)
    for a, b in zip(base, rep):
        assert b.undesired_rule.support == k * a.undesired_rule.support
        assert b.undesired_rule.confidence == pytest.approx(a.undesired_rule.confidence)
        assert b.desired_rule.confidence == pytest.approx(a.desired_rule.confidence)
        assert b.uplift == pytest.approx(a.uplift, abs=1e-12)
