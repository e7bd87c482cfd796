import random
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from llmfeat.rules import MiningSettings
from llmfeat.table import from_records

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"
PIPELINE = FIXTURES / "pipeline"


@pytest.fixture
def pipeline_dir():
    return PIPELINE


def random_mining_case(seed, max_attrs=6, max_cats=4, max_rows=200):
    """A random categorical table plus matching miner settings and oracle inputs."""
    rng = random.Random(seed)
    n_attrs = rng.randint(2, max_attrs)
    attrs = [f"a{k}" for k in range(n_attrs)]
    domains = {a: [f"v{j}" for j in range(rng.randint(2, max_cats))] for a in attrs}
    n = rng.randint(20, max_rows)
    states = ["bad", "good", "avg"]
    # skew the target on the first attribute so rules exist
    records = []
    for _ in range(n):
        rec = {a: rng.choice(domains[a]) for a in attrs}
        bias = domains[attrs[0]].index(rec[attrs[0]]) / max(1, len(domains[attrs[0]]) - 1)
        r = rng.random()
        rec["y"] = "good" if r < 0.2 + 0.5 * bias else ("bad" if r < 0.85 else "avg")
        records.append(rec)
    table = from_records(records, target="y", kinds={a: "categorical" for a in attrs})

    shuffled = attrs[:]
    rng.shuffle(shuffled)
    n_stable = rng.randint(0, min(2, n_attrs - 1))
    stable = shuffled[:n_stable]
    flexible = shuffled[n_stable:n_stable + rng.randint(1, n_attrs - n_stable)]
    cfg = MiningSettings(
        stable_attributes=stable, flexible_attributes=flexible, target="y",
        undesired_state="bad", desired_state="good",
        min_stable=rng.randint(0, len(stable)),
        min_flexible=rng.randint(1, min(2, len(flexible))),
        min_undesired_support=rng.randint(1, max(1, n // 10)),
        min_desired_support=rng.randint(1, max(1, n // 10)),
        min_undesired_confidence=rng.choice([0.2, 0.3, 0.5, 0.6]),
        min_desired_confidence=rng.choice([0.2, 0.3, 0.5, 0.6]),
        keep_negative=rng.random() < 0.3,
    )
    used = set(stable) | set(flexible)
    rows = [(frozenset((a, rec[a]) for a in used), rec["y"]) for rec in records]
    oracle_settings = {
        "undesired": "bad", "desired": "good",
        "min_u_supp": cfg.min_undesired_support, "min_d_supp": cfg.min_desired_support,
        "min_u_conf": cfg.min_undesired_confidence, "min_d_conf": cfg.min_desired_confidence,
        "min_stable": cfg.min_stable, "min_flexible": cfg.min_flexible,
        "keep_negative": cfg.keep_negative,
    }
    sub_domains = {a: domains[a] for a in used}
    return table, cfg, rows, sub_domains, set(stable), set(flexible), oracle_settings


def as_comparable(rule):
    return (
        tuple(sorted((i.attribute, i.value) for i in rule.stable_conditions)),
        tuple(sorted(tuple(a) for a in rule.actions)),
        rule.undesired_rule.support,
        rule.desired_rule.support,
    )


_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _CRITERIA[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda s: int(s.split("_")[2])):
        outcome = "PASS" if _CRITERIA[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{outcome}  {name}")
