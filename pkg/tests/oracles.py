"""Brute-force reference implementations used to check the fast paths.

Nothing here imports the miner or the kernels; counts come from direct scans
over Python sets.
"""
from fractions import Fraction
from itertools import product


def all_antecedents(domains):
    """Every partial assignment (at most one value per attribute), non-empty."""
    attrs = sorted(domains)
    choices = [[None] + sorted(domains[a]) for a in attrs]
    for combo in product(*choices):
        ante = frozenset((a, v) for a, v in zip(attrs, combo) if v is not None)
        if ante:
            yield ante


def counts(rows, ante, target, state):
    cover = hits = 0
    for items, t in rows:
        if ante <= items:
            cover += 1
            if t == state:
                hits += 1
    return cover, hits


def classification_rules(rows, domains, target_state, min_support, min_conf):
    """rows: list of (frozenset of (attr, value), target). Returns {ante: (supp, cover)}."""
    out = {}
    for ante in all_antecedents(domains):
        cover, hits = counts(rows, ante, None, target_state)
        if cover and hits >= min_support and hits / cover >= min_conf:
            out[ante] = (hits, cover)
    return out


def action_rules(rows, domains, stable, flexible, s):
    """All qualifying (undesired, desired) rule pairs as comparable tuples.

    ``s`` is a dict with the mining thresholds and states. Uplift is
    evaluated with exact rationals.
    """
    n = len(rows)
    und = classification_rules(rows, domains, s["undesired"], s["min_u_supp"], s["min_u_conf"])
    des = classification_rules(rows, domains, s["desired"], s["min_d_supp"], s["min_d_conf"])
    found = set()
    for au, (su, cu) in und.items():
        st_u = {x for x in au if x[0] in stable}
        fl_u = {a: v for a, v in au if a in flexible}
        if len(st_u) < s["min_stable"]:
            continue
        for ad, (sd, cd) in des.items():
            st_d = {x for x in ad if x[0] in stable}
            fl_d = {a: v for a, v in ad if a in flexible}
            if st_u != st_d or set(fl_u) != set(fl_d):
                continue
            changed = sum(1 for a in fl_u if fl_u[a] != fl_d[a])
            if changed < s["min_flexible"]:
                continue
            conf_u = Fraction(su, cu)
            conf_d = Fraction(sd, cd)
            uplift = (conf_d - (1 - conf_u)) * (su / conf_u) / n
            if uplift < 0 and not s.get("keep_negative", False):
                continue
            actions = tuple(sorted((a, fl_u[a], fl_d[a]) for a in fl_u))
            found.add((tuple(sorted(st_u)), actions, su, sd, uplift))
    return found


def dominant(rules):
    """rules: list of (constraint frozenset, uplift). Returns indices kept."""
    keep = []
    for j, (cj, uj) in enumerate(rules):
        if not any(i != j and ci < cj and ui >= uj for i, (ci, ui) in enumerate(rules)):
            keep.append(j)
    return keep
