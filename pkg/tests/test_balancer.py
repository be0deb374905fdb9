import pytest
from hypothesis import given, settings, strategies as st

from anonpads.balancer import (BalancerConfig, InteractionWindow, migration_stats,
                               plan_migrations, record_interaction)
from anonpads.cluster import run_cluster
from anonpads.engine import RunMetrics

from fixtures import CROSS_HOSTED, two_clique_config

ON = BalancerConfig(enabled=True)


def test_record_into_fresh_window():
    w = record_interaction(InteractionWindow(10), 1, 2, 3)
    assert w.buckets(1) == [{2: 3}]


def test_same_step_accumulates():
    w = InteractionWindow(10)
    w.record(1, 2, 3, step=4)
    w.record(1, 2, 1, step=4)
    w.record(1, 0, 5, step=4)
    assert w.buckets(1) == [{2: 4, 0: 5}]


def test_ring_evicts_oldest_step():
    w = InteractionWindow(10)
    for step in range(11):
        w.record(1, 0, step + 1, step)
    assert len(w.buckets(1)) == 10
    assert w.totals(1) == {0: sum(range(2, 12))}


def test_totals_ignore_steps_outside_window():
    w = InteractionWindow(3)
    w.record(1, 5, 10, step=0)
    w.record(1, 5, 1, step=4)
    assert w.totals(1, now_step=4) == {5: 1}


def test_majority_rule_migrates():
    w = InteractionWindow(10)
    w.record(1, 0, 2, 0)
    w.record(1, 2, 8, 0)
    cfg = BalancerConfig(enabled=True, max_frac=1.0)
    assert plan_migrations(w, cfg, 0, self_lp=0, local_entities=[1]) == [(1, 2)]


def test_tie_does_not_migrate():
    w = InteractionWindow(10)
    w.record(1, 0, 5, 0)
    w.record(1, 1, 5, 0)
    cfg = BalancerConfig(enabled=True, max_frac=1.0)
    assert plan_migrations(w, cfg, 0, self_lp=0, local_entities=[1]) == []


def test_factor_scales_internal_weight():
    w = InteractionWindow(10)
    w.record(1, 0, 4, 0)
    w.record(1, 1, 7, 0)
    assert plan_migrations(w, BalancerConfig(factor=2.0, max_frac=1.0), 0, 0, [1]) == []
    assert plan_migrations(w, BalancerConfig(factor=1.5, max_frac=1.0), 0, 0, [1]) == [(1, 1)]


def test_destination_tie_prefers_lower_lp():
    w = InteractionWindow(10)
    w.record(1, 3, 6, 0)
    w.record(1, 2, 6, 0)
    assert plan_migrations(w, BalancerConfig(max_frac=1.0), 0, 0, [1]) == [(1, 2)]


def test_cap_keeps_largest_margins():
    # 100 local entities, 12 of which want to leave; margins by hand:
    # entity 10+k sends k+1 pings to LP 1 and nothing locally -> margin k+1
    w = InteractionWindow(10)
    for k in range(12):
        w.record(10 + k, 1, k + 1, 0)
    plan = plan_migrations(w, ON, 0, self_lp=0, local_entities=range(100))
    assert plan == [(21, 1), (20, 1), (19, 1), (18, 1), (17, 1)]


def test_margin_ties_prefer_lower_entity_id():
    w = InteractionWindow(10)
    for eid in (9, 3, 6):
        w.record(eid, 1, 4, 0)
    cfg = BalancerConfig(max_frac=0.02)     # 2 of 100
    assert plan_migrations(w, cfg, 0, 0, range(100)) == [(3, 1), (6, 1)]


def test_cooldown_blocks_recent_movers():
    w = InteractionWindow(10)
    w.record(1, 1, 9, 30)
    cfg = BalancerConfig(max_frac=1.0, cooldown=20)
    assert plan_migrations(w, cfg, 30, 0, [1], last_migrated={1: 15}) == []
    assert plan_migrations(w, cfg, 35, 0, [1], last_migrated={1: 15}) == [(1, 1)]


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.integers(0, 199), st.tuples(st.integers(0, 3), st.integers(0, 50)),
                       max_size=200),
       st.floats(0.01, 1.0))
def test_plan_never_exceeds_cap(records, frac):
    w = InteractionWindow(10)
    for eid, (lp, n) in records.items():
        w.record(eid, lp, n, 0)
    cfg = BalancerConfig(max_frac=frac)
    local = range(200)
    plan = plan_migrations(w, cfg, 0, 0, local)
    assert len(plan) <= frac * 200 + 1e-9
    assert all(lp != 0 for _, lp in plan)
    assert len({e for e, _ in plan}) == len(plan)


def test_config_validation():
    with pytest.raises(ValueError):
        BalancerConfig(window=0)
    with pytest.raises(ValueError):
        BalancerConfig(factor=0)
    with pytest.raises(ValueError):
        BalancerConfig(max_frac=0)


def test_migration_stats_counts_committed():
    assert migration_stats(RunMetrics()) == 0
    assert migration_stats(RunMetrics(migrations=12)) == 12


# -- clique fixture, through the real engine --------------------------------------

def test_cliques_cluster_within_two_evaluations():
    cfg = two_clique_config(enabled=True, n_steps=12)
    res = run_cluster(cfg, 2, "direct")
    homes = {eid: lp.lp_id for lp in res.lps for eid in lp.final_entities}
    assert len({homes[e] for e in range(10)}) == 1
    assert len({homes[e] for e in range(10, 20)}) == 1
    assert res.metrics.migrations == len(CROSS_HOSTED)
    assert res.metrics.step_remote[-1] == 0


def test_cliques_remote_pings_drop_to_zero_and_stay():
    on = run_cluster(two_clique_config(enabled=True, n_steps=40), 2, "direct").metrics
    off = run_cluster(two_clique_config(enabled=False, n_steps=40), 2, "direct").metrics
    assert off.migrations == 0
    assert on.step_pings == off.step_pings
    assert all(r == 0 for r in on.step_remote[10:])
    assert all(r > 0 for r in off.step_remote)
    assert on.migrations == len(CROSS_HOSTED)
