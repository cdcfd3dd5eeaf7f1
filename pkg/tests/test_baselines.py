import pytest
from hypothesis import given
from hypothesis import strategies as st

from cloudscale.baselines import (
    HpaConfig,
    RbasRule,
    RbasState,
    hpa_desired_replicas,
    least_connections_assign,
    rbas_decide,
    round_robin_assign,
)


def test_round_robin_cycles():
    seen, counter = [], 0
    for _ in range(4):
        node, counter = round_robin_assign(counter, 3)
        seen.append(node)
    assert seen == [0, 1, 2, 0]


@pytest.mark.parametrize("counter, n, want", [(0, 1, 0), (5, 1, 0), (7, 3, 1)])
def test_round_robin_examples(counter, n, want):
    assert round_robin_assign(counter, n)[0] == want


def test_round_robin_rejects_empty_cluster():
    with pytest.raises(ValueError):
        round_robin_assign(0, 0)


@given(n=st.integers(1, 9), k=st.integers(1, 6))
def test_round_robin_is_uniform(n, k):
    counts, counter = [0] * n, 0
    for _ in range(n * k):
        node, counter = round_robin_assign(counter, n)
        counts[node] += 1
    assert counts == [k] * n


@pytest.mark.parametrize("counts, want", [([3, 1, 2], 1), ([2, 2], 0), ([0, 0, 0], 0), ([5], 0)])
def test_least_connections_examples(counts, want):
    assert least_connections_assign(counts) == want


@given(st.lists(st.integers(0, 50), min_size=1, max_size=12))
def test_least_connections_never_picks_a_busier_node(counts):
    i = least_connections_assign(counts)
    assert counts[i] == min(counts) and counts.index(min(counts)) == i


@pytest.mark.parametrize(
    "current, observed, target, want",
    [(4, 0.9, 0.6, 6), (3, 0.6, 0.6, 3), (2, 0.1, 0.5, 1), (1, 1.0, 0.1, 10), (5, 0.0, 0.6, 1)],
)
def test_hpa_examples(current, observed, target, want):
    cfg = HpaConfig(target_utilization=target, min_replicas=1, max_replicas=16)
    assert hpa_desired_replicas(current, observed, cfg) == want


def test_hpa_cooldown_holds_current():
    cfg = HpaConfig(target_utilization=0.5, cooldown_s=30.0)
    assert hpa_desired_replicas(2, 1.0, cfg, now=20.0, last_change=0.0) == 2
    assert hpa_desired_replicas(2, 1.0, cfg, now=30.0, last_change=0.0) == 4


def test_hpa_tolerance_band():
    cfg = HpaConfig(target_utilization=0.5, tolerance=0.1)
    assert hpa_desired_replicas(4, 0.54, cfg) == 4
    assert hpa_desired_replicas(4, 0.6, cfg) == 5


@given(
    current=st.integers(1, 20),
    observed=st.floats(0, 1),
    target=st.floats(0.05, 1),
    lo=st.integers(1, 5),
    span=st.integers(0, 10),
)
def test_hpa_stays_in_bounds(current, observed, target, lo, span):
    cfg = HpaConfig(target_utilization=target, min_replicas=lo, max_replicas=lo + span)
    got = hpa_desired_replicas(current, observed, cfg)
    assert lo <= got <= lo + span
    assert got == hpa_desired_replicas(current, observed, cfg)


@pytest.mark.parametrize("bad", [dict(target_utilization=0.0), dict(min_replicas=5, max_replicas=2), dict(cooldown_s=-1)])
def test_hpa_config_validation(bad):
    with pytest.raises(ValueError):
        HpaConfig(**bad)


def test_rbas_in_band_does_nothing():
    delta, _ = rbas_decide(0.5, 3, [RbasRule(upper_threshold=0.8, lower_threshold=0.3)])
    assert delta == 0


@pytest.mark.parametrize("value, want", [(0.95, 2), (0.1, -2), (0.8, 0), (0.3, 0)])
def test_rbas_band_edges(value, want):
    rule = RbasRule(upper_threshold=0.8, lower_threshold=0.3, scale_delta=2)
    assert rbas_decide(value, 3, [rule])[0] == want


def test_rbas_first_matching_rule_wins():
    rules = [
        RbasRule(metric="utilization", upper_threshold=0.8, lower_threshold=0.3, scale_delta=1),
        RbasRule(metric="queue_length", upper_threshold=10, lower_threshold=1, scale_delta=3),
    ]
    assert rbas_decide({"utilization": 0.9, "queue_length": 20}, 3, rules)[0] == 1
    assert rbas_decide({"utilization": 0.5, "queue_length": 20}, 3, rules)[0] == 3


def test_rbas_cooldown_and_hysteresis():
    rule = RbasRule(upper_threshold=0.8, lower_threshold=0.3, scale_delta=1, cooldown_s=30.0)
    delta, state = rbas_decide(0.9, 2, [rule], now=0.0)
    assert delta == 1 and state.last_fired == {0: 0.0}
    assert rbas_decide(0.9, 3, [rule], now=10.0, state=state)[0] == 0
    # back inside the band after scaling: no oscillation
    assert rbas_decide(0.6, 3, [rule], now=40.0, state=state)[0] == 0
    assert rbas_decide(0.9, 3, [rule], now=40.0, state=state)[0] == 1


def test_rbas_does_not_mutate_caller_state():
    state = RbasState()
    rbas_decide(0.9, 2, [RbasRule()], state=state)
    assert state.last_fired == {}


@pytest.mark.parametrize("bad", [dict(metric="latency"), dict(upper_threshold=0.2, lower_threshold=0.3)])
def test_rbas_rule_validation(bad):
    with pytest.raises(ValueError):
        RbasRule(**bad)


@given(st.floats(0, 2), st.integers(1, 10), st.floats(0, 100))
def test_rbas_is_deterministic(value, units, now):
    rules = [RbasRule()]
    assert rbas_decide(value, units, rules, now)[0] == rbas_decide(value, units, rules, now)[0]
