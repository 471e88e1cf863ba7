import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ept.errors import ContractError, ParameterError
from ept.numeric import Tensor
from ept.router import (RouterState, RoutingStats, gate_scores, init_router, record_routing, report_to_csv,
                        route_logits, routing_report, select_topk, topk_mask)
from oracles import naive_matmul


def test_zero_router_ties_all_experts():
    rs = init_router(4, 6)
    assert np.all(route_logits(rs, np.arange(6.0)).data == 0)


def test_orthonormal_router_reads_coordinates():
    rs = init_router(3, 3)
    rs.W_r.data[...] = np.eye(3)
    np.testing.assert_array_equal(route_logits(rs, np.array([0.0, 1.0, 0.0])).data, [0, 1, 0])


def test_router_logits_match_oracle():
    rng = np.random.default_rng(0)
    rs = init_router(5, 7, init_std=1.0, rng=rng)
    X = rng.normal(size=(4, 7))
    assert np.array_equal(route_logits(rs, X).data, naive_matmul(X, rs.W_r.data.T))


def test_task_conditioned_logits():
    rng = np.random.default_rng(1)
    rs = init_router(3, 4, conditioning="token_plus_task", d_e=2, init_std=1.0, rng=rng)
    x, e = rng.normal(size=4), rng.normal(size=2)
    rs.P_e.data[...] = rng.normal(size=rs.P_e.shape)
    np.testing.assert_allclose(route_logits(rs, x, e).data, rs.W_r.data @ (x + rs.P_e.data @ e), atol=1e-14)


@pytest.mark.parametrize("r,k,expect", [([2, 1, 0], 2, [0, 1]), ([1, 1, 1], 2, [0, 1]), ([0, 3, 1], 3, [0, 1, 2])])
def test_select_topk_examples(r, k, expect):
    assert select_topk(np.array(r, float), k).tolist() == expect


def test_select_topk_rejects_bad_k():
    with pytest.raises(ParameterError):
        select_topk(np.zeros(3), 0)
    with pytest.raises(ParameterError):
        select_topk(np.zeros(3), 4)


def test_gate_examples():
    G = gate_scores(np.array([2.0, 1.0, 0.0]), [0, 1], 1.0).data
    np.testing.assert_allclose(G, [0.7310585786, 0.2689414214, 0.0], atol=1e-9)
    assert G[2] == 0.0
    np.testing.assert_array_equal(gate_scores(np.array([3.0, 3.0, 3.0, 0.0]), [0, 1, 2], 1.0).data,
                                  [1 / 3, 1 / 3, 1 / 3, 0])
    assert gate_scores(np.array([2.0, 1.0, 0.0]), [0, 1], 1e-6).data[0] > 1 - 1e-6


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=2, max_size=8, unique=True), st.floats(-1e3, 1e3),
       st.floats(0.01, 1.0))
def test_selection_invariance_and_sharpening(vals, c, tau):
    r = np.array(vals, dtype=float)
    k = max(1, len(r) // 2)
    P = select_topk(r, k)
    assert np.array_equal(P, select_topk(r + c, k))
    full = list(range(len(r)))
    lo, hi = gate_scores(r, full, tau * 2).data.max(), gate_scores(r, full, tau).data.max()
    if 0 < hi < 1:
        assert hi > lo


def test_state_validation():
    with pytest.raises(ParameterError):
        init_router(3, 4, k=4)
    with pytest.raises(ParameterError):
        init_router(3, 4, tau_g=0.0)
    with pytest.raises(ParameterError):
        init_router(3, 4, conditioning="sideways")


def test_record_single_token():
    st_ = RoutingStats(1, 3, 2)
    record_routing(st_, 0, [0, 1], [0.7, 0.3, 0.0])
    assert st_.counts.tolist() == [[1, 1, 0]]
    assert st_.mass.sum() == pytest.approx(1.0)


def test_record_is_additive():
    a, b = RoutingStats(2, 3, 1), RoutingStats(2, 3, 1)
    for _ in range(5):
        record_routing(a, 1, [2], [0, 0, 1.0])
    record_routing(b, np.full(5, 1), np.tile([False, False, True], (5, 1)), np.tile([0, 0, 1.0], (5, 1)))
    assert np.array_equal(a.counts, b.counts) and a.counts[1, 2] == 5


def test_record_rejects_unknown_task():
    with pytest.raises(ContractError):
        record_routing(RoutingStats(2, 3, 1), 2, [0], [1.0, 0, 0])


def test_report_single_expert():
    s = RoutingStats(1, 1, 1)
    for _ in range(3):
        record_routing(s, 0, [0], [1.0])
    assert routing_report(s) == [(0, 0, 3, 1.0)]


def test_uniform_routing_fractions_within_binomial_bounds():
    rng = np.random.default_rng(2024)
    n_tokens, N, k = 10_000, 8, 2
    s = RoutingStats(1, N, k)
    for _ in range(n_tokens):
        r = rng.normal(size=N)
        P = select_topk(r, k)
        record_routing(s, 0, P, gate_scores(r, P, 1.0).data)
    rows = routing_report(s)
    # per-expert selection count ~ Binomial(n, k/N): each expert is picked on
    # a quarter of the tokens, and holds 1/N of the normalised selection mass
    p = k / N
    sd_count = np.sqrt(n_tokens * p * (1 - p))
    for _, _, count, frac in rows:
        assert abs(count / n_tokens - 0.25) < 3 * sd_count / n_tokens
        assert abs(frac - 1 / N) < 3 * sd_count / (n_tokens * k)
    assert sum(r[3] for r in rows) == pytest.approx(1.0, abs=1e-9)


def test_fractions_sum_to_one_per_task():
    rng = np.random.default_rng(5)
    s = RoutingStats(3, 5, 2)
    for _ in range(200):
        r = rng.normal(size=5)
        P = select_topk(r, 2)
        record_routing(s, int(rng.integers(3)), P, gate_scores(r, P).data)
    for t in range(3):
        assert sum(f for task, _, _, f in routing_report(s) if task == t) == pytest.approx(1.0, abs=1e-9)


def test_batched_mask():
    r = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]])
    assert topk_mask(r, 1).tolist() == [[True, False, False], [False, True, False]]


def test_stats_round_trip_and_csv():
    s = RoutingStats(2, 2, 1)
    record_routing(s, 0, [1], [0.0, 1.0])
    assert np.array_equal(RoutingStats.from_dict(s.to_dict()).counts, s.counts)
    text = report_to_csv(routing_report(s))
    assert text.splitlines()[0] == "task,expert,count,fraction"
    assert text.splitlines()[1:] == ["0,0,0,0.0", "0,1,1,1.0"]
    assert "\r" not in text
