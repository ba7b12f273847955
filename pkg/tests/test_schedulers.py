import itertools
import math

import numpy as np
import pytest

from rbcsf.environment import ClientClass, EnvironmentConfig, build_fleet, realize_times, sample_round
from rbcsf.estimator import ConfidenceConfig
from rbcsf.model import InvalidInputError, SelectionDecision, check_feasible, expected_exchange_time, ClientContext
from rbcsf.schedulers import (
    StrategyConfig,
    SchedulerState,
    clairvoyant_step,
    dirichlet_step,
    fedcs_step,
    init_state,
    observe,
    rbcsf_step,
    random_step,
    rotating_ranks,
    select,
)
from rbcsf.environment import ConfigError
from rbcsf.solver import p4_objective


def rbcsf(V, m=8, alpha=0.1, **kw):
    return StrategyConfig("rbcsf", V=V, m=m, confidence=ConfidenceConfig(alpha_fixed=alpha), **kw)


def test_round_one_takes_lowest_ids():
    state = init_state(rbcsf(1.0, m=2), 4)
    d = rbcsf_step(state, np.ones(4, dtype=int), np.ones((4, 3)))
    assert d.selected == {0, 1} and d.round == 1


def test_rotating_ranks():
    assert rotating_ranks(3, 1).tolist() == [0, 1, 2]
    assert rotating_ranks(3, 2).tolist() == [2, 0, 1]
    assert rotating_ranks(3, 4).tolist() == [0, 1, 2]


def test_v_zero_is_top_k_backlog_among_available():
    rng = np.random.default_rng(1)
    state = init_state(rbcsf(0.0, m=3), 10)
    for _ in range(30):
        avail = (rng.random(10) < 0.7).astype(int)
        ctx = rng.uniform(0.5, 10, (10, 3))
        d = rbcsf_step(state, avail, ctx)
        if avail.any():
            z = state.queues.backlogs
            k = min(3, int(avail.sum()))
            chosen = sorted(z[list(d.selected)], reverse=True)
            top = sorted(z[avail == 1], reverse=True)[:k]
            assert chosen == top
        observe(state, d, ctx, {n: 1.0 for n in d.selected})


def test_scripted_trace_matches_hand_execution():
    """Three clients, one slot, identical context [1, 0, 0], noiseless times 3, 1, 2.

    Hand execution (alpha = 0, V = 1, beta = 0.15, rotating tie ranks):
      t=1  all estimates 0, all backlogs 0; rank puts client 0 first -> {0}
      t=2  tau_bar = [1.5, 0, 0], Z = [0, .15, .15]; client 1 leads the ranks -> {1}
      t=3  tau_bar = [1.5, .5, 0], Z = [.15, 0, .3]; client 2 wins outright -> {2}
      t=4  tau_bar = [1.5, .5, 1], Z = [.3, .15, 0]; cap .5 gives .5 - .15 = .35,
           cap 1.5 gives 1.5 - .3 = 1.2, so the fast client 1 beats the backlog of 0 -> {1}
    """
    truth = np.array([3.0, 1.0, 2.0])
    ctx = np.tile([1.0, 0.0, 0.0], (3, 1))
    state = init_state(rbcsf(1.0, m=1, alpha=0.0), 3)
    decisions = []
    for _ in range(4):
        d = rbcsf_step(state, np.ones(3, dtype=int), ctx)
        decisions.append(set(d.selected))
        observe(state, d, ctx, {n: truth[n] for n in d.selected})
    assert decisions == [{0}, {1}, {2}, {1}]
    assert state.queues.backlogs == pytest.approx([0.45, 0.0, 0.15])
    assert state.b[:, 0].tolist() == [3.0, 2.0, 2.0]
    assert state.pull_counts.tolist() == [1, 2, 1]


def test_observe_examples():
    state = init_state(rbcsf(1.0, m=1), 3)
    state.queues = state.queues.__class__(np.array([0.5, 0.05, 0.5]), 0.15, 0)
    ctx = np.ones((3, 3))
    observe(state, SelectionDecision(1, frozenset({1}), 3), ctx, {1: 2.0})
    assert state.queues.backlogs == pytest.approx([0.65, 0.0, 0.65])
    assert state.pull_counts.tolist() == [0, 1, 0]
    observe(state, SelectionDecision(2, frozenset(), 3), ctx, {})
    assert state.queues.backlogs == pytest.approx([0.8, 0.15, 0.8])
    assert state.pull_counts.tolist() == [0, 1, 0] and state.round == 2
    assert np.array_equal(state.H[0], np.eye(3))


def test_observe_rejects_key_mismatch():
    state = init_state(rbcsf(1.0), 3)
    with pytest.raises(InvalidInputError):
        observe(state, SelectionDecision(1, frozenset({1}), 3), np.ones((3, 3)), {2: 1.0})


def test_ten_round_trace_matches_batch_recomputation():
    fleet = build_fleet(EnvironmentConfig(), seed=4)
    state = init_state(rbcsf(10.0), fleet.n_clients, 4)
    log = {n: [] for n in range(fleet.n_clients)}
    for t in range(1, 11):
        avail, ctx = sample_round(fleet, t)
        d = select(state, avail, ctx, fleet)
        times = realize_times(fleet, d, ctx)
        for n, tau in times.items():
            log[n].append((ctx[n].copy(), tau))
        observe(state, d, ctx, times)
    for n, obs in log.items():
        D = np.array([c for c, _ in obs]).reshape(-1, 3)
        y = np.array([t for _, t in obs])
        assert np.allclose(state.H[n], np.eye(3) + D.T @ D, atol=1e-12, rtol=0)
        assert np.allclose(state.b[n], D.T @ y if len(y) else 0, atol=1e-12, rtol=0)
        assert state.pull_counts[n] == len(obs)
    assert state.queues.round == state.round == 10


def test_random_step_examples():
    state = init_state(StrategyConfig("random"), 10)
    rng = np.random.default_rng(0)
    avail = np.array([1, 1, 1] + [0] * 7)
    assert random_step(state, avail, rng).selected == {0, 1, 2}
    assert random_step(state, np.zeros(10, dtype=int), rng).selected == set()
    full = np.ones(10, dtype=int)
    a = random_step(state, full, np.random.default_rng(5))
    b = random_step(state, full, np.random.default_rng(5))
    assert a == b and len(a.selected) == 8


def test_fedcs_deadline_boundary():
    cls1 = build_fleet(EnvironmentConfig(), seed=0).profiles[0]
    ctx = np.array([[1.0, 1.0, 10.0], [1.0, 0.0, 10.0]])
    thetas = np.array([cls1.theta, cls1.theta])
    assert expected_exchange_time(ClientContext(1.0, 1, 10.0), cls1) == pytest.approx(3.003, abs=1e-3)
    state = init_state(StrategyConfig("fedcs"), 2)
    avail = np.ones(2, dtype=int)
    assert fedcs_step(state, avail, ctx, thetas, 3.0).selected == {1}
    assert fedcs_step(state, avail, ctx, thetas, math.inf).selected == {0, 1}
    assert fedcs_step(state, avail, ctx, thetas, 0.5).selected == set()
    # exact boundary is inclusive
    exact = float(ctx[1] @ thetas[1])
    assert fedcs_step(state, avail, ctx, thetas, exact).selected == {0, 1} - {0}


def test_fedcs_is_not_capped():
    state = init_state(StrategyConfig("fedcs", m=2), 5)
    d = fedcs_step(state, np.ones(5, dtype=int), np.ones((5, 3)), np.ones((5, 3)), 10.0)
    assert len(d.selected) == 5


def test_dirichlet_examples():
    state = init_state(StrategyConfig("dirichlet", gamma2=1.0), 6, seed=2)
    assert state.dirichlet_weights.sum() == pytest.approx(1.0)
    one = np.array([0, 0, 0, 1, 0, 0])
    assert dirichlet_step(state, one, np.random.default_rng(0)).selected == {3}
    full = np.ones(6, dtype=int)
    assert dirichlet_step(state, full, np.random.default_rng(9)) == dirichlet_step(state, full, np.random.default_rng(9))
    again = init_state(StrategyConfig("dirichlet", gamma2=1.0), 6, seed=2)
    assert np.array_equal(again.dirichlet_weights, state.dirichlet_weights)


def test_dirichlet_large_concentration_approaches_uniform():
    state = init_state(StrategyConfig("dirichlet", gamma2=1e6, m=1), 5, seed=0)
    assert np.allclose(state.dirichlet_weights, 0.2, atol=1e-3)
    rng = np.random.default_rng(0)
    counts = np.zeros(5)
    for _ in range(20000):
        for n in dirichlet_step(state, np.ones(5, dtype=int), rng).selected:
            counts[n] += 1
    assert np.allclose(counts / 20000, 0.2, atol=0.015)


def test_dirichlet_tiny_concentration_still_valid():
    state = init_state(StrategyConfig("dirichlet", gamma2=1e-4, m=3), 10, seed=1)
    assert np.all(state.dirichlet_weights > 0)
    d = dirichlet_step(state, np.ones(10, dtype=int), np.random.default_rng(0))
    assert len(d.selected) == 3


def test_clairvoyant_v_zero_matches_rbcsf():
    fleet = build_fleet(EnvironmentConfig(), seed=7)
    a = init_state(rbcsf(0.0), fleet.n_clients)
    b = init_state(StrategyConfig("clairvoyant", V=0.0), fleet.n_clients)
    for t in range(1, 40):
        avail, ctx = sample_round(fleet, t)
        da = rbcsf_step(a, avail, ctx)
        db = clairvoyant_step(b, avail, ctx, fleet.thetas)
        assert da == db
        observe(a, da, ctx, {n: 1.0 for n in da.selected})
        observe(b, db, ctx, {n: 1.0 for n in db.selected})
        fleet.last_participation = da.indicator


def test_clairvoyant_single_class_symmetry():
    env = EnvironmentConfig(n_clients=6, classes=(ClientClass(6, 2.0, 1.0, 100.0),), noise="none")
    fleet = build_fleet(env)
    state = init_state(StrategyConfig("clairvoyant", V=5.0, m=2), 6)
    ctx = np.tile([1.0, 0.0, 7.0], (6, 1))
    state.queues = state.queues.__class__(np.array([0.1, 0.9, 0.4, 0.7, 0.0, 0.2]), 0.15, 0)
    d = clairvoyant_step(state, np.ones(6, dtype=int), ctx, fleet.thetas)
    tau = float(ctx[0] @ fleet.thetas[0])
    assert d.selected == {1, 3}
    assert p4_objective(d.selected, [tau] * 6, state.queues.backlogs, 5.0) == pytest.approx(5 * tau - 1.6)


def test_converged_estimates_reproduce_clairvoyant_choices():
    classes = tuple(ClientClass(2, tb, 1.0, snr) for tb, snr in ((1, 1000), (2, 100), (3, 10), (4, 1)))
    env = EnvironmentConfig(n_clients=8, classes=classes, noise="none")
    fleet = build_fleet(env, seed=3)
    learner = init_state(rbcsf(5.0, m=3, alpha=0.0), 8)
    rng = np.random.default_rng(0)
    for n in range(8):
        D = np.column_stack([rng.uniform(0.5, 2, 3000), rng.integers(0, 2, 3000), rng.uniform(5, 10, 3000)])
        learner.H[n] += D.T @ D
        learner.b[n] += D.T @ (D @ fleet.thetas[n])
    reference = init_state(StrategyConfig("clairvoyant", V=5.0, m=3), 8)
    agreed = checked = 0
    for t in range(1, 201):
        avail, ctx = sample_round(fleet, t)
        if not avail.any():
            continue
        z = rng.uniform(0, 5, 8)
        for s in (learner, reference):
            s.queues = s.queues.__class__(z, 0.15, t - 1)
            s.round = t - 1
        truth = np.einsum("ij,ij->i", ctx, fleet.thetas)
        # margin between the best and second-best distinct true objective
        av = np.flatnonzero(avail)
        k = min(3, len(av))
        vals = sorted({p4_objective(c, truth, z, 5.0) for c in itertools.combinations(av, k)})
        margin = vals[1] - vals[0] if len(vals) > 1 else math.inf
        err = 5.0 * 0.01 * truth.max()
        if margin > 2 * err:
            checked += 1
            a = rbcsf_step(learner, avail, ctx)
            b = clairvoyant_step(reference, avail, ctx, fleet.thetas)
            agreed += a.selected == b.selected
    assert checked > 100 and agreed == checked


STRATEGIES = [
    rbcsf(10.0),
    StrategyConfig("random"),
    StrategyConfig("fedcs"),
    StrategyConfig("dirichlet", gamma2=0.5),
    StrategyConfig("clairvoyant", V=50.0),
]


@pytest.mark.parametrize("cfg", STRATEGIES, ids=lambda c: c.name)
def test_every_strategy_is_feasible_and_deterministic(cfg):
    def trace():
        fleet = build_fleet(EnvironmentConfig(), seed=11)
        state = init_state(cfg, fleet.n_clients, 11)
        out = []
        for t in range(1, 101):
            avail, ctx = sample_round(fleet, t)
            d = select(state, avail, ctx, fleet)
            check_feasible(d, avail, cfg.m, capped=cfg.kind != "fedcs")
            observe(state, d, ctx, realize_times(fleet, d, ctx))
            out.append(d.selected)
        assert int(state.pull_counts.sum()) == sum(map(len, out))
        return out, state.queues.backlogs.copy()

    a, za = trace()
    b, zb = trace()
    assert a == b and np.array_equal(za, zb)


def test_state_round_trip():
    fleet = build_fleet(EnvironmentConfig(), seed=2)
    state = init_state(StrategyConfig("dirichlet"), fleet.n_clients, 2)
    for t in range(1, 6):
        avail, ctx = sample_round(fleet, t)
        d = select(state, avail, ctx, fleet)
        observe(state, d, ctx, realize_times(fleet, d, ctx))
    back = SchedulerState.from_dict(state.to_dict())
    assert np.array_equal(back.H, state.H) and np.array_equal(back.b, state.b)
    assert np.array_equal(back.pull_counts, state.pull_counts)
    assert np.array_equal(back.dirichlet_weights, state.dirichlet_weights)
    assert back.round == state.round == back.queues.round


def test_config_validation():
    with pytest.raises(ConfigError):
        StrategyConfig("greedy")
    with pytest.raises(ConfigError):
        StrategyConfig("rbcsf", V=-1)
    with pytest.raises(ConfigError):
        StrategyConfig("fedcs", deadline=0)
    with pytest.raises(ConfigError):
        StrategyConfig("dirichlet", gamma2=0)
    assert StrategyConfig("rbcsf", V=10).name == "rbcsf-V10"
    cfg = StrategyConfig.from_dict({"kind": "rbcsf", "V": 3, "confidence": {"lambda": 2.0, "alpha_fixed": 0.5}})
    assert cfg.confidence.lam == 2.0
    assert StrategyConfig.from_dict(cfg.to_dict()) == cfg
