"""Core model pieces: concentrations, edge probabilities, exact statistics,
and the collapsed log joint."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dynblock as db

from oracles import (exact_log_marginal, package_log_config_sum, _sigmoid,
                     tiny_network, random_hyper)


# ---------------------------------------------------------------------------
# dirichlet_alphas


def test_alphas_zero_beta_are_unit():
    x = np.array([[1.0, -2.0, 0.3], [0.0, 4.0, 1.0]])
    beta = np.zeros((2, 3, 3))
    alpha = db.dirichlet_alphas(x, beta)
    assert alpha.shape == (2, 2, 3)
    assert np.array_equal(alpha, np.ones((2, 2, 3)))
    assert np.array_equal(alpha.sum(axis=2), np.full((2, 2), 3.0))


def test_alphas_hand_value():
    # one row of covariates against one nonzero coefficient row
    x = np.array([[1.0, 0.5]])
    beta = np.zeros((1, 2, 2))
    beta[0, 1] = [0.05, -0.75]
    alpha = db.dirichlet_alphas(x, beta)
    assert alpha[0, 0, 0] == 1.0
    assert alpha[0, 0, 1] == pytest.approx(math.exp(-0.325), rel=1e-12)


def test_alphas_overflow_rejected():
    x = np.array([[1.0, 1.0]])
    beta = np.full((1, 2, 2), 400.0)
    beta[:, 0, :] = 0.0
    with np.errstate(over="ignore"), pytest.raises(ValueError,
                                                   match="overflow"):
        db.dirichlet_alphas(x, beta)


# ---------------------------------------------------------------------------
# edge_prob


def test_edge_prob_at_zero():
    assert db.edge_prob(0.0, np.zeros(1), np.zeros(1)) == 0.5
    assert db.edge_prob(0.0, np.zeros(0), np.zeros(0)) == 0.5


def test_edge_prob_no_dyadic_covariates():
    b = math.log(0.65 / 0.35)
    assert db.edge_prob(b, np.zeros(0), np.zeros(0)) == pytest.approx(
        0.65, abs=1e-12)


def test_edge_prob_with_covariate_shift():
    b = math.log(0.65 / 0.35)
    got = db.edge_prob(b, np.array([1.0]), np.array([0.1]))
    assert got == pytest.approx(_sigmoid(b + 0.1), abs=1e-14)
    assert got == pytest.approx(0.672, abs=5e-4)


@given(b1=st.floats(-8, 8), gap=st.floats(0.01, 4),
       d=st.floats(-3, 3), g=st.floats(0.05, 3))
def test_edge_prob_increasing_in_blockmodel_and_covariate(b1, gap, d, g):
    lo = db.edge_prob(b1, np.array([d]), np.array([g]))
    hi = db.edge_prob(b1 + gap, np.array([d]), np.array([g]))
    assert hi > lo
    bumped = db.edge_prob(b1, np.array([d + 0.5]), np.array([g]))
    assert bumped > lo


def test_edge_probs_table_matches_scalar():
    hyper = random_hyper(3, db.ModelSpec(2, 1), j_mon=2, j_dyad=2)
    d = np.random.default_rng(0).normal(size=(4, 2))
    table = db.edge_probs(hyper.b, hyper.gamma, d)
    for i in range(4):
        for g in range(2):
            for h in range(2):
                assert table[i, g, h] == pytest.approx(
                    db.edge_prob(hyper.b[g, h], d[i], hyper.gamma), abs=1e-14)


# ---------------------------------------------------------------------------
# compute_stats


def _full_directed_period(n):
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    return (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


def test_stats_single_group_counts_are_slot_totals():
    net = tiny_network(0, n_nodes=3, n_periods=2, undirected=False, j_mon=1,
                       j_dyad=0)
    latent = db.LatentState(np.zeros(2, dtype=int),
                            [np.zeros(net.n_dyads(t), dtype=int)
                             for t in range(2)],
                            [np.zeros(net.n_dyads(t), dtype=int)
                             for t in range(2)])
    stats = db.compute_stats(net, latent, db.ModelSpec(1, 1))
    for t in range(2):
        assert np.array_equal(stats.group_counts[t][:, 0],
                              net.interaction_counts()[t])


def test_stats_single_period_has_no_transitions():
    net = tiny_network(1, n_nodes=3, n_periods=1, undirected=False)
    latent = db.LatentState(np.array([1]),
                            [np.zeros(net.n_dyads(0), dtype=int)],
                            [np.ones(net.n_dyads(0), dtype=int)])
    stats = db.compute_stats(net, latent, db.ModelSpec(2, 2))
    assert np.array_equal(stats.trans_counts, np.zeros((2, 2)))


def test_stats_hand_tally_three_node_directed():
    senders, receivers = _full_directed_period(3)
    net = db.DynamicNetwork(["a", "b", "c"], [np.arange(3)],
                            [np.ones((3, 1))], [senders], [receivers],
                            [np.zeros(6)], [np.zeros((6, 0))], directed=True)
    # dyads in storage order: (0,1) (0,2) (1,0) (1,2) (2,0) (2,1)
    z = np.array([0, 0, 1, 0, 1, 1])
    w = np.array([1, 0, 0, 0, 1, 0])
    latent = db.LatentState(np.array([0]), [z], [w])
    stats = db.compute_stats(net, latent, db.ModelSpec(2, 1))
    assert np.array_equal(stats.group_counts[0],
                          np.array([[3.0, 1.0], [2.0, 2.0], [2.0, 2.0]]))


def test_stats_hand_transition_tally():
    net = tiny_network(2, n_nodes=3, n_periods=3, undirected=True)
    latent = db.LatentState(
        np.array([0, 1, 1]),
        [np.zeros(net.n_dyads(t), dtype=int) for t in range(3)],
        [np.zeros(net.n_dyads(t), dtype=int) for t in range(3)])
    stats = db.compute_stats(net, latent, db.ModelSpec(1, 2))
    assert np.array_equal(stats.trans_counts, np.array([[0.0, 1.0],
                                                        [0.0, 1.0]]))
    assert stats.trans_counts.sum() == net.n_periods - 1


@given(seed=st.integers(0, 400), directed=st.booleans(),
       drop=st.booleans())
@settings(max_examples=30, deadline=None)
def test_stats_count_invariants(seed, directed, drop):
    """Per node-period the group counts sum to the slot total, and the
    transition matrix always holds exactly T - 1 events."""
    rng = np.random.default_rng(seed)
    net = tiny_network(seed, n_nodes=4, n_periods=3, undirected=not directed,
                       drop_one_node=drop)
    spec = db.ModelSpec(3, 2, directed=directed)
    latent = db.LatentState(
        rng.integers(0, 2, size=3),
        [rng.integers(0, 3, size=net.n_dyads(t)) for t in range(3)],
        [rng.integers(0, 3, size=net.n_dyads(t)) for t in range(3)])
    stats = db.compute_stats(net, latent, spec)
    for t in range(net.n_periods):
        assert np.array_equal(stats.group_counts[t].sum(axis=1),
                              net.interaction_counts()[t])
    assert stats.trans_counts.sum() == net.n_periods - 1


# ---------------------------------------------------------------------------
# log_collapsed_posterior


def _random_latent(rng, net, spec):
    return db.LatentState(
        rng.integers(0, spec.n_states, size=net.n_periods),
        [rng.integers(0, spec.n_groups, size=net.n_dyads(t))
         for t in range(net.n_periods)],
        [rng.integers(0, spec.n_groups, size=net.n_dyads(t))
         for t in range(net.n_periods)])


def test_degenerate_single_group_equals_logistic_loglik():
    net = tiny_network(5, n_nodes=4, n_periods=2, undirected=False, j_mon=2,
                       j_dyad=1)
    spec = db.ModelSpec(1, 1)
    hyper = db.Hyperparams(np.array([[0.4]]), np.zeros((1, 1, 2)),
                           np.array([-0.3]))
    latent = db.LatentState(
        np.zeros(2, dtype=int),
        [np.zeros(net.n_dyads(t), dtype=int) for t in range(2)],
        [np.zeros(net.n_dyads(t), dtype=int) for t in range(2)])
    got = db.log_collapsed_posterior(net, latent, hyper, spec)
    want = 0.0
    for t in range(2):
        for i in range(net.n_dyads(t)):
            theta = _sigmoid(0.4 - 0.3 * net.d[t][i, 0])
            want += math.log(theta if net.y[t][i] else 1.0 - theta)
    assert got == pytest.approx(want, abs=1e-10)


def test_marginalization_identity_full_presence():
    net = tiny_network(7, n_nodes=3, n_periods=2, undirected=True, j_mon=2,
                       j_dyad=1)
    spec = db.ModelSpec(2, 2, directed=False)
    hyper = random_hyper(11, spec, j_mon=2, j_dyad=1)
    lhs = package_log_config_sum(net, hyper, spec)
    rhs = exact_log_marginal(net, hyper, spec)
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_marginalization_identity_changing_presence():
    net = tiny_network(8, n_nodes=3, n_periods=2, undirected=True, j_mon=2,
                       j_dyad=1, drop_one_node=True)
    spec = db.ModelSpec(2, 2, directed=False)
    hyper = random_hyper(12, spec, j_mon=2, j_dyad=1)
    lhs = package_log_config_sum(net, hyper, spec)
    rhs = exact_log_marginal(net, hyper, spec)
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_eta_is_inert_without_transitions():
    net = tiny_network(9, n_nodes=3, n_periods=1, undirected=True)
    rng = np.random.default_rng(4)
    for eta in (0.5, 1.0, 2.0):
        spec_a = db.ModelSpec(2, 2, directed=False, eta=eta)
        spec_b = db.ModelSpec(2, 2, directed=False, eta=2 * eta)
        hyper = random_hyper(13, spec_a, j_mon=2, j_dyad=1)
        latent = _random_latent(rng, net, spec_a)
        assert db.log_collapsed_posterior(net, latent, hyper, spec_a) \
            == db.log_collapsed_posterior(net, latent, hyper, spec_b)


def test_eta_doubling_shifts_by_gamma_ratio_constant():
    net = tiny_network(10, n_nodes=3, n_periods=3, undirected=True, j_mon=2,
                       j_dyad=1)
    m = 2
    eta = 0.8
    spec_a = db.ModelSpec(2, m, directed=False, eta=eta)
    spec_b = db.ModelSpec(2, m, directed=False, eta=2 * eta)
    hyper = random_hyper(14, spec_a, j_mon=2, j_dyad=1)
    latent = _random_latent(np.random.default_rng(6), net, spec_a)
    u = db.compute_stats(net, latent, spec_a).trans_counts

    def trans_block(e):
        out = 0.0
        for a in range(m):
            out += math.lgamma(m * e) - math.lgamma(m * e + u[a].sum())
            for b in range(m):
                out += math.lgamma(e + u[a, b]) - math.lgamma(e)
        return out

    gap = (db.log_collapsed_posterior(net, latent, hyper, spec_b)
           - db.log_collapsed_posterior(net, latent, hyper, spec_a))
    assert gap == pytest.approx(trans_block(2 * eta) - trans_block(eta),
                                abs=1e-10)


def test_undirected_value_ignores_endpoint_ordering():
    """Rebuilding the same undirected network under a reversed node registry
    flips the stored endpoint order of every dyad; the collapsed joint must
    not move."""
    net = tiny_network(15, n_nodes=4, n_periods=2, undirected=True, j_mon=2,
                       j_dyad=1)
    spec = db.ModelSpec(2, 2, directed=False)
    hyper = random_hyper(16, spec, j_mon=2, j_dyad=1)
    rng = np.random.default_rng(7)
    latent = _random_latent(rng, net, spec)

    n = net.n_nodes
    relabel = np.arange(n)[::-1]
    new_ids = [net.node_ids[i] for i in np.argsort(relabel)]
    present2, x2, s2, r2, y2, d2, z2, w2 = [], [], [], [], [], [], [], []
    for t in range(net.n_periods):
        old_glob = net.present[t]
        new_glob = relabel[old_glob]
        order = np.argsort(new_glob)
        present2.append(np.sort(new_glob))
        x2.append(net.x[t][order])
        pos = {int(new_glob[j]): i for i, j in enumerate(order)}
        s_new, r_new, z_new, w_new = [], [], [], []
        for i in range(net.n_dyads(t)):
            a = pos[int(relabel[old_glob[net.senders[t][i]]])]
            b = pos[int(relabel[old_glob[net.receivers[t][i]]])]
            za, wb = latent.z[t][i], latent.w[t][i]
            if a > b:
                a, b, za, wb = b, a, wb, za
            s_new.append(a)
            r_new.append(b)
            z_new.append(za)
            w_new.append(wb)
        s2.append(np.array(s_new))
        r2.append(np.array(r_new))
        y2.append(net.y[t])
        d2.append(net.d[t])
        z2.append(np.array(z_new))
        w2.append(np.array(w_new))
    net2 = db.DynamicNetwork(new_ids, present2, x2, s2, r2, y2, d2,
                             directed=False)
    latent2 = db.LatentState(latent.states, z2, w2)
    assert db.log_collapsed_posterior(net2, latent2, hyper, spec) \
        == pytest.approx(db.log_collapsed_posterior(net, latent, hyper, spec),
                         abs=1e-10)


def test_group_label_permutation_symmetry():
    net = tiny_network(17, n_nodes=4, n_periods=2, undirected=False, j_mon=2,
                       j_dyad=1)
    spec = db.ModelSpec(3, 2)
    rng = np.random.default_rng(8)
    b = rng.normal(size=(3, 3))
    hyper = db.Hyperparams(b, np.zeros((2, 3, 2)), rng.normal(size=1))
    latent = _random_latent(rng, net, spec)
    base = db.log_collapsed_posterior(net, latent, hyper, spec)
    perm = np.array([2, 0, 1])
    hyper_p = db.Hyperparams(b[np.ix_(perm, perm)], np.zeros((2, 3, 2)),
                             hyper.gamma)
    inv = np.argsort(perm)
    latent_p = db.LatentState(latent.states,
                              [inv[z] for z in latent.z],
                              [inv[w] for w in latent.w])
    assert db.log_collapsed_posterior(net, latent_p, hyper_p, spec) \
        == pytest.approx(base, abs=1e-10)


# ---------------------------------------------------------------------------
# construction contracts


def test_undirected_storage_requires_ordered_endpoints():
    with pytest.raises(ValueError, match="sender < receiver"):
        db.DynamicNetwork(["a", "b"], [np.arange(2)], [np.ones((2, 1))],
                          [np.array([1])], [np.array([0])], [np.zeros(1)],
                          [np.zeros((1, 0))], directed=False)


def test_spec_validation():
    with pytest.raises(ValueError):
        db.ModelSpec(0, 1)
    with pytest.raises(ValueError):
        db.ModelSpec(1, 1, eta=0.0)
    with pytest.raises(ValueError):
        db.ModelSpec(1, 1, sd_b=-1.0)
    with pytest.raises(ValueError):
        db.ModelSpec(1, 1, count_mode="nodes")
