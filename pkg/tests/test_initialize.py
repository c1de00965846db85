"""Spectral starting values and permutation alignment of blockmodels."""

import itertools
import math
import warnings

import numpy as np
import pytest

import dynblock as db
from dynblock.initialize import default_init


def full_directed_net(y, n, n_periods=1, j_dyad=0, seed=None):
    """One-or-more-period directed network on every ordered pair."""
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    s = np.array([p[0] for p in pairs])
    r = np.array([p[1] for p in pairs])
    ys = y if isinstance(y, list) else [y]
    assert len(ys) == n_periods
    rng = np.random.default_rng(seed)
    d = [rng.normal(size=(len(pairs), j_dyad)) if j_dyad
         else np.zeros((len(pairs), 0)) for _ in range(n_periods)]
    return db.DynamicNetwork(
        [f"n{i}" for i in range(n)],
        [np.arange(n)] * n_periods,
        [np.ones((n, 1))] * n_periods,
        [s] * n_periods,
        [r] * n_periods,
        [np.asarray(yt, dtype=float) for yt in ys],
        d,
        directed=True,
    ), s, r


def adjusted_rand(a, b):
    """Pair-counting adjusted Rand index between two label vectors."""
    counts = {}
    for la, lb in zip(a, b):
        counts[(la, lb)] = counts.get((la, lb), 0) + 1
    row = {}
    col = {}
    for (la, lb), c in counts.items():
        row[la] = row.get(la, 0) + c
        col[lb] = col.get(lb, 0) + c
    sum_cells = sum(math.comb(c, 2) for c in counts.values())
    sum_row = sum(math.comb(c, 2) for c in row.values())
    sum_col = sum(math.comb(c, 2) for c in col.values())
    expected = sum_row * sum_col / math.comb(len(a), 2)
    maximum = 0.5 * (sum_row + sum_col)
    return (sum_cells - expected) / (maximum - expected)


class TestSpectralInit:
    def test_two_disconnected_cliques_split_perfectly(self):
        n = 6
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        y = [1.0 if (i < 3) == (j < 3) else 0.0 for i, j in pairs]
        net, _, _ = full_directed_net(np.array(y), n)
        rows = db.spectral_init(net, 2, seed=0)[0]
        labels = rows.argmax(axis=1)
        assert len(set(labels[:3])) == 1
        assert len(set(labels[3:])) == 1
        assert labels[0] != labels[3]
        # soft rows spread 0.9 on the winner and 0.1 over the rest
        assert np.allclose(np.sort(rows, axis=1), [[0.1, 0.9]] * n)

    def test_single_group_gives_constant_assignment(self):
        rng = np.random.default_rng(4)
        n = 5
        y = (rng.random(n * (n - 1)) < 0.4).astype(float)
        net, _, _ = full_directed_net(y, n)
        rows = db.spectral_init(net, 1, seed=0)[0]
        assert rows.shape == (n, 1)
        assert np.array_equal(rows, np.ones((n, 1)))

    @pytest.mark.parametrize("seed", [0, 1])
    def test_planted_three_block_sbm_recovered(self, seed):
        rng = np.random.default_rng(seed)
        n = 60
        block = np.repeat([0, 1, 2], 20)
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        probs = np.array([0.6 if block[i] == block[j] else 0.05
                          for i, j in pairs])
        y = (rng.random(len(pairs)) < probs).astype(float)
        net, _, _ = full_directed_net(y, n)
        labels = db.spectral_init(net, 3, seed=0)[0].argmax(axis=1)
        assert adjusted_rand(block, labels) >= 0.9

    def test_rank_deficient_embedding_falls_back_with_warning(self):
        # two nodes cannot support a rank-3 embedding
        net = db.DynamicNetwork(
            ["a", "b"], [np.arange(2)], [np.ones((2, 1))],
            [np.array([0])], [np.array([1])], [np.array([1.0])],
            [np.zeros((1, 0))], directed=True)
        with pytest.warns(UserWarning, match="falling back to random simplex"):
            rows = db.spectral_init(net, 3, seed=0)[0]
        assert rows.shape == (2, 3)
        assert np.all(rows > 0)
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)


class TestPeriodBlockmodel:
    def test_one_group_equals_period_density(self):
        rng = np.random.default_rng(7)
        n = 6
        y = (rng.random(n * (n - 1)) < 0.3).astype(float)
        net, s, r = full_directed_net(y, n)
        bm = db.estimate_period_blockmodel(np.ones((n, 1)), s, r, y, 1)
        assert bm.shape == (1, 1)
        assert bm[0, 0] == pytest.approx(y.mean(), abs=1e-12)

    def test_hand_tally_four_nodes(self):
        # nodes 0,1 in group 0; nodes 2,3 in group 1
        memb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        s = np.array([0, 0, 2, 3, 1])
        r = np.array([1, 2, 3, 0, 3])
        y = np.array([1.0, 1.0, 0.0, 1.0, 0.0])
        bm = db.estimate_period_blockmodel(memb, s, r, y, 2)
        # (0,0): dyad 0->1 only, edge present        -> 1
        # (0,1): dyads 0->2 (hit) and 1->3 (miss)    -> 1/2
        # (1,0): dyad 3->0, edge present             -> 1
        # (1,1): dyad 2->3, no edge                  -> 0
        np.testing.assert_allclose(bm, [[1.0, 0.5], [1.0, 0.0]])

    def test_zero_weight_cells_take_prior_mean(self):
        memb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        s = np.array([0, 0, 1])
        r = np.array([1, 2, 3])
        y = np.array([1.0, 1.0, 0.0])
        bm = db.estimate_period_blockmodel(memb, s, r, y, 2,
                                           prior_mean=0.25)
        # no dyads have a group-1 sender, so that whole row is the prior
        np.testing.assert_allclose(bm, [[1.0, 0.5], [0.25, 0.25]])

    def test_label_permutation_equivariance(self):
        rng = np.random.default_rng(11)
        n, k = 8, 3
        memb = rng.dirichlet(np.ones(k), size=n)
        s = np.repeat(np.arange(n), n - 1)
        r = np.concatenate([[j for j in range(n) if j != i]
                            for i in range(n)])
        y = (rng.random(s.size) < 0.4).astype(float)
        perm = np.array([2, 0, 1])
        base = db.estimate_period_blockmodel(memb, s, r, y, k)
        permuted = db.estimate_period_blockmodel(memb[:, perm], s, r, y, k)
        np.testing.assert_allclose(permuted, base[np.ix_(perm, perm)],
                                   atol=1e-12)


BASE_BM = np.array([[0.80, 0.20, 0.10],
                    [0.15, 0.70, 0.05],
                    [0.30, 0.10, 0.60]])


class TestAlignLabels:
    def test_identical_blockmodels_keep_identity(self):
        perms = db.align_labels([BASE_BM.copy() for _ in range(4)])
        assert len(perms) == 4
        for p in perms:
            assert np.array_equal(p, np.arange(3))

    def test_exact_label_swap_is_recovered(self):
        perm = np.array([2, 0, 1])
        inv = np.argsort(perm)
        swapped = BASE_BM[np.ix_(inv, inv)]
        perms = db.align_labels([BASE_BM, swapped])
        assert np.array_equal(perms[0], np.arange(3))
        assert np.array_equal(perms[1], perm)
        realigned = swapped[np.ix_(perms[1], perms[1])]
        np.testing.assert_allclose(realigned, BASE_BM, atol=1e-12)

    def test_noisy_permuted_copies_recovered_in_095_of_trials(self):
        wins = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            perm = rng.permutation(3)
            inv = np.argsort(perm)
            noisy = (BASE_BM[np.ix_(inv, inv)]
                     + rng.normal(0.0, 0.02, size=(3, 3)))
            perms = db.align_labels([BASE_BM, noisy])
            wins += int(np.array_equal(perms[1], perm))
        assert wins >= 95

    def test_large_k_exhaustive_refused(self):
        blocks = [np.eye(13), np.eye(13)]
        with pytest.raises(ValueError, match="infeasible for k=13"):
            db.align_labels(blocks, method="exhaustive")

    def test_above_eight_groups_auto_uses_relaxation(self):
        rng = np.random.default_rng(2)
        blocks = [rng.random((9, 9)) for _ in range(3)]
        perms = db.align_labels(blocks)
        assert np.array_equal(perms[0], np.arange(9))
        for p in perms[1:]:
            assert np.array_equal(np.sort(p), np.arange(9))

    def test_aligned_sequence_beats_every_alternative(self):
        # exhaustive certificate on noisy permuted copies of one blockmodel
        def spread(blocks):
            mean = np.mean(blocks, axis=0)
            return sum(float(np.linalg.norm(b - mean)) for b in blocks)

        all_perms = [np.asarray(p) for p in
                     itertools.permutations(range(3))]
        for seed in range(10):
            rng = np.random.default_rng(seed)
            blocks = [BASE_BM + rng.normal(0.0, 0.02, (3, 3))]
            for _ in range(3):
                perm = rng.permutation(3)
                inv = np.argsort(perm)
                blocks.append(BASE_BM[np.ix_(inv, inv)]
                              + rng.normal(0.0, 0.02, (3, 3)))
            perms = db.align_labels(blocks)
            achieved = spread([b[np.ix_(p, p)]
                               for b, p in zip(blocks, perms)])
            for seq in itertools.product(all_perms, repeat=3):
                alt = spread([blocks[0]]
                             + [b[np.ix_(p, p)]
                                for b, p in zip(blocks[1:], seq)])
                assert achieved <= alt + 1e-9

    def test_alignment_is_pure_relabeling(self):
        rng = np.random.default_rng(5)
        blocks = [BASE_BM + rng.normal(0.0, 0.05, (3, 3)) for _ in range(3)]
        memb = rng.dirichlet(np.ones(3), size=7)
        perms = db.align_labels(blocks)
        for b, p in zip(blocks, perms):
            aligned = b[np.ix_(p, p)]
            assert sorted(aligned.ravel()) == sorted(b.ravel())
            relabeled = memb[:, p]
            got = sorted(map(tuple, relabeled.T))
            want = sorted(map(tuple, memb.T))
            assert got == want


class TestDefaultInit:
    def test_warm_start_is_well_formed(self):
        rng = np.random.default_rng(3)
        n, t_count = 12, 3
        ys = [(rng.random(n * (n - 1)) < 0.35).astype(float)
              for _ in range(t_count)]
        net, _, _ = full_directed_net(ys, n, n_periods=t_count, j_dyad=1,
                                      seed=3)
        spec = db.ModelSpec(n_groups=3, n_states=2, directed=True)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            vparams, hyper = default_init(net, spec, seed=0)
        for t in range(t_count):
            np.testing.assert_allclose(vparams.phi[t].sum(axis=1), 1.0,
                                        atol=1e-9)
            np.testing.assert_allclose(vparams.psi[t].sum(axis=1), 1.0,
                                        atol=1e-9)
        np.testing.assert_allclose(vparams.kappa.sum(axis=1), 1.0,
                                    atol=1e-9)
        assert np.all(np.isfinite(hyper.b))
        assert hyper.gamma.shape == (1,)
        for m in range(spec.n_states):
            np.testing.assert_array_equal(hyper.beta[m][0],
                                          np.zeros(net.j_mon))
