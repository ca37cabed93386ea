import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairprune.ensemble import EnsembleProfile, vote_matrix
from fairprune.errors import EmptySelector, InvalidInput, InvalidLambda
from fairprune.pruning import (
    BiObjective,
    Dominance,
    MemberPool,
    ParetoArchive,
    PruneConfig,
    archive_insert,
    dominates,
    epaf_c,
    epaf_d,
    greedy_order,
    pair_loss,
    partition_members,
    poaf,
    prune,
    subensemble_loss,
)

from oracles import greedy_bruteforce, vote_bruteforce


def tiny_pool(m, n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    orig = np.where(rng.random((m, n)) < 0.25, 1 - labels, labels)
    pert = np.where(rng.random((m, n)) < 0.2, 1 - orig, orig)
    return MemberPool(list(zip(orig, pert)), labels, 2)


class TestPairLoss:
    def test_example(self):
        assert pair_loss(0.2, 0.4, 0.1, 0.5) == pytest.approx(0.2, abs=1e-15)

    def test_degenerate(self):
        assert pair_loss(0.3, 0.3, 0.1, 0.7) == pytest.approx(0.7 * 0.3 + 0.3 * 0.1, abs=1e-15)

    def test_symmetric(self):
        assert pair_loss(0.1, 0.35, 0.05, 0.3) == pair_loss(0.35, 0.1, 0.05, 0.3)

    @pytest.mark.parametrize("lam", [0.0, 1.0, -0.2])
    def test_lambda_range(self, lam):
        with pytest.raises(InvalidLambda):
            pair_loss(0.1, 0.1, 0.0, lam)

    def test_matrix_matches_scalar(self):
        pool = tiny_pool(4, 30, 0)
        P = pool.pair_matrix(0.4)
        for i, j in itertools.product(range(4), repeat=2):
            assert P[i, j] == pytest.approx(pair_loss(pool.member_err[i], pool.member_err[j], pool.tandem[i, j], 0.4), abs=1e-15)
        assert np.array_equal(P, P.T)


class TestDomination:
    def test_cases(self):
        assert dominates(BiObjective(0.1, 0.2), BiObjective(0.2, 0.3)) is Dominance.STRICT
        assert dominates(BiObjective(0.1, 0.2), BiObjective(0.1, 0.2)) is Dominance.WEAK_ONLY
        assert dominates(BiObjective(0.1, 0.4), BiObjective(0.2, 0.3)) is Dominance.NONE

    def test_empty_archive_accepts(self):
        out, ok = archive_insert(ParetoArchive(), (1, 0), BiObjective(0.3, 0.3))
        assert ok and len(out) == 1

    def test_dominated_rejected(self):
        a = ParetoArchive()
        a.insert((1, 0), BiObjective(0.1, 0.1))
        out, ok = archive_insert(a, (0, 1), BiObjective(0.2, 0.1))
        assert not ok and out.entries == a.entries

    def test_three_entry_archive(self):
        a = ParetoArchive()
        a.insert((1, 0, 0), BiObjective(0.1, 0.5))
        a.insert((0, 1, 0), BiObjective(0.3, 0.3))
        a.insert((0, 0, 1), BiObjective(0.5, 0.1))
        assert len(a) == 3
        out, ok = archive_insert(a, (1, 1, 0), BiObjective(0.1, 0.3))
        assert ok and len(out) == 2
        assert [z.bits for z in out] == [(0, 0, 1), (1, 1, 0)]
        assert len(a) == 3  # functional form leaves the input alone

    def test_same_bits_replaced(self):
        a = ParetoArchive()
        a.insert((1, 1), BiObjective(0.2, 0.2))
        a.insert((1, 1), BiObjective(0.2, 0.2))
        assert len(a) == 1

    @given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 4), st.integers(0, 4)), max_size=25))
    def test_invariant(self, seq):
        a = ParetoArchive()
        for code, e, d in seq:
            bits = tuple((code >> i) & 1 for i in range(4))
            obj = BiObjective(e / 4, d / 4)
            strictly_beaten = any(dominates(z.objective, obj) is Dominance.STRICT for z in a)
            assert a.insert(bits, obj) is not strictly_beaten
            for x, y in itertools.permutations(a.entries, 2):
                assert dominates(x.objective, y.objective) is not Dominance.STRICT
            assert len({z.bits for z in a}) == len(a)


class TestSubensembleLoss:
    def test_perfect_fair_member(self):
        y = np.array([0, 1, 1, 0])
        assert subensemble_loss([0], [(y, y), (1 - y, y)], y, 0.5) == 0.0

    def test_full_selector_matches_unpruned(self, bagged, biased):
        _, prof = bagged
        lam = 0.3
        err = np.mean(prof.vote_orig != biased.labels)
        dr = np.mean(prof.vote_orig != prof.vote_pert)
        got = subensemble_loss(np.ones(prof.m, bool), prof, biased.labels, lam)
        assert got == pytest.approx(lam * err + (1 - lam) * dr, abs=1e-15)

    def test_brute_force(self, rng):
        pool = tiny_pool(5, 25, 3)
        for sel in [(0, 1, 2), (1, 3), (4,), (0, 1, 2, 3, 4)]:
            w = [1] * len(sel)
            vo = [vote_bruteforce(pool.orig[list(sel), i], w, 2) for i in range(pool.n)]
            vp = [vote_bruteforce(pool.pert[list(sel), i], w, 2) for i in range(pool.n)]
            err = np.mean(np.array(vo) != pool.labels)
            dr = np.mean(np.array(vo) != np.array(vp))
            assert subensemble_loss(sel, pool, None, 0.5) == pytest.approx(0.5 * err + 0.5 * dr, abs=1e-15)

    def test_empty(self):
        with pytest.raises(EmptySelector):
            subensemble_loss([], tiny_pool(3, 10, 0), None, 0.5)


class TestPoaf:
    def test_identical_members(self):
        y = np.array([0, 1, 1, 0, 1, 0])
        p = np.array([0, 1, 0, 0, 1, 1])
        q = np.array([1, 1, 0, 0, 1, 0])
        pool = MemberPool([(p, q)] * 4, y)
        res = poaf(pool, PruneConfig(k=3, seed=2))
        assert res.loss == pool.loss([0], 0.5)

    def test_two_members_seed_sweep(self):
        y = np.zeros(10, dtype=int)
        good = np.zeros(10, dtype=int)
        good_pert = good.copy()
        good_pert[0] = 1
        bad = good.copy()
        bad[:3] = 1
        bad_pert = bad.copy()
        bad_pert[3:6] = 1
        evaluated_both = 0
        for seed in range(32):
            pool = MemberPool([(good, good_pert), (bad, bad_pert)], y)
            res = poaf(pool, PruneConfig(k=1, seed=seed))
            if {(0,), (1,)} <= set(pool._cache):
                evaluated_both += 1
                assert res.selected == (0,)
        assert evaluated_both > 0

    def test_golden(self):
        pool = tiny_pool(5, 40, 1)
        res = poaf(pool, PruneConfig(k=3, seed=1))
        assert res.selected == (0, 2, 3)
        assert (res.objective.err, res.objective.dr, res.loss) == (0.1, 0.15, 0.125)
        longer = poaf(tiny_pool(5, 40, 1), PruneConfig(k=3, seed=1, iterations_multiplier=4))
        assert longer.selected == (0, 1, 3) and longer.loss == 0.11249999999999999

    def test_equal_errors_order_by_dr(self):
        y = np.zeros(8, dtype=int)
        members = []
        for flips in (3, 1, 2):
            pert = np.zeros(8, dtype=int)
            pert[:flips] = 1
            members.append((np.zeros(8, dtype=int), pert))
        pool = MemberPool(members, y)
        res = poaf(pool, PruneConfig(k=1, seed=0, iterations_multiplier=20))
        assert res.selected == (1,)


class TestEpafC:
    def test_k_equals_m(self):
        pool = tiny_pool(6, 30, 2)
        assert epaf_c(pool, 6).selected == tuple(range(6))

    def test_k_one(self):
        pool = tiny_pool(6, 30, 2)
        diag = np.diag(pool.pair_matrix(0.5))
        assert epaf_c(pool, 1).selected == (int(np.argmin(diag)),)

    def test_hand_trace(self):
        # members 0..2; errors 0.2, 0.1, 0.3; tandem given; λ = 0.5
        # diag: 0.1+0.5·0.2=0.2, 0.05+0.5·0.3=0.2, 0.15+0.5·0.1=0.2 → tie, start at 0
        # step 1: L(1,0)=0.075+0.5·0.1=0.125, L(2,0)=0.125+0.5·0.0=0.125 → tie, take 1
        # step 2: only 2 remains
        pool = MemberPool.__new__(MemberPool)
        pool.m = 3
        pool.member_err = np.array([0.2, 0.1, 0.3])
        pool.tandem = np.array([[0.2, 0.1, 0.0], [0.1, 0.3, 0.05], [0.0, 0.05, 0.1]])
        assert greedy_order(pool, range(3), 3, 0.5) == [0, 1, 2]
        pool.member_err = np.array([0.2, 0.1, 0.2])
        # diag now 0.2, 0.2, 0.15 → start at 2; L(0,2)=0.1+0=0.1, L(1,2)=0.075+0.025=0.1 → tie, take 0
        assert greedy_order(pool, range(3), 2, 0.5) == [2, 0]

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        labels = rng.integers(0, 2, 997)
        orig = np.where(rng.random((6, 997)) < rng.random((6, 1)) * 0.4, 1 - labels, labels)
        pert = np.where(rng.random((6, 997)) < rng.random((6, 1)) * 0.4, 1 - orig, orig)
        pool = MemberPool(list(zip(orig, pert)), labels)
        P = pool.pair_matrix(0.5)
        assert len(np.unique(np.round(P[np.triu_indices(6)], 12))) == 21  # no ties, so relabelling is exact
        base = epaf_c(pool, 3).order
        perm = rng.permutation(6)
        moved = epaf_c(MemberPool(list(zip(orig[perm], pert[perm])), labels), 3).order
        assert [int(perm[i]) for i in moved] == list(base)

    def test_matches_oracle(self):
        pool = tiny_pool(7, 40, 9)
        P = pool.pair_matrix(0.5).tolist()
        for k in range(1, 8):
            assert list(epaf_c(pool, k).order) == greedy_bruteforce(P, k)


class TestEpafD:
    def test_one_group(self):
        pool = tiny_pool(8, 50, 4)
        assert epaf_d(pool, PruneConfig(k=3, n_m=1, seed=5)).loss == epaf_c(pool, 3).loss

    def test_singleton_groups(self):
        pool = tiny_pool(6, 50, 4)
        res = epaf_d(pool, PruneConfig(k=2, n_m=6, seed=0))
        options = [(i,) for i in range(6)] + [epaf_c(pool, 2).selected]
        assert res.loss == min(pool.loss(h, 0.5) for h in options)

    GOLDEN = {
        1: ((2, 4, 5), 0.125),
        2: ((1, 4, 7), 0.15),
        3: ((1, 4, 7), 0.15),
        4: ((1, 4, 7), 0.15),
        5: ((1, 2, 4), 0.14166666666666666),
        6: ((1, 4, 7), 0.15),
        7: ((2, 4, 5), 0.125),
        8: ((5, 7, 8), 0.14166666666666666),
    }

    @pytest.mark.parametrize("seed", range(1, 9))
    def test_golden(self, seed):
        res = epaf_d(tiny_pool(9, 60, 2), PruneConfig(k=3, n_m=3, seed=seed))
        assert (res.selected, res.loss) == self.GOLDEN[seed]

    def test_no_group_beats_result(self):
        pool = tiny_pool(10, 60, 6)
        res = epaf_d(pool, PruneConfig(k=3, n_m=3, seed=2))
        for g in res.extra["groups"]:
            assert res.loss <= epaf_c(pool, 3, candidates=g).loss

    def test_threads_agree(self):
        pool = tiny_pool(12, 80, 1)
        cfg = PruneConfig(k=4, n_m=3, seed=3)
        assert epaf_d(pool, cfg, n_jobs=3).to_dict() == epaf_d(pool, cfg).to_dict()

    def test_partition_sizes(self):
        groups = partition_members(11, 3, 0)
        assert sorted(len(g) for g in groups) == [3, 4, 4]
        assert sorted(i for g in groups for i in g) == list(range(11))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(10, 40), st.integers(0, 10_000), st.data())
def test_output_contract(m, n, seed, data):
    k = data.draw(st.integers(1, m))
    n_m = data.draw(st.integers(1, m))
    pool = tiny_pool(m, n, seed)
    cfg = PruneConfig(k=k, n_m=n_m, seed=seed)
    for algo in ("poaf", "epaf-c", "epaf-d"):
        res = prune(pool, algo, cfg)
        assert 1 <= len(res.selected) <= k
        assert set(res.selected) <= set(range(m))
        assert res.loss == pool.loss(res.selected, cfg.lam)


def test_config_checks():
    with pytest.raises(InvalidLambda):
        PruneConfig(k=2, lam=1.0)
    with pytest.raises(InvalidInput):
        prune(tiny_pool(3, 10, 0), "poaf", PruneConfig(k=4))
    with pytest.raises(InvalidInput):
        prune(tiny_pool(3, 10, 0), "nope", PruneConfig(k=2))


def test_profile_pool_agrees_with_restrict(bagged, biased):
    _, prof = bagged
    pool = MemberPool(prof, biased.labels)
    sub = prof.restrict([1, 2, 5])
    g = pool.objective([1, 2, 5])
    assert g.dr == np.mean(sub.vote_orig != sub.vote_pert)
    assert g.err == np.mean(vote_matrix(sub.orig, sub.weights, 2) != biased.labels)
    assert isinstance(sub, EnsembleProfile)
