"""Threshold contagion: graph sampling, closure, the game and its exact chain."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import conditioned_transition_mc, enumerate_gamma
from probcast.core import derive_rng
from probcast.epidemics import (
    MISSING, GameParams, Multigraph, PolicyError, absorb_round, epidemic_run, gamma_distribution,
    highest_index_policy, lowest_index_policy, markov_contagion_transition, monte_carlo_gamma,
    play_threshold_contagion, random_multigraph, round_start_transition, round_visit_distribution,
    total_variation, uniform_policy,
)


def graph(rows):
    return Multigraph(len(rows), np.array(rows, dtype=np.int64))


class TestGraphs:
    """Random multigraphs and the infection closure."""

    def test_no_links(self):
        g = random_multigraph(5, 3, 0.0, derive_rng(0))
        assert (g.predecessors == MISSING).all()

    def test_single_node(self):
        g = random_multigraph(1, 4, 1.0, derive_rng(0))
        assert (g.predecessors == 0).all()

    def test_golden_graph(self):
        g = random_multigraph(4, 2, 0.5, derive_rng(7, 5))
        assert g.predecessors.tolist() == [[1, -1], [0, -1], [-1, 3], [-1, -1]]

    def test_zero_threshold_infects_all(self):
        g = graph([[MISSING], [MISSING], [MISSING]])
        assert epidemic_run(g, set(), 0).all()

    def test_two_infected_predecessors(self):
        g = graph([[MISSING, MISSING], [MISSING, MISSING], [0, 1], [0, 3]])
        out = epidemic_run(g, {0, 1}, 2)
        assert out.tolist() == [True, True, True, False]

    def test_three_cycle(self):
        g = graph([[2], [0], [1]])
        assert epidemic_run(g, {0}, 1).all()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 4), st.floats(0, 1), st.integers(0, 5), st.integers(0, 2**31))
    def test_closure_is_fixed_point_and_monotone(self, n, r, l, r_hat, seed):
        rng = derive_rng(seed)
        g = random_multigraph(n, r, l, rng)
        seed_set = rng.random(n) < 0.3
        out = epidemic_run(g, seed_set, r_hat)
        assert (out >= seed_set).all()
        assert (epidemic_run(g, out, r_hat) == out).all()
        assert (epidemic_run(g, out | seed_set, r_hat) >= out).all()


class TestGame:
    """The K-round game with a node-choosing player."""

    def test_no_contagion_possible(self):
        p = GameParams(10, 2, 0.7, 3, 2, 3)
        for seed in range(5):
            assert play_threshold_contagion(p, uniform_policy, derive_rng(seed)) == 6
        p = GameParams(5, 2, 0.0, 4, 2, 1)
        assert play_threshold_contagion(p, lowest_index_policy, derive_rng(0)) == 4

    def test_uniform_policy_often_saturates(self):
        p = GameParams(11, 3, 1.0, 1, 3, 2)
        hits = sum(play_threshold_contagion(p, uniform_policy, derive_rng(s)) == 11 for s in range(200))
        assert hits > 50

    def test_policy_contract(self):
        p = GameParams(4, 1, 1.0, 1, 2, 1)
        with pytest.raises(PolicyError):
            play_threshold_contagion(p, lambda inf, s, rng: [0, 0], derive_rng(0))
        with pytest.raises(PolicyError):
            play_threshold_contagion(p, lambda inf, s, rng: [0, 9], derive_rng(0))

    def test_policies_pick_healthy(self):
        inf = np.array([True, False, False, True, False])
        assert lowest_index_policy(inf, 2, None) == [1, 2]
        assert highest_index_policy(inf, 2, None) == [4, 2]
        assert set(uniform_policy(inf, 3, derive_rng(0))) == {1, 2, 4}

    def test_bad_params(self):
        with pytest.raises(ValueError):
            GameParams(3, 1, 1.5, 1, 1, 1)
        with pytest.raises(ValueError):
            GameParams(3, 1, 1.0, 1, 4, 1)


class TestChain:
    """Exact chain against enumeration and simulation."""

    def test_absorbing_without_new_infections(self):
        p = GameParams(6, 2, 1.0, 1, 1, 1)
        assert markov_contagion_transition(3, 0, p).tolist() == [1.0, 0.0, 0.0, 0.0]
        assert markov_contagion_transition(6, 2, p).tolist() == [1.0]

    def test_transition_against_conditioned_simulation(self):
        p = GameParams(6, 2, 1.0, 1, 1, 1)
        exact = markov_contagion_transition(2, 2, p)
        mc = conditioned_transition_mc(6, 2, 1, 2, 2, 200_000, derive_rng(3))
        assert total_variation(exact, mc) < 0.01

    def test_transition_with_history(self):
        p = GameParams(8, 3, 1.0, 1, 1, 2)
        exact = markov_contagion_transition(4, 2, p)
        mc = conditioned_transition_mc(8, 3, 2, 4, 2, 200_000, derive_rng(4))
        assert total_variation(exact, mc) < 0.01

    def test_round_start(self):
        p = GameParams(4, 1, 1.0, 1, 2, 1)
        assert round_start_transition([1, 0, 0, 0, 0], p) == {(2, 2): 1.0}
        assert round_start_transition([0, 0, 0, 0, 1], p) == {(4, 0): 1.0}
        mixed = round_start_transition([0.5, 0, 0.3, 0.2, 0], p)
        assert mixed == pytest.approx({(2, 2): 0.5, (4, 2): 0.3, (3, 0): 0.2})

    def test_absorb_keeps_mass(self):
        p = GameParams(9, 3, 0.8, 1, 2, 2)
        final, lost = absorb_round({(2, 2): 0.6, (5, 1): 0.4}, p)
        assert final.sum() + lost == pytest.approx(1.0)

    def test_zero_threshold_point_mass(self):
        g = gamma_distribution(GameParams(5, 2, 0.5, 2, 1, 0))
        assert g.pmf(1)[5] == pytest.approx(1.0)

    def test_no_links_deterministic(self):
        g = gamma_distribution(GameParams(7, 2, 0.0, 3, 3, 1))
        assert [int(np.argmax(g.pmf(k))) for k in (1, 2, 3)] == [3, 6, 6]

    @pytest.mark.parametrize("params", [(3, 2, 1.0, 2, 1, 1), (4, 1, 0.37, 2, 2, 1), (4, 2, 1.0, 1, 1, 2),
                                        (3, 2, 0.37, 2, 0, 1), (2, 2, 1.0, 2, 1, 3)])
    def test_against_enumeration(self, params):
        ex = enumerate_gamma(*params)
        g = gamma_distribution(GameParams(*params))
        for k in range(params[3]):
            assert total_variation(ex[k], g.pmf(k + 1)) < 1e-9

    def test_against_simulation(self):
        p = GameParams(12, 3, 0.8, 2, 2, 2)
        mc = monte_carlo_gamma(p, 20_000, derive_rng(5))
        g = gamma_distribution(p)
        for k in (1, 2):
            assert total_variation(mc[k - 1], g.pmf(k)) < 0.02

    def test_visits_equal_summed_rounds(self):
        p = GameParams(9, 3, 1.0, 9, 1, 2)
        visits, lost = round_visit_distribution(p)
        g = gamma_distribution(p)
        summed = sum(g.pmf(k) for k in range(1, 10))
        summed[0] += 1.0
        assert lost < 1e-20
        assert np.max(np.abs(visits - summed)) < 1e-9
        assert visits.sum() == pytest.approx(10.0)

    def test_visits_requirements(self):
        with pytest.raises(ValueError):
            round_visit_distribution(GameParams(5, 2, 1.0, 5, 2, 1))

    def test_json(self):
        out = gamma_distribution(GameParams(3, 1, 1.0, 1, 1, 0)).to_json()
        assert out["rounds"][0] == [None, None, None, 0.0]
        assert out["params"]["R_hat"] == 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 25), st.integers(0, 5), st.floats(0, 1), st.integers(1, 3), st.integers(0, 25), st.integers(0, 6))
    def test_rounds_are_distributions(self, n, r, l, k, s, r_hat):
        s = min(s, n)
        g = gamma_distribution(GameParams(n, r, l, k, s, r_hat))
        for i in range(k):
            assert g.pmf(i + 1).sum() + g.truncated[i] == pytest.approx(1.0, abs=1e-9)
            assert (g.pmf(i + 1) >= 0).all()
