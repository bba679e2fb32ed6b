"""Scripted attackers: step-by-step arenas against their fast evaluations."""

import pytest
from hypothesis import given, settings, strategies as st

from probcast.adversaries import (
    TwoPhaseTable, arena_samples, contagion_consistency_outcome, contagion_totality_outcome,
    passive_adversary, run_contagion_consistency_attack, run_contagion_totality_attack,
    run_simplified_sieve_game, simplified_sieve_outcome,
)
from probcast.core import ConfigError, ProtocolParams, SystemConfig
from probcast.simnet import SimWorld, run_to_quiescence


class TestPassive:
    """Silent Byzantine processes."""

    def test_same_as_no_adversary(self):
        cfg, params = SystemConfig(20, 0.2), ProtocolParams()
        worlds = []
        for adv in (None, passive_adversary()):
            w = SimWorld(cfg, params, 5, adv, record_trace=True)
            w.drain()
            w.broadcast(1)
            worlds.append(run_to_quiescence(w))
        assert worlds[0].trace == worlds[1].trace

    def test_failures_only_from_samples(self):
        # With silent Byzantine processes nobody ever delivers a wrong message.
        cfg = SystemConfig(20, 0.25)
        for seed in range(10):
            w = SimWorld(cfg, ProtocolParams(), seed, passive_adversary())
            w.drain()
            w.broadcast(1)
            rep = run_to_quiescence(w).report()
            assert rep.integrity and rep.consistency and rep.no_duplication


class TestTwoPhaseTable:
    """Table construction, validation and JSON."""

    def test_default(self):
        t = TwoPhaseTable.default(3)
        assert t.first == [1, 1, 1] and t.second[1] == [2, 2] and t.second[3] == []
        assert TwoPhaseTable.default(1).second == {0: [1], 1: []}

    def test_validation(self):
        with pytest.raises(ConfigError):
            TwoPhaseTable([1, 1], {0: [2, 2], 1: [2], 2: []}).validate(3)
        with pytest.raises(ConfigError):
            TwoPhaseTable([1, 4], {0: [2, 2], 1: [2], 2: []}).validate(2)

    def test_json_round_trip(self):
        t = TwoPhaseTable([1, 2, 1], {0: [2, 2, 2], 1: [3, 3], 2: [2], 3: []})
        back = TwoPhaseTable.from_json(t.to_json())
        assert back == t


class TestSimplifiedSieve:
    """Two-phase attack on the simplified consistent broadcast."""

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from([(8, 0.25), (10, 0.3), (6, 0.0), (4, 0.25), (12, 0.1)]),
           st.integers(1, 12), st.data(), st.integers(0, 10**6))
    def test_reference_and_fast_agree(self, cfg, e, data, seed):
        e_hat = data.draw(st.integers(1, e))
        config, params = SystemConfig(*cfg), ProtocolParams(e=e, e_hat=e_hat)
        assert run_simplified_sieve_game(config, params, None, seed) == simplified_sieve_outcome(config, params, seed)

    def test_single_correct_process(self):
        cfg = SystemConfig(2, 0.5)
        for seed in range(50):
            out = run_simplified_sieve_game(cfg, ProtocolParams(e=3, e_hat=2), None, seed)
            assert not out["consistency_violated"]

    def test_poisoned_sample_violates(self):
        cfg, params = SystemConfig(8, 0.25), ProtocolParams(e=4, e_hat=2)
        for seed in range(100):
            s = arena_samples(cfg, params.e, seed, [1])
            if (s.byzantine_slots >= params.e_hat).any():
                out = run_simplified_sieve_game(cfg, params, None, seed)
                assert out == {"consistency_violated": True, "N_H": 0}
                return
        pytest.fail("no poisoned sample drawn")

    def test_custom_table_runs(self):
        cfg, params = SystemConfig(6, 0.0), ProtocolParams(e=3, e_hat=2)
        table = TwoPhaseTable([1, 2, 1, 2, 1, 2], {n: [3] * (6 - n) for n in range(7)})
        out = run_simplified_sieve_game(cfg, params, table, 1)
        assert set(out) == {"consistency_violated", "N_H"}


class TestReliableLayerAttacks:
    """Conflicting Readys and the split attack."""

    CASES = [(10, 0.3, ProtocolParams(r=4, r_hat=1, d=4, d_hat=2)),
             (12, 0.25, ProtocolParams(r=3, r_hat=1, d=3, d_hat=2)),
             (16, 0.125, ProtocolParams(r=10, r_hat=4, d=10, d_hat=7)),
             (8, 0.0, ProtocolParams())]

    @pytest.mark.parametrize("n,f,params", CASES)
    def test_consistency_fast_path(self, n, f, params):
        cfg = SystemConfig(n, f)
        for seed in range(60):
            summary = run_contagion_consistency_attack(cfg, params, seed)
            assert summary.attack_succeeded == contagion_consistency_outcome(cfg, params, seed)

    @pytest.mark.parametrize("n,f,params", CASES)
    def test_totality_fast_path(self, n, f, params):
        cfg = SystemConfig(n, f)
        for seed in range(60):
            summary = run_contagion_totality_attack(cfg, params, seed)
            assert summary.totality_violated == contagion_totality_outcome(cfg, params, seed)

    def test_no_byzantine_no_conflict(self):
        cfg = SystemConfig(10)
        assert not any(contagion_consistency_outcome(cfg, ProtocolParams(), s) for s in range(50))

    def test_byzantine_slots_alone_suffice(self):
        cfg = SystemConfig(10, 0.5)
        params = ProtocolParams(r=4, r_hat=3, d=4, d_hat=1)
        assert any(contagion_consistency_outcome(cfg, params, s) for s in range(50))

    def test_zero_ready_threshold_never_splits(self):
        cfg = SystemConfig(12, 0.25)
        params = ProtocolParams(r=4, r_hat=0, d=4, d_hat=2)
        assert not any(contagion_totality_outcome(cfg, params, s) for s in range(50))

    def test_single_correct_process_never_splits(self):
        cfg = SystemConfig(4, 0.75)
        params = ProtocolParams(r=4, r_hat=1, d=4, d_hat=2)
        assert not any(run_contagion_totality_attack(cfg, params, s).totality_violated for s in range(30))
