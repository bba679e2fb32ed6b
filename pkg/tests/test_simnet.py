"""Simulated network: determinism, property checks, adversary interface, replay."""

import io
import math

import pytest

from probcast.bounds import murmur_totality_bound, sieve_total_validity_bound
from probcast.core import ConfigError, ProtocolParams, SystemConfig
from probcast.murmur import ECHO, GOSSIP, READY, gossip_link_probability
from probcast.simnet import (
    Adversary, BudgetExceeded, SimulatedExecutionFailure, SimWorld, TraceSummary, check_properties,
    draw_gossip_samples, export_trace, load_trace, replay, run_honest, run_to_quiescence, world_new,
)
from probcast.core import derive_rng


def summary_with(deliveries, correct=frozenset({0, 1, 2}), layer="prb", message=1):
    return TraceSummary(n=3, correct=correct, sender=0, sender_correct=True, broadcast_message=message,
                        layer=layer, deliveries={layer: deliveries})


class TestWorld:
    """Construction and honest runs."""

    def test_single_process_world(self):
        w = world_new(SystemConfig(1), ProtocolParams())
        assert w.contagion[0] is not None and w.api.byzantine_ids() == []

    def test_honest_connected_run_delivers_everywhere(self):
        for seed in range(5):
            s = run_honest(SystemConfig(30), ProtocolParams(g=6), seed)
            if s.gossip_connected:
                rep = s.report()
                assert rep.all_hold()
                assert set(s.delivered()) == set(range(30))

    def test_determinism(self):
        a = run_honest(SystemConfig(25, 0.2), ProtocolParams(), 11, record_trace=True)
        b = run_honest(SystemConfig(25, 0.2), ProtocolParams(), 11, record_trace=True)
        assert a.trace == b.trace and a.deliveries == b.deliveries

    def test_random_scheduler_is_seeded(self):
        a = run_honest(SystemConfig(20), ProtocolParams(), 3, scheduler="random", record_trace=True)
        b = run_honest(SystemConfig(20), ProtocolParams(), 3, scheduler="random", record_trace=True)
        c = run_honest(SystemConfig(20), ProtocolParams(), 3, record_trace=True)
        assert a.trace == b.trace and a.trace != c.trace

    @pytest.mark.parametrize("protocol,layer", [("murmur", "pb"), ("sieve", "pcb"), ("contagion", "prb")])
    def test_layer_selection(self, protocol, layer):
        s = run_honest(SystemConfig(10), ProtocolParams(), 0, protocol=protocol)
        assert s.layer == layer

    def test_bad_options(self):
        with pytest.raises(ConfigError):
            SimWorld(SystemConfig(4), ProtocolParams(), protocol="nope")
        with pytest.raises(ConfigError):
            SimWorld(SystemConfig(4), ProtocolParams(), sender=9)

    def test_byzantine_sender_cannot_broadcast(self):
        w = SimWorld(SystemConfig(4, 0.25), ProtocolParams(), sender=3)
        with pytest.raises(ConfigError):
            w.broadcast(1)

    def test_gossip_samples_fixed_size(self):
        samples = draw_gossip_samples(50, 4.0, derive_rng(1))
        assert len(samples) == 50 and all(s <= set(range(50)) for s in samples)


class TestProperties:
    """Property flags on hand-built delivery logs."""

    def test_empty_log_holds_vacuously(self):
        rep = check_properties(summary_with({}))
        assert rep.no_duplication and rep.integrity and rep.consistency and rep.totality
        assert not rep.validity  # the correct sender never delivered

    def test_double_delivery(self):
        rep = check_properties(summary_with({0: [1, 1], 1: [1], 2: [1]}))
        assert not rep.no_duplication and rep.validity

    def test_conflicting_deliveries(self):
        s = summary_with({0: [1], 1: [2], 2: [1]})
        assert s.consistency_violated and not s.report().integrity

    def test_partial_delivery(self):
        assert summary_with({0: [1]}).totality_violated


class StuckAdversary(Adversary):
    def step(self, api):
        pass


class TestAdversaryInterface:
    """What the adversary may and may not do."""

    def test_budget_exceeded(self):
        w = SimWorld(SystemConfig(4), ProtocolParams(), adversary=StuckAdversary())
        with pytest.raises(BudgetExceeded):
            run_to_quiescence(w, max_adversary_steps=10)

    def test_no_byzantine_when_f_zero(self):
        assert SimWorld(SystemConfig(6), ProtocolParams()).api.byzantine_ids() == []

    def test_only_byzantine_keys_and_voices(self):
        api = SimWorld(SystemConfig(4, 0.25), ProtocolParams()).api
        api.sign(3, 1)
        with pytest.raises(SimulatedExecutionFailure):
            api.sign(0, 1)
        with pytest.raises(SimulatedExecutionFailure):
            api.send(0, 1, GOSSIP, None)

    def test_forged_payload_rejected(self):
        w = SimWorld(SystemConfig(4, 0.25), ProtocolParams(g=8))
        w.drain()
        for p in (0, 1, 2):
            w.api.send(3, p, GOSSIP, w.api.forge(0, 2))
        w.drain()
        assert w.summary().delivered("pb") == {}

    def test_forced_deliveries_need_oracle_layer(self):
        w = SimWorld(SystemConfig(4, 0.25), ProtocolParams())
        payload = w.authority.sign(0, 1)
        with pytest.raises(SimulatedExecutionFailure):
            w.api.force_pcb_deliver(0, payload)
        w = SimWorld(SystemConfig(4, 0.25), ProtocolParams(), protocol="contagion", lower_layers=False)
        w.api.force_pcb_deliver(0, payload)
        with pytest.raises(SimulatedExecutionFailure):
            w.api.force_pcb_deliver(0, payload)
        with pytest.raises(SimulatedExecutionFailure):
            w.api.force_pcb_deliver(3, payload)

    def test_oracle_outputs_one_message(self):
        w = SimWorld(SystemConfig(4, 0.25), ProtocolParams(), lower_layers=False)
        p = w.api.pcb_oracle_payload(1)
        assert w.api.pcb_oracle_payload(1) == p
        with pytest.raises(SimulatedExecutionFailure):
            w.api.pcb_oracle_payload(2)

    def test_forced_pb_delivery_drives_sieve(self):
        w = SimWorld(SystemConfig(5), ProtocolParams(e=3, e_hat=1), protocol="sieve", lower_layers=False)
        w.drain()
        payload = w.authority.sign(0, 1)
        for p in range(5):
            w.api.force_pb_deliver(p, payload)
        w.drain()
        assert set(w.summary().delivered("pcb")) == set(range(5))


class TestReplay:
    """Exported traces re-execute to the same outcome."""

    def test_round_trip(self):
        cfg, params = SystemConfig(15, 0.2), ProtocolParams()
        s = run_honest(cfg, params, 4, record_trace=True)
        buf = io.StringIO()
        export_trace(s.trace, buf)
        buf.seek(0)
        records = load_trace(buf)
        assert any(r["record_kind"] == "Broadcast" for r in records)
        again = replay(SimWorld(cfg, params, 4), records)
        assert again.deliveries == s.deliveries

    def test_unknown_message_rejected(self):
        w = SimWorld(SystemConfig(4), ProtocolParams())
        with pytest.raises(ValueError):
            replay(w, [{"src": 0, "dst": 1, "record_kind": "Ready", "message": 9}])


class TestEmpiricalBounds:
    """Honest-run failure frequencies stay within their bounds."""

    def test_gossip_totality(self):
        n, g, trials = 40, 4, 400
        fails = 0
        for t in range(trials):
            s = run_honest(SystemConfig(n), ProtocolParams(g=g), 0, run=t, protocol="murmur")
            fails += s.totality_violated or s.validity_violated
        bound = math.exp(murmur_totality_bound(n, gossip_link_probability(n, g)))
        sigma = math.sqrt(bound * (1 - bound) / trials)
        assert fails / trials <= bound + 3 * sigma

    def test_sieve_total_validity(self):
        cfg, params, trials = SystemConfig(50, 0.1), ProtocolParams(g=8, e=20, e_hat=13), 300
        fails = 0
        for t in range(trials):
            s = run_honest(cfg, params, 1, run=t, protocol="sieve")
            fails += s.validity_violated
        log_pb = murmur_totality_bound(cfg.c, gossip_link_probability(50, 8))
        bound = min(1.0, math.exp(sieve_total_validity_bound(cfg.c, 0.1, 20, 13, log_pb)))
        sigma = math.sqrt(bound * (1 - bound) / trials)
        assert fails / trials <= bound + 3 * sigma
