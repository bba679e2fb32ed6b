"""Threshold and sample-size search, sweeps and CSV output."""

import csv
import io
import math

import numpy as np
import pytest

from probcast.bounds import (
    combined_security, contagion_consistency_bound, contagion_validity_bound, log_add_capped, sieve_consistency_bound,
    sieve_total_validity_bound, totality_split_term,
)
from probcast.core import ConfigError, ProtocolParams, SystemConfig
from probcast.numerics import NEG_INF, log_binom_tail
from probcast.optimizer import (
    CSV_HEADER, InfeasibleError, _contagion_terms_all_dhat, best_echo_threshold, best_ready_thresholds,
    optimize_params, rows_to_csv, scan_integer, sweep,
)


class TestScan:
    """Coarse-to-fine integer minimisation."""

    def test_convex(self):
        x, v = scan_integer(lambda t: (t - 137) ** 2, 0, 1000)
        assert (x, v) == (137, 0)

    def test_ties_go_to_smallest(self):
        assert scan_integer(lambda t: 0.0, 3, 9)[0] == 3
        assert scan_integer(lambda t: min(abs(t - 10), abs(t - 20)), 0, 30)[0] == 10

    def test_empty_range(self):
        with pytest.raises(InfeasibleError):
            scan_integer(lambda t: t, 5, 4)


class TestThresholds:
    """Per-layer threshold searches match exhaustive enumeration."""

    def test_echo_threshold_exhaustive(self):
        c, f, e, log_pb = 300, 0.1, 96, math.log(1e-9)

        def objective(e_hat):
            cons = sieve_consistency_bound(c, f, e, e_hat)
            return log_add_capped(sieve_total_validity_bound(c, f, e, e_hat, log_pb), cons, cons)

        brute = min(range(e // 2, e + 1), key=lambda h: (objective(h), h))
        e_hat, val, _, _ = best_echo_threshold(c, f, e, log_pb)
        assert val == pytest.approx(objective(brute), rel=1e-12)

    def test_vectorised_terms_match_scalar_bounds(self):
        n, c, f, r, r_hat, d = 80, 72, 0.1, 16, 4, 16
        terms = _contagion_terms_all_dhat(n, c, f, r, r_hat, d, 1e-30)
        for d_hat in (5, 9, 12, 16):
            _, log_mu = contagion_consistency_bound(n, c, f, r, r_hat, d, d_hat, NEG_INF)
            split = totality_split_term(n, c, f, r, r_hat, d, d_hat)
            o = log_binom_tail(d, f, d - d_hat + 1)
            assert terms["mu"][d_hat] == pytest.approx(log_mu, rel=1e-9, abs=1e-300)
            assert terms["split"][d_hat] == pytest.approx(split, rel=1e-9, abs=1e-300)
            assert terms["o"][d_hat] == pytest.approx(o, rel=1e-9, abs=1e-300)

    def test_ready_thresholds_exhaustive(self):
        n, c, f, r, d = 60, 54, 0.1, 12, 12

        def objective(r_hat, d_hat):
            log_c, log_mu = contagion_consistency_bound(n, c, f, r, r_hat, d, d_hat, NEG_INF)
            split = totality_split_term(n, c, f, r, r_hat, d, d_hat)
            o = log_binom_tail(d, f, d - d_hat + 1)
            return log_add_capped(o, log_mu, log_mu, split)

        pairs = [(rh, dh) for rh in range(0, r) for dh in range(d + 1) if rh * d < dh * r]
        brute = min(objective(*p) for p in pairs)
        r_hat, d_hat, val = best_ready_thresholds(n, c, f, r, d)
        assert r_hat * d < d_hat * r
        assert val == pytest.approx(brute, rel=1e-9)
        assert objective(r_hat, d_hat) == pytest.approx(val, rel=1e-9)


class TestOptimize:
    """Sample-size search."""

    def test_degenerate_budget_completes(self):
        res = optimize_params(64, 0.1, 1)
        p = res.params
        assert (p.g, p.e, p.r, p.d) == (1, 1, 1, 1)
        assert res.report.eps_combined <= 0.0

    def test_equal_mode_sizes(self):
        res = optimize_params(256, 0.1, 24)
        p = res.params
        assert (p.g, p.e, p.r, p.d) == (24, 24, 24, 24)

    def test_unequal_never_worse(self):
        eq = optimize_params(256, 0.05, 32)
        uneq = optimize_params(256, 0.05, 32, mode="unequal", budget=12)
        p = uneq.params
        assert p.g + p.e + p.r + p.d == 128
        assert uneq.report.eps_combined <= eq.report.eps_combined + 1e-12

    def test_bad_arguments(self):
        with pytest.raises(InfeasibleError):
            optimize_params(64, 0.1, 0)
        with pytest.raises(ConfigError):
            optimize_params(64, 0.1, 8, mode="other")


class TestSweep:
    """Rows and CSV."""

    def test_single_point(self):
        rows = sweep("S", [16], {"n": 128, "f": 0.1})
        assert len(rows) == 1 and rows[0][0] == 16 and len(rows[0]) == len(CSV_HEADER)

    def test_f_zero_row(self):
        # Without Byzantine processes the validity column is the gossip totality bound.
        row = sweep("f", [0.0], {"n": 128, "s": 32})[0]
        p = ProtocolParams(g=32)
        pb = combined_security(SystemConfig(128), p).log10("eps_pb_totality")
        assert float(row[CSV_HEADER.index("log10_eps_v")]) == pytest.approx(pb, rel=1e-6)

    def test_csv(self):
        text = rows_to_csv(sweep("N", [64, 128], {"f": 0.1, "s": 16}))
        parsed = list(csv.reader(io.StringIO(text)))
        assert parsed[0] == CSV_HEADER and [r[0] for r in parsed[1:]] == ["64", "128"]

    def test_bad_axis(self):
        with pytest.raises(ConfigError):
            sweep("G", [1], {"n": 10, "f": 0.1, "s": 4})
