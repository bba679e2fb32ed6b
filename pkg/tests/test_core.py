"""Configuration records, seeded sampling and signatures."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from probcast.core import (
    ConfigError, InvalidUniverseError, ProtocolParams, SignatureAuthority, SystemConfig,
    derive_rng, multiplicities, sample_poisson_distinct, sample_with_replacement,
)


class TestSystemConfig:
    """Byzantine population and correct-process bookkeeping."""

    def test_byzantine_ids_are_highest(self):
        cfg = SystemConfig(10, 0.3)
        assert cfg.byzantine_set == frozenset({7, 8, 9})
        assert cfg.c == 7
        assert cfg.correct_ids() == list(range(7))

    def test_f_zero_has_no_byzantine(self):
        assert SystemConfig(5).byzantine_set == frozenset()

    def test_floor_of_fn(self):
        assert SystemConfig(1024, 0.1).byzantine_count == 102

    @pytest.mark.parametrize("n,f", [(0, 0.0), (3, 1.0), (3, -0.1)])
    def test_rejects_bad_config(self, n, f):
        with pytest.raises(ConfigError):
            SystemConfig(n, f)

    def test_explicit_set_must_match_count(self):
        SystemConfig(4, 0.25, frozenset({0}))
        with pytest.raises(ConfigError):
            SystemConfig(4, 0.25, frozenset({0, 1}))


class TestProtocolParams:
    """Threshold validation."""

    def test_defaults_validate(self):
        assert ProtocolParams().validate() is not None

    def test_threshold_above_sample(self):
        with pytest.raises(ConfigError):
            ProtocolParams(e=3, e_hat=4).validate()

    def test_feedback_order(self):
        with pytest.raises(ConfigError):
            ProtocolParams(r=4, r_hat=2, d=4, d_hat=2).validate()
        ProtocolParams(r=4, r_hat=2, d=4, d_hat=2).validate(require_feedback_order=False)

    def test_as_dict_keys(self):
        assert list(ProtocolParams().as_dict()) == ["G", "E", "E_hat", "R", "R_hat", "D", "D_hat"]


class TestSampling:
    """Seeded multiset and Poisson-set samplers."""

    def test_single_element_universe(self):
        assert sample_with_replacement(1, 3, derive_rng(0)) == [0, 0, 0]

    def test_empty_draw(self):
        assert sample_with_replacement(9, 0, derive_rng(0)) == []

    def test_golden_multiset(self):
        assert sample_with_replacement(4, 2, derive_rng(7, 0)) == [1, 3]

    def test_empty_universe(self):
        with pytest.raises(InvalidUniverseError):
            sample_with_replacement(0, 1, derive_rng(0))
        with pytest.raises(InvalidUniverseError):
            sample_poisson_distinct(0, 1.0, derive_rng(0))

    def test_poisson_zero_mean(self):
        assert sample_poisson_distinct(10, 0.0, derive_rng(0)) == set()

    def test_poisson_single_universe(self):
        for seed in range(20):
            s = sample_poisson_distinct(1, 5.0, derive_rng(seed))
            assert s in (set(), {0})

    def test_poisson_golden(self):
        assert sample_poisson_distinct(100, 3, derive_rng(7, 1)) == {44}

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 50), st.floats(0, 20), st.integers(0, 2**32))
    def test_poisson_members_in_range(self, n, mean, seed):
        s = sample_poisson_distinct(n, mean, derive_rng(seed))
        assert all(0 <= x < n for x in s) and len(s) <= n

    def test_streams_independent_of_creation_order(self):
        a = derive_rng(3, 1, 2).integers(0, 1000, 5)
        derive_rng(3, 9)
        b = derive_rng(3, 1, 2).integers(0, 1000, 5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, derive_rng(3, 2, 1).integers(0, 1000, 5))

    def test_multiplicities(self):
        assert multiplicities([3, 1, 3, 3]) == {3: 3, 1: 1}


class TestSignatures:
    """Only the authority's own tags verify."""

    def test_sign_verify(self):
        auth = SignatureAuthority()
        p = auth.sign(2, 5)
        assert auth.verify(p) and auth.verify(p, 2)
        assert not auth.verify(p, 1)

    def test_other_authority_rejected(self):
        p = SignatureAuthority().sign(0, 1)
        assert not SignatureAuthority().verify(p)
