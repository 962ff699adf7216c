"""Fading synthesis, phase alignment, beamforming, instantaneous SINR."""

import dataclasses
import math

import numpy as np
import pytest

from risauction import channel
from risauction.channel import (array_response, align_phases, bs_ris_channel,
                                instantaneous_sinr, make_beamformer, random_phases,
                                ris_user_channel, sample_fading, total_channel,
                                user_rate)
from risauction.estimator import Allocation
from risauction.scenario import SystemParams, sample_scenario

from conftest import SMALL_PARAMS, build_scenario, small_params


class TestArrayResponse:
    def test_broadside_all_ones(self):
        assert np.allclose(array_response(0.0, 5), np.ones(5))

    def test_unit_modulus(self):
        a = array_response(0.731, 32)
        assert np.allclose(np.abs(a), 1.0)

    def test_self_correlation_equals_length(self):
        a = array_response(-0.42, 17)
        assert (a @ np.conj(a)).real == pytest.approx(17.0, rel=1e-12)

    def test_invalid_length(self):
        with pytest.raises(ValueError):
            array_response(0.0, 0)


class TestSampleFading:
    def test_determinism(self):
        a = sample_fading(sample_scenario(SMALL_PARAMS, 0), 9)
        b = sample_fading(sample_scenario(SMALL_PARAMS, 0), 9)
        assert np.array_equal(a.g_direct, b.g_direct)
        assert np.array_equal(a.g_ris_user, b.g_ris_user)

    def test_norm_and_mean_statistics(self):
        # collect >= 1e4 direct vectors across users, BSs and draws
        p = small_params(n_ue=50, n_bs=2, m_bs=8)
        s = sample_scenario(p, 0)
        norms, entries = [], []
        for seed in range(100):
            f = sample_fading(s, seed)
            norms.append((np.abs(f.g_direct) ** 2).sum(axis=-1).ravel())
            entries.append(f.g_direct.ravel())
        norms = np.concatenate(norms)
        entries = np.concatenate(entries)
        assert len(norms) >= 10_000
        se_norm = math.sqrt(p.m_bs / len(norms))  # Var(||g||^2) = m_bs
        assert abs(norms.mean() - p.m_bs) <= 3 * se_norm
        se_entry = math.sqrt(0.5 / len(entries))
        assert abs(entries.mean().real) <= 3 * se_entry
        assert abs(entries.mean().imag) <= 3 * se_entry


class TestBsRisChannel:
    def test_rank_one(self):
        s = sample_scenario(SMALL_PARAMS, 3)
        h = bs_ris_channel(s, 1, 0)
        sv = np.linalg.svd(h, compute_uv=False)
        assert sv[1] <= 1e-12 * sv[0]

    def test_frobenius_norm(self):
        p = SMALL_PARAMS
        s = sample_scenario(p, 3)
        h = bs_ris_channel(s, 2, 1)
        expect = s.gain_rb[2, 1] ** 2 * p.m_ris * p.m_bs
        assert np.linalg.norm(h) ** 2 == pytest.approx(expect, rel=1e-12)

    def test_linear_in_gain(self):
        base = build_scenario(SMALL_PARAMS, gain_rb=1e-3)
        doubled = build_scenario(SMALL_PARAMS, gain_rb=2e-3)
        assert np.allclose(2 * bs_ris_channel(base, 0, 0), bs_ris_channel(doubled, 0, 0))


class TestRisUserChannel:
    def test_pure_los_limit(self):
        s = build_scenario(SMALL_PARAMS, k_ur=1e14, aod_ris_user=0.4)
        f = sample_fading(s, 0)
        h = ris_user_channel(s, f, 0, 0)
        los = s.gain_ur[0, 0] * array_response(0.4, SMALL_PARAMS.m_ris)
        assert np.allclose(h, los, rtol=1e-6)

    def test_pure_rayleigh_limit(self):
        s = build_scenario(SMALL_PARAMS, k_ur=0.0)
        f = sample_fading(s, 1)
        h = ris_user_channel(s, f, 2, 1)
        assert np.allclose(h, s.gain_ur[2, 1] * f.g_ris_user[2, 1])

    def test_mean_energy(self):
        # k^2 + kbar^2 = 1 keeps E||h||^2 = gain^2 * m_ris
        p = small_params(m_ris=16)
        s = sample_scenario(p, 2)
        u, r = 1, 0
        vals = []
        for seed in range(10_000):
            f = channel.FadingRealization(
                g_direct=np.zeros((p.n_ue, p.n_bs, p.m_bs), dtype=complex),
                g_ris_user=(np.random.default_rng(seed).standard_normal((p.n_ue, p.n_ris, p.m_ris))
                            + 1j * np.random.default_rng(seed + 10 ** 6).standard_normal(
                                (p.n_ue, p.n_ris, p.m_ris))) / np.sqrt(2),
            )
            vals.append((np.abs(ris_user_channel(s, f, u, r)) ** 2).sum())
        vals = np.array(vals)
        expect = s.gain_ur[u, r] ** 2 * p.m_ris
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - expect) <= 3 * se


class TestAlignPhases:
    def test_zero_angles_zero_phases(self):
        s = build_scenario(SMALL_PARAMS, association=[0] * SMALL_PARAMS.n_ue)
        phases = align_phases(s, 0, 0, 0)
        assert np.allclose(phases, 0.0)

    def test_los_terms_all_real_positive(self):
        s = build_scenario(SMALL_PARAMS, association=[0] * SMALL_PARAMS.n_ue,
                           aoa_ris=0.7, aod_ris_user=-0.3)
        phases = align_phases(s, 1, 0, 2)
        tab_ue = array_response(-0.3, SMALL_PARAMS.m_ris)
        tab_bs = array_response(0.7, SMALL_PARAMS.m_ris)
        cascade = tab_ue * np.exp(1j * phases) * tab_bs
        assert abs(cascade.sum()) == pytest.approx(np.abs(cascade).sum(), rel=1e-12)

    def test_coherent_magnitude_brute_force(self):
        # aligned directional cascade magnitude: k * gain_ur * gain_rb * m_ris
        p = small_params(m_ris=32)
        s = build_scenario(p, association=[0] * p.n_ue, gain_ur=2e-4, gain_rb=5e-4,
                           k_ur=100.0, aoa_ris=1.1, aod_ris_user=0.25)
        u, r = 3, 2
        phases = align_phases(s, r, 0, u)
        k = math.sqrt(100.0 / 101.0)
        total = 0.0 + 0.0j
        for i in range(p.m_ris):
            a_ue = np.exp(1j * np.pi * i * np.sin(0.25))
            a_bs = np.exp(1j * np.pi * i * np.sin(1.1))
            total += s.gain_ur[u, r] * k * a_ue * np.exp(1j * phases[i]) * a_bs * s.gain_rb[r, 0]
        expect = k * 2e-4 * 5e-4 * p.m_ris
        assert abs(total) == pytest.approx(expect, rel=1e-12)

    def test_phase_range(self):
        s = build_scenario(SMALL_PARAMS, association=[0] * SMALL_PARAMS.n_ue,
                           aoa_ris=0.9, aod_ris_user=1.2)
        phases = align_phases(s, 0, 0, 0)
        assert np.all(phases >= 0) and np.all(phases < 2 * np.pi)

    def test_wrong_owner_rejected(self):
        s = build_scenario(SMALL_PARAMS)
        alloc = Allocation(owner=np.array([1, -1, -1, -1]))
        with pytest.raises(ValueError):
            align_phases(s, 0, 0, 0, allocation=alloc)

    def test_foreign_user_rejected(self):
        s = build_scenario(SMALL_PARAMS, association=[0, 1] * (SMALL_PARAMS.n_ue // 2))
        with pytest.raises(ValueError):
            align_phases(s, 0, 0, 1)  # user 1 is served by BS1


class TestRandomPhases:
    def test_range_and_determinism(self):
        a = random_phases(np.random.default_rng(0), 1000)
        b = random_phases(np.random.default_rng(0), 1000)
        assert np.array_equal(a, b)
        assert np.all(a >= 0) and np.all(a < 2 * np.pi)

    def test_uniform_circle_mean(self):
        phases = random_phases(np.random.default_rng(1), 100_000)
        z = np.exp(1j * phases).mean()
        se = math.sqrt(0.5 / len(phases))
        assert abs(z.real) <= 3 * se and abs(z.imag) <= 3 * se


class TestMakeBeamformer:
    def test_single_ris_exact_power(self):
        p = SMALL_PARAMS
        s = sample_scenario(p, 4)
        alloc = Allocation(owner=np.array([0, -1, -1, -1]))
        f = make_beamformer(s, 0, 0, alloc, np.array([p.tx_power]))
        assert np.linalg.norm(f.vector) ** 2 == pytest.approx(p.tx_power, rel=1e-12)

    def test_empty_allocation_mean_power(self):
        p = SMALL_PARAMS
        s = sample_scenario(p, 4)
        alloc = Allocation.empty(p.n_ris)
        rng = np.random.default_rng(0)
        powers = np.array([
            np.linalg.norm(make_beamformer(s, 0, 0, alloc, np.zeros(0), rng=rng).vector) ** 2
            for _ in range(10_000)])
        se = powers.std(ddof=1) / math.sqrt(len(powers))
        assert abs(powers.mean() - p.tx_power) <= 3 * se

    def test_two_ris_power_constraint_holds_at_any_array_size(self):
        # the directional superposition is rescaled onto the power constraint,
        # so the asymptotic ||f||^2 -> tx_power holds exactly at every size
        for m_bs in (8, 64, 512):
            p = small_params(m_bs=m_bs, n_ris=2)
            s = build_scenario(p, aod_bs=np.array([[0.2, 0.2], [0.9, 0.9]]))
            alloc = Allocation(owner=np.array([0, 0]))
            split = np.array([p.tx_power / 2, p.tx_power / 2])
            f = make_beamformer(s, 0, 0, alloc, split)
            assert np.linalg.norm(f.vector) ** 2 == pytest.approx(p.tx_power, rel=1e-12)

    def test_beam_direction_matches_plain_superposition(self):
        # rescaling changes only the norm, not the beam direction
        p = small_params(m_bs=16, n_ris=2)
        s = build_scenario(p, aod_bs=np.array([[0.2, 0.2], [0.9, 0.9]]))
        alloc = Allocation(owner=np.array([0, 0]))
        split = np.array([0.7, 0.3]) * p.tx_power
        f = make_beamformer(s, 0, 0, alloc, split).vector
        raw = np.sqrt(split[0] / p.m_bs) * np.conj(array_response(0.2, p.m_bs)) \
            + np.sqrt(split[1] / p.m_bs) * np.conj(array_response(0.9, p.m_bs))
        cos = abs(f @ np.conj(raw)) / (np.linalg.norm(f) * np.linalg.norm(raw))
        assert cos == pytest.approx(1.0, rel=1e-12)

    def test_power_split_mismatch_rejected(self):
        p = SMALL_PARAMS
        s = sample_scenario(p, 4)
        alloc = Allocation(owner=np.array([0, -1, -1, -1]))
        with pytest.raises(ValueError):
            make_beamformer(s, 0, 0, alloc, np.array([p.tx_power / 2]))

    def test_empty_allocation_needs_rng(self):
        s = sample_scenario(SMALL_PARAMS, 4)
        with pytest.raises(ValueError):
            make_beamformer(s, 0, 0, Allocation.empty(SMALL_PARAMS.n_ris), np.zeros(0))


def _oracle_sinr(s, fading, phases, beam_vectors, u):
    """Straight-line recomputation from raw channel matrices, sharing no code
    with the channel module: direct + sum_r (h_ur^T Phi_r H_rb)^T, then the
    averaged-interference SINR."""
    p = s.params

    def steering(angle, n):
        return np.array([np.exp(1j * np.pi * i * np.sin(angle)) for i in range(n)])

    def channel_to(u_, b_):
        h = s.gain_ub[u_, b_] * fading.g_direct[u_, b_]
        for r in range(p.n_ris):
            h_ur = s.gain_ur[u_, r] * (
                math.sqrt(s.k_ur[u_, r] / (1 + s.k_ur[u_, r])) * steering(s.aod_ris_user[u_, r], p.m_ris)
                + math.sqrt(1 / (1 + s.k_ur[u_, r])) * fading.g_ris_user[u_, r])
            big_h = s.gain_rb[r, b_] * np.outer(steering(s.aoa_ris[r, b_], p.m_ris),
                                                steering(s.aod_bs[r, b_], p.m_bs))
            h = h + (h_ur[None, :] @ np.diag(np.exp(1j * phases[r])) @ big_h)[0]
        return h

    d = int(s.association[u])
    num = abs(channel_to(u, d) @ beam_vectors[u]) ** 2
    den = p.noise_power
    for b in range(p.n_bs):
        if b == d:
            continue
        users_b = np.flatnonzero(s.association == b)
        if len(users_b) == 0:
            continue
        h_ub = channel_to(u, b)
        den += sum(abs(h_ub @ beam_vectors[j]) ** 2 for j in users_b) / len(users_b)
    return num / den


class TestInstantaneousSinr:
    def test_matches_independent_oracle(self):
        p = small_params(n_ue=5, n_bs=2, m_bs=4, m_ris=8, n_ris=2)
        s = sample_scenario(p, 21)
        fading = sample_fading(s, 5)
        rng = np.random.default_rng(3)
        alloc = Allocation(owner=np.array([0, 1]))
        phases = np.stack([align_phases(s, 0, 0, int(s.users_of(0)[0])),
                           align_phases(s, 1, 1, int(s.users_of(1)[0]))])
        beams = channel.evaluation_beamformers(s, alloc, rng)
        for u in range(p.n_ue):
            got = instantaneous_sinr(s, fading, phases, beams, u)
            want = _oracle_sinr(s, fading, phases, beams, u)
            assert got == pytest.approx(want, rel=1e-12)

    def test_noise_dominated_limit(self):
        p = small_params(noise_psd=40.0)  # absurdly loud noise floor
        s = sample_scenario(p, 1)
        fading = sample_fading(s, 1)
        phases = np.zeros((p.n_ris, p.m_ris))
        beams = channel.evaluation_beamformers(s, Allocation.empty(p.n_ris),
                                               np.random.default_rng(0))
        assert instantaneous_sinr(s, fading, phases, beams, 0) < 1e-9

    def test_single_bs_direct_only(self):
        # negligible RIS path: the degenerate form |h_direct^T f|^2 / noise
        p = small_params(n_bs=1, n_ris=1)
        s = build_scenario(p, association=[0] * p.n_ue,
                           gain_ur=1e-30, gain_rb=1e-30, gain_ub=1e-3)
        fading = sample_fading(s, 2)
        phases = np.zeros((p.n_ris, p.m_ris))
        rng = np.random.default_rng(8)
        beams = channel.evaluation_beamformers(s, Allocation.empty(p.n_ris), rng)
        got = instantaneous_sinr(s, fading, phases, beams, 0)
        h_direct = s.gain_ub[0, 0] * fading.g_direct[0, 0]
        want = abs(h_direct @ beams[0]) ** 2 / p.noise_power
        assert got == pytest.approx(want, rel=1e-10)


class TestUserRate:
    def test_examples(self):
        assert user_rate(0.0) == 0.0
        assert user_rate(1.0) == pytest.approx(1.0, rel=1e-12)
        assert user_rate(3.0) == pytest.approx(2.0, rel=1e-12)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            user_rate(-0.1)

    def test_strictly_increasing(self):
        xs = np.linspace(0, 50, 1000)
        rates = user_rate(xs)
        assert np.all(np.diff(rates) > 0)


class TestRealizedUserRates:
    def test_matches_composition_of_public_ops(self):
        # the cached fast path consumes the rng exactly like composing
        # sample_fading + make_beamformer + schedule_phases + instantaneous_sinr
        from risauction.channel import evaluation_beamformers, realized_user_rates, schedule_phases
        p = small_params(n_ue=5)
        s = sample_scenario(p, 31)
        for owner in ([0, 1, -1, 0], [-1, -1, -1, -1], [1, 1, 1, 1]):
            alloc = Allocation(owner=np.array(owner))
            fast = realized_user_rates(s, alloc, np.random.default_rng(77))
            rng = np.random.default_rng(77)
            fading = sample_fading(s, rng)
            beams = evaluation_beamformers(s, alloc, rng)
            slow = np.array([
                user_rate(instantaneous_sinr(s, fading, schedule_phases(s, alloc, u, rng),
                                             beams, u))
                for u in range(p.n_ue)
            ])
            assert np.allclose(fast, slow, rtol=1e-12), owner

    def test_deterministic(self):
        p = small_params()
        s = sample_scenario(p, 32)
        alloc = Allocation(owner=np.array([0, 1, -1, 0]))
        from risauction.channel import realized_user_rates
        a = realized_user_rates(s, alloc, np.random.default_rng(5))
        b = realized_user_rates(s, alloc, np.random.default_rng(5))
        assert np.array_equal(a, b)


class TestSchedulePhases:
    def test_owned_ris_aligned_to_evaluated_user(self):
        p = SMALL_PARAMS
        s = sample_scenario(p, 9)
        alloc = Allocation(owner=np.array([0, 1, -1, -1]))
        u = int(s.users_of(0)[0])
        phases = channel.schedule_phases(s, alloc, u, np.random.default_rng(0))
        assert np.allclose(phases[0], align_phases(s, 0, 0, u))

    def test_deterministic_given_rng(self):
        s = sample_scenario(SMALL_PARAMS, 9)
        alloc = Allocation(owner=np.array([0, 1, -1, -1]))
        a = channel.schedule_phases(s, alloc, 0, np.random.default_rng(5))
        b = channel.schedule_phases(s, alloc, 0, np.random.default_rng(5))
        assert np.array_equal(a, b)
