"""Auction state machine: golden traces, activity rule, safety invariants."""

import math

import numpy as np
import pytest

from risauction.auction import (ALLOCATED, AVAILABLE, UNASSIGNED, AuctionState,
                                legal_mask, new_auction, step)


def table_auction(n_ris=2, n_bs=2):
    return new_auction(n_ris, n_bs, p0=0.05, dp=0.05, budgets=1.0)


class TestNewAuction:
    def test_table_values(self):
        s = table_auction()
        assert s.price == 0.05
        assert s.round == 0
        assert np.all(s.budgets == 1.0)
        assert not s.terminated

    def test_all_active_at_round_zero(self):
        s = table_auction(n_ris=3)
        assert s.active.all()
        assert np.all(s.status == AVAILABLE)

    def test_zero_ris_immediately_terminated(self):
        assert new_auction(0, 2, 0.05, 0.05, 1.0).terminated

    def test_default_round_cap(self):
        s = new_auction(5, 2, 0.05, 0.05, 1.0)
        assert s.round_cap == math.ceil(1.0 / 0.05) + 1

    @pytest.mark.parametrize("p0,dp", [(0.0, 0.05), (0.05, 0.0), (-1.0, 0.05)])
    def test_invalid_prices(self, p0, dp):
        with pytest.raises(ValueError):
            new_auction(2, 2, p0, dp, 1.0)


class TestGoldenTraces:
    def test_disjoint_single_bids_allocate_and_terminate(self):
        s = table_auction()
        s, newly = step(s, [[1, 0], [0, 1]])
        assert newly == [(0, 0, 0.05), (1, 1, 0.05)]
        assert s.terminated
        assert list(s.owner) == [0, 1]
        assert np.allclose(s.budgets, [0.95, 0.95])
        assert np.allclose(s.price_paid, [0.05, 0.05])

    def test_contested_and_unbid(self):
        s = table_auction()
        s, newly = step(s, [[1, 0], [1, 0]])
        assert newly == []
        assert not s.terminated
        assert s.status[0] == AVAILABLE          # contested
        assert s.status[1] == UNASSIGNED          # nobody bid, gone for good
        assert s.price == pytest.approx(0.10)
        assert s.round == 1
        assert list(legal_mask(s, 0)) == [True, False]
        assert list(legal_mask(s, 1)) == [True, False]

    def test_contested_then_resolved(self):
        s = table_auction()
        s, _ = step(s, [[1, 0], [1, 0]])
        s, newly = step(s, [[1, 0], [0, 0]])
        assert newly == [(0, 0, 0.10)]
        assert s.terminated
        assert s.owner[0] == 0
        assert s.budgets[0] == pytest.approx(0.90)
        assert s.budgets[1] == pytest.approx(1.0)


class TestLegalMaskAndMasking:
    def test_round_zero_mask_is_availability(self):
        s = table_auction(n_ris=3)
        assert list(legal_mask(s, 0)) == [True, True, True]

    def test_skipping_forfeits_forever(self):
        # three bidders on one item: BS0 skips while the others keep contesting,
        # so its later re-entry attempt is masked away
        s = new_auction(1, 3, 0.05, 0.05, 1.0)
        s, _ = step(s, [[1], [1], [1]])
        s, _ = step(s, [[0], [1], [1]])
        assert not legal_mask(s, 0)[0]
        assert legal_mask(s, 1)[0] and legal_mask(s, 2)[0]
        s, newly = step(s, [[1], [1], [0]])  # BS0 re-enters illegally, BS2 drops
        assert newly == [(0, 1, s.price)]
        assert s.owner[0] == 1
        assert s.terminated

    def test_allocated_ris_masked_for_everyone(self):
        s = table_auction()
        s, _ = step(s, [[1, 0], [0, 1]])
        # terminated; masks all false
        assert not legal_mask(s, 0).any()
        assert not legal_mask(s, 1).any()

    def test_bids_on_unavailable_are_ignored(self):
        s = table_auction(n_ris=2)
        s, _ = step(s, [[1, 1], [1, 1]])           # both contested
        s, _ = step(s, [[1, 1], [0, 1]])           # RIS0 -> BS0, RIS1 contested
        assert s.owner[0] == 0
        # BS1 bids on the allocated RIS0: masked, no effect
        s, newly = step(s, [[0, 1], [1, 1]])
        assert s.owner[0] == 0
        assert all(r != 0 for r, _, _ in newly)

    def test_step_terminated_raises(self):
        s = table_auction()
        s, _ = step(s, [[1, 0], [0, 1]])
        with pytest.raises(RuntimeError):
            step(s, [[0, 0], [0, 0]])

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            step(table_auction(), [[1, 0, 0], [0, 1, 0]])


class TestInvariantsFuzz:
    def test_safety_and_liveness(self):
        rng = np.random.default_rng(99)
        for _ in range(2000):
            n_ris = int(rng.integers(1, 6))
            n_bs = int(rng.integers(1, 4))
            state = new_auction(n_ris, n_bs, 0.05, 0.05, 1.0)
            steps = 0
            prev_eligible = (state.active & (state.status == AVAILABLE)).sum()
            while not state.terminated:
                bids = rng.integers(0, 2, size=(n_bs, n_ris))
                new_state, newly = step(state, bids)
                steps += 1
                # price arithmetic
                assert new_state.price == pytest.approx(
                    new_state.p0 + new_state.round * new_state.dp, rel=1e-12)
                # ownership never changes once set
                owned_before = state.owner >= 0
                assert np.all(new_state.owner[owned_before] == state.owner[owned_before])
                # budgets only decrease; deductions match allocations
                assert np.all(new_state.budgets <= state.budgets + 1e-15)
                spent = state.budgets.sum() - new_state.budgets.sum()
                assert spent == pytest.approx(sum(p for _, _, p in newly), abs=1e-12)
                # eligibility set is non-increasing
                eligible = (new_state.active & (new_state.status == AVAILABLE)).sum()
                assert eligible <= prev_eligible
                prev_eligible = eligible
                state = new_state
                assert steps <= state.round_cap
            # termination: every RIS left "available"
            assert np.all(state.status != AVAILABLE) or not (state.status == AVAILABLE).any()
            assert np.all((state.status == ALLOCATED) == (state.owner >= 0))
            # total price paid equals budget drawdown
            paid = np.nansum(state.price_paid)
            assert paid == pytest.approx(n_bs * 1.0 - state.budgets.sum(), abs=1e-12)

    def test_replay_determinism(self):
        rng = np.random.default_rng(5)
        bid_seq = [rng.integers(0, 2, size=(2, 4)) for _ in range(30)]

        def run():
            s = new_auction(4, 2, 0.05, 0.05, 1.0)
            i = 0
            while not s.terminated and i < len(bid_seq):
                s, _ = step(s, bid_seq[i])
                i += 1
            return s

        a, b = run(), run()
        assert np.array_equal(a.owner, b.owner)
        assert np.array_equal(a.status, b.status)
        assert np.array_equal(a.budgets, b.budgets)
        assert a.round == b.round

    def test_forced_termination_at_cap(self):
        # two stubborn bidders contest one RIS forever
        s = new_auction(1, 2, 0.05, 0.05, 1.0, round_cap=4)
        steps = 0
        while not s.terminated:
            s, _ = step(s, [[1], [1]])
            steps += 1
        assert steps == 4
        assert s.status[0] == UNASSIGNED
        assert s.owner[0] == -1
