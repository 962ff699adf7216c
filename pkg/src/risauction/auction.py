"""Simultaneous ascending auction: uniform rising price, binary bids,
single-bid allocation, per-(bidder, item) activity rule, guaranteed termination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .estimator import Allocation

AVAILABLE, ALLOCATED, UNASSIGNED = 0, 1, 2


@dataclass(frozen=True, eq=False)
class AuctionState:
    """Immutable snapshot of one auction; step() returns the successor state."""

    round: int
    price: float
    p0: float
    dp: float
    round_cap: int
    status: np.ndarray      # (n_ris,) int8, AVAILABLE / ALLOCATED / UNASSIGNED
    owner: np.ndarray       # (n_ris,) int, -1 until allocated
    price_paid: np.ndarray  # (n_ris,) float, NaN until allocated
    budgets: np.ndarray     # (n_bs,) currency, may go negative (soft constraint)
    active: np.ndarray      # (n_bs, n_ris) bool, eligibility under the activity rule
    terminated: bool

    @property
    def n_ris(self) -> int:
        return len(self.status)

    @property
    def n_bs(self) -> int:
        return len(self.budgets)

    def allocation(self) -> Allocation:
        return Allocation(owner=self.owner.copy())


def new_auction(n_ris: int, n_bs: int, p0: float, dp: float, budgets,
                round_cap: int | None = None) -> AuctionState:
    """Fresh auction at the initial price with everything available and every
    (BS, RIS) pair eligible. `budgets` may be a scalar or one value per BS."""
    if p0 <= 0 or dp <= 0:
        raise ValueError("p0 and dp must be > 0")
    if n_ris < 0 or n_bs < 1:
        raise ValueError("need n_ris >= 0 and n_bs >= 1")
    budgets = np.broadcast_to(np.asarray(budgets, dtype=float), (n_bs,)).copy()
    if round_cap is None:
        # Enough rounds to exhaust the largest budget, plus one.
        round_cap = math.ceil(float(budgets.max()) / dp) + 1
    return AuctionState(
        round=0,
        price=p0,
        p0=p0,
        dp=dp,
        round_cap=int(round_cap),
        status=np.full(n_ris, AVAILABLE, dtype=np.int8),
        owner=np.full(n_ris, -1, dtype=np.int64),
        price_paid=np.full(n_ris, np.nan),
        budgets=budgets,
        active=np.ones((n_bs, n_ris), dtype=bool),
        terminated=n_ris == 0,
    )


def legal_mask(state: AuctionState, b: int) -> np.ndarray:
    """RISs that BS b may still bid on: available and not forfeited."""
    return (state.status == AVAILABLE) & state.active[b]


def step(state: AuctionState, bids) -> tuple[AuctionState, list[tuple[int, int, float]]]:
    """Execute one round with one binary bid vector per BS.

    Bids on non-available RISs or from ineligible pairs are silently masked
    (learned agents emit unconstrained vectors). Per available RIS: one masked
    bid allocates at the current price, none retires it for good, several keep
    it contested. Eligibility next round requires having (effectively) bid this
    round. Terminates when nothing stays contested, or at the round cap.
    """
    if state.terminated:
        raise RuntimeError("cannot step a terminated auction")
    bids = np.asarray(bids)
    if bids.shape != (state.n_bs, state.n_ris):
        raise ValueError(f"bids must have shape {(state.n_bs, state.n_ris)}, got {bids.shape}")
    masked = bids.astype(bool) & (state.status == AVAILABLE) & state.active

    counts = masked.sum(axis=0)
    available = state.status == AVAILABLE
    won = available & (counts == 1)
    dead = available & (counts == 0)
    contested = available & (counts >= 2)

    status = state.status.copy()
    owner = state.owner.copy()
    price_paid = state.price_paid.copy()
    budgets = state.budgets.copy()
    newly_allocated: list[tuple[int, int, float]] = []
    for r in np.flatnonzero(won):
        b = int(np.flatnonzero(masked[:, r])[0])
        status[r] = ALLOCATED
        owner[r] = b
        price_paid[r] = state.price
        budgets[b] -= state.price
        newly_allocated.append((int(r), b, state.price))
    status[dead] = UNASSIGNED

    next_round = state.round + 1
    terminated = not contested.any()
    if not terminated and next_round >= state.round_cap:
        status[contested] = UNASSIGNED  # forced termination keeps learned policies finite
        terminated = True

    next_state = replace(
        state,
        round=state.round if terminated else next_round,
        price=state.price if terminated else state.p0 + next_round * state.dp,
        status=status,
        owner=owner,
        price_paid=price_paid,
        budgets=budgets,
        active=masked & contested[None, :],
        terminated=terminated,
    )
    return next_state, newly_allocated
