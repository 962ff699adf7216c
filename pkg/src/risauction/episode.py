"""One auction episode as a two-agent environment over a fixed scenario.

Round flow: current utilities -> fairness weights -> marginal values ->
normalized observations -> bids -> per-round rewards (before the outcome) ->
auction step. The episode ends when the auction terminates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import agents, auction, estimator
from .scenario import Scenario


@dataclass(frozen=True)
class AuctionParams:
    p0: float = 0.05
    dp: float = 0.05
    budget: float = 1.0
    round_cap: int | None = None

    def __post_init__(self):
        if self.p0 <= 0 or self.dp <= 0:
            raise ValueError("p0 and dp must be > 0")
        if self.round_cap is not None and self.round_cap < 1:
            raise ValueError("round_cap must be >= 1")


class AuctionEpisode:
    """Steps one auction to termination, producing per-agent observations and
    per-round rewards. Records a replayable trace unless record_trace is off
    (training skips it)."""

    def __init__(self, scenario: Scenario, auction_params: AuctionParams,
                 reward_params: agents.RewardParams, record_trace: bool = True):
        self.scenario = scenario
        self.auction_params = auction_params
        self.reward_params = reward_params
        self.record_trace = record_trace
        self.state: auction.AuctionState | None = None
        self._last_obs: list[agents.AgentObservation] | None = None
        self.trace: list[dict] = []

    @property
    def n_bs(self) -> int:
        return self.scenario.params.n_bs

    def reset(self) -> list[agents.AgentObservation]:
        p = self.scenario.params
        self.state = auction.new_auction(
            p.n_ris, p.n_bs, self.auction_params.p0, self.auction_params.dp,
            self.auction_params.budget, self.auction_params.round_cap)
        self.trace = []
        self._last_obs = self._observations()
        return self._last_obs

    def _observations(self) -> list[agents.AgentObservation]:
        alloc = self.state.allocation()
        available = self.state.status == auction.AVAILABLE
        utilities, raw_values = [], []
        for b in range(self.n_bs):
            util, raw = estimator.utility_and_marginals(self.scenario, b, alloc, available)
            utilities.append(util)
            raw_values.append(raw)
        weights = agents.fairness_weights(utilities, self.reward_params.gamma_fair)
        return [
            agents.build_observation(self.state, b, agents.normalize_values(raw_values[b]),
                                     weights[b])
            for b in range(self.n_bs)
        ]

    def step(self, bids_per_bs) -> tuple[list[agents.AgentObservation] | None,
                                         np.ndarray, bool, dict]:
        if self.state is None:
            raise RuntimeError("call reset() first")
        bids = np.asarray(bids_per_bs)
        rewards = np.array([
            agents.reward(self._last_obs[b].values, bids[b], self.state.price,
                          self.state.budgets[b], self._last_obs[b].fairness_weight,
                          self.reward_params.beta)
            for b in range(self.n_bs)
        ])
        if self.record_trace:
            self.trace.append({
                "round": int(self.state.round),
                "price": float(self.state.price),
                "bids": bids.astype(int).tolist(),
                "budgets": self.state.budgets.tolist(),
            })
        self.state, newly = auction.step(self.state, bids)
        if self.record_trace:
            self.trace[-1]["allocated"] = [[r, b, price] for r, b, price in newly]
        done = self.state.terminated
        info = {"newly_allocated": newly, "total_spend": self.total_spend()}
        self._last_obs = None if done else self._observations()
        return self._last_obs, rewards, done, info

    def allocation(self) -> estimator.Allocation:
        return self.state.allocation()

    def total_spend(self) -> float:
        paid = self.state.price_paid
        return float(np.nansum(paid)) if len(paid) else 0.0
