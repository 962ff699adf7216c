"""Bidding strategy layer: marginal values, normalization, fairness weights,
observations, per-round rewards, a heuristic baseline and the learned policy.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import estimator
from .auction import AuctionState, legal_mask
from .scenario import Scenario

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class RewardParams:
    beta: float = 1.0        # overall bidding-cost aggressiveness
    gamma_fair: float = 0.0  # fairness strength; 0 disables the mechanism

    def __post_init__(self):
        if self.gamma_fair < 0:
            raise ValueError("gamma_fair must be >= 0")


@dataclass(frozen=True)
class AgentObservation:
    """Fixed-length agent view: price, own budget, own fairness weight, and the
    normalized per-RIS values with -1 marking RISs this agent cannot bid on."""

    price: float
    budget: float
    fairness_weight: float
    values: np.ndarray  # (n_ris,) in [0, 1] or -1

    def vector(self) -> np.ndarray:
        return np.concatenate(([self.price, self.budget, self.fairness_weight], self.values))

    def __len__(self) -> int:
        return 3 + len(self.values)


def marginal_values(scenario: Scenario, b: int, current_allocation: estimator.Allocation,
                    available_ris: np.ndarray) -> np.ndarray:
    """Raw per-RIS marginal utility of BS b against its current holdings.

    (n_ris,) vector, zero outside the available set. Each candidate is valued
    alone (no same-round bundle effects).
    """
    return estimator.marginal_utilities(scenario, b, current_allocation,
                                        np.asarray(available_ris, dtype=bool))


def normalize_values(raw: np.ndarray) -> np.ndarray:
    """Clip negatives, then divide by the maximum positive gain.

    All-nonpositive input maps to all zeros; otherwise the best RIS gets
    exactly 1 (ties share it). Scale-invariant and idempotent.
    """
    clipped = np.maximum(np.asarray(raw, dtype=float), 0.0)
    top = clipped.max() if clipped.size else 0.0
    if top == 0.0:
        return np.zeros_like(clipped)
    return clipped / top


def fairness_weights(utilities, gamma_fair: float) -> np.ndarray:
    """Centrally computed weights util^gamma / sum(util^gamma) * n_bs.

    Mean weight is exactly 1. gamma 0 gives all ones; larger gamma amplifies
    utility differences (stronger cells pay effectively more). All-zero
    utilities also give all ones (the gamma -> 0 limit).
    """
    u = np.asarray(utilities, dtype=float)
    if np.any(u < 0):
        raise ValueError("utilities must be >= 0")
    if gamma_fair == 0.0 or np.all(u == 0):
        return np.ones(len(u))
    powered = u ** gamma_fair
    w = powered / powered.sum() * len(u)
    return w


def build_observation(auction_state: AuctionState, b: int, normalized_values: np.ndarray,
                      fairness_weight: float) -> AgentObservation:
    """Assemble the fixed-length observation, writing -1 wherever BS b is not
    allowed to bid (allocated/retired RIS, or forfeited eligibility)."""
    values = np.asarray(normalized_values, dtype=float).copy()
    values[~legal_mask(auction_state, b)] = -1.0
    return AgentObservation(
        price=float(auction_state.price),
        budget=float(auction_state.budgets[b]),
        fairness_weight=float(fairness_weight),
        values=values,
    )


def reward(values: np.ndarray, bids: np.ndarray, price: float, budget: float,
           fairness_weight: float, beta: float) -> float:
    """Per-round reward, evaluated on the submitted bids before the outcome.

    value of the bids - beta * weight * (monetary cost + 2 * budget overshoot).
    """
    values = np.asarray(values, dtype=float)
    bids = np.asarray(bids, dtype=float)
    if values.shape != bids.shape:
        raise ValueError("values and bids must have equal length")
    r1 = float(values @ bids)
    cost = price * float(bids.sum())
    r3 = 2.0 * max(cost - budget, 0.0)
    return r1 - beta * fairness_weight * (cost + r3)


def heuristic_policy(observation: AgentObservation, value_scale: float = 1.0) -> np.ndarray:
    """Threshold baseline: bid where the scaled value covers the price, greedily
    by descending value while the round's total cost fits the budget."""
    values = observation.values
    price = observation.price
    wanted = (values >= 0) & (value_scale * values >= price)
    bids = np.zeros(len(values), dtype=np.int8)
    if not wanted.any() or price <= 0:
        return bids
    max_bids = int(observation.budget // price) if observation.budget > 0 else 0
    order = np.argsort(-values, kind="stable")
    for r in order:
        if max_bids == 0:
            break
        if wanted[r]:
            bids[r] = 1
            max_bids -= 1
    return bids


def _orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class BidPolicy:
    """Two tanh MLPs (policy logits and state value) over the observation.

    Actions are independent per-RIS Bernoulli draws from the logit sigmoids.
    All parameters are float64 numpy arrays in `params`.
    """

    def __init__(self, obs_dim: int, n_ris: int, hidden: tuple[int, int] = (64, 64),
                 rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.obs_dim = int(obs_dim)
        self.n_ris = int(n_ris)
        self.hidden = (int(hidden[0]), int(hidden[1]))
        h1, h2 = self.hidden
        root2 = np.sqrt(2.0)
        self.params: dict[str, np.ndarray] = {
            "pw0": _orthogonal(rng, (h1, obs_dim), root2), "pb0": np.zeros(h1),
            "pw1": _orthogonal(rng, (h2, h1), root2), "pb1": np.zeros(h2),
            "pw2": _orthogonal(rng, (n_ris, h2), 0.01), "pb2": np.zeros(n_ris),
            "vw0": _orthogonal(rng, (h1, obs_dim), root2), "vb0": np.zeros(h1),
            "vw1": _orthogonal(rng, (h2, h1), root2), "vb1": np.zeros(h2),
            "vw2": _orthogonal(rng, (1, h2), 1.0), "vb2": np.zeros(1),
        }

    def policy_forward(self, obs: np.ndarray):
        """Batch forward of the policy net; returns (h1, h2, logits)."""
        p = self.params
        h1 = np.tanh(obs @ p["pw0"].T + p["pb0"])
        h2 = np.tanh(h1 @ p["pw1"].T + p["pb1"])
        return h1, h2, h2 @ p["pw2"].T + p["pb2"]

    def value_forward(self, obs: np.ndarray):
        """Batch forward of the value net; returns (h1, h2, values)."""
        p = self.params
        h1 = np.tanh(obs @ p["vw0"].T + p["vb0"])
        h2 = np.tanh(h1 @ p["vw1"].T + p["vb1"])
        return h1, h2, (h2 @ p["vw2"].T + p["vb2"])[..., 0]

    def bid_probabilities(self, obs_vec: np.ndarray) -> np.ndarray:
        _, _, logits = self.policy_forward(obs_vec[None, :])
        return _sigmoid(logits[0])

    def act(self, obs_vec: np.ndarray, rng: np.random.Generator):
        """Sample a bid vector; returns (bits, log_prob, value_estimate)."""
        bits, log_probs, values = self.act_batch(obs_vec[None, :], rng)
        return bits[0], float(log_probs[0]), float(values[0])

    def act_batch(self, obs_batch: np.ndarray, rng: np.random.Generator):
        """Sample one bid vector per observation row; a single forward pass."""
        _, _, logits = self.policy_forward(obs_batch)
        probs = _sigmoid(logits)
        bits = (rng.random(logits.shape) < probs).astype(np.int8)
        log_probs = (bits * logits - np.logaddexp(0.0, logits)).sum(axis=1)
        values = self.value_forward(obs_batch)[2]
        return bits, log_probs, values

    def act_deterministic(self, obs_vec: np.ndarray) -> np.ndarray:
        return (self.bid_probabilities(obs_vec) >= 0.5).astype(np.int8)

    def save(self, path, config_hash: str = "") -> None:
        np.savez(
            path,
            checkpoint_version=np.int64(CHECKPOINT_VERSION),
            obs_dim=np.int64(self.obs_dim),
            n_ris=np.int64(self.n_ris),
            hidden=np.asarray(self.hidden, dtype=np.int64),
            config_hash=np.bytes_(config_hash.encode("utf-8")),
            **self.params,
        )

    @classmethod
    def load(cls, path, expected_obs_dim: int | None = None) -> "BidPolicy":
        with np.load(path) as data:
            version = int(data["checkpoint_version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            obs_dim = int(data["obs_dim"])
            if expected_obs_dim is not None and obs_dim != expected_obs_dim:
                raise ValueError(
                    f"checkpoint observation length {obs_dim} does not match "
                    f"the requested {expected_obs_dim}")
            policy = cls(obs_dim, int(data["n_ris"]), tuple(data["hidden"]))
            for key in policy.params:
                policy.params[key] = data[key].astype(float)
        return policy

    @property
    def config_hash(self) -> str:
        meta = {"obs_dim": self.obs_dim, "n_ris": self.n_ris, "hidden": list(self.hidden)}
        return hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()[:16]


def policy_act(policy: BidPolicy, observation: AgentObservation, deterministic: bool,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Bid vector from the policy; stochastic draws need an rng, deterministic
    mode thresholds the per-RIS probabilities at 0.5."""
    vec = observation.vector()
    if len(vec) != policy.obs_dim:
        raise ValueError(f"observation length {len(vec)} != policy input {policy.obs_dim}")
    if deterministic:
        return policy.act_deterministic(vec)
    if rng is None:
        raise ValueError("stochastic action selection needs an rng")
    bits, _, _ = policy.act(vec, rng)
    return bits
