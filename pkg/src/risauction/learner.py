"""Episodic multi-agent training: rollouts over randomized auction episodes and
clipped-surrogate policy-gradient updates with undiscounted returns.

Both agents share one parameter set; asymmetry enters only through the
observations (notably the fairness weight). The return over an episode is the
plain reward sum (finite-horizon auction, every round counts equally), which is
why the discount is pinned to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agents import BidPolicy
from .episode import AuctionEpisode, AuctionParams
from .rng import stream_code


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray  # flattened agent observation
    action: np.ndarray       # binary bid vector
    reward: float
    value_estimate: float
    action_log_prob: float
    episode_done: bool

    def __post_init__(self):
        if not (np.isfinite(self.reward) and np.isfinite(self.action_log_prob)):
            raise ValueError("reward and log_prob must be finite")


@dataclass(frozen=True)
class TrainConfig:
    total_episodes: int = 50_000
    rollout_length: int = 2048      # transitions per update
    minibatch_size: int = 64
    epochs_per_update: int = 10
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    discount: float = 1.0           # pinned: undiscounted episodic return
    max_grad_norm: float = 0.5
    hidden_sizes: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if self.discount != 1.0:
            raise ValueError("discount is fixed to 1.0 (undiscounted episodic return)")
        if not (0 < self.gae_lambda <= 1.0):
            raise ValueError("gae_lambda must be in (0, 1]")
        if self.clip_ratio <= 0:
            raise ValueError("clip_ratio must be > 0")
        for name in ("total_episodes", "rollout_length", "minibatch_size", "epochs_per_update"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class RolloutBuffer:
    transitions: list[Transition] = field(default_factory=list)

    def append(self, t: Transition) -> None:
        self.transitions.append(t)

    def extend(self, ts) -> None:
        self.transitions.extend(ts)

    def __len__(self) -> int:
        return len(self.transitions)

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "obs": np.stack([t.observation for t in self.transitions]),
            "actions": np.stack([t.action for t in self.transitions]).astype(float),
            "rewards": np.array([t.reward for t in self.transitions]),
            "values": np.array([t.value_estimate for t in self.transitions]),
            "log_probs": np.array([t.action_log_prob for t in self.transitions]),
            "dones": np.array([t.episode_done for t in self.transitions]),
        }


def collect_rollout(policy: BidPolicy, env_factory, n_transitions: int,
                    rng: np.random.Generator) -> tuple[RolloutBuffer, list[dict]]:
    """Roll fresh episodes until at least n_transitions are gathered.

    Every agent's transitions enter the shared buffer (parameter sharing); each
    agent's stream of one episode is stored contiguously, ending with the done
    flag, so only complete episodes ever land in the buffer. Also returns
    per-episode stats (per-agent return, total auction spend, rounds).
    """
    buffer = RolloutBuffer()
    stats: list[dict] = []
    while len(buffer) < n_transitions:
        env: AuctionEpisode = env_factory(rng)
        obs = env.reset()
        per_agent: list[list[Transition]] = [[] for _ in range(env.n_bs)]
        done = env.state.terminated
        while not done:
            obs_mat = np.stack([obs[b].vector() for b in range(env.n_bs)])
            actions, log_probs, values = policy.act_batch(obs_mat, rng)
            obs, rewards, done, info = env.step(actions)
            for b in range(env.n_bs):
                per_agent[b].append(Transition(
                    observation=obs_mat[b],
                    action=actions[b],
                    reward=float(rewards[b]),
                    value_estimate=float(values[b]),
                    action_log_prob=float(log_probs[b]),
                    episode_done=done,
                ))
        for b in range(env.n_bs):
            buffer.extend(per_agent[b])
        stats.append({
            "agent_returns": [sum(t.reward for t in per_agent[b]) for b in range(env.n_bs)],
            "total_cost": env.total_spend(),
            "rounds": len(per_agent[0]),
        })
    return buffer, stats


def compute_returns(buffer: RolloutBuffer, gae_lambda: float = 0.95
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Undiscounted suffix-sum returns and (raw) GAE advantages per transition.

    The buffer must contain only complete episodes (each segment terminated by
    an episode_done flag). With lambda 1 the advantage reduces to
    return - value_estimate exactly.
    """
    if len(buffer) == 0:
        return np.zeros(0), np.zeros(0)
    data = buffer.arrays()
    rewards, values, dones = data["rewards"], data["values"], data["dones"]
    if not dones[-1]:
        raise ValueError("buffer ends with a truncated episode (no terminal flag)")
    n = len(rewards)
    returns = np.zeros(n)
    advantages = np.zeros(n)
    running_return = 0.0
    running_adv = 0.0
    next_value = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            running_return = 0.0
            running_adv = 0.0
            next_value = 0.0
        running_return = rewards[t] + running_return
        delta = rewards[t] + next_value - values[t]
        running_adv = delta + gae_lambda * running_adv
        returns[t] = running_return
        advantages[t] = running_adv
        next_value = values[t]
    return returns, advantages


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def ppo_loss(policy: BidPolicy, batch: dict, config: TrainConfig) -> float:
    """Clipped-surrogate + value + entropy objective on one minibatch.

    `batch` holds obs, actions, log_probs (behavior policy), advantages
    (already normalized by the caller) and returns. Pure function of the policy
    parameters; the gradient tests difference it numerically.
    """
    obs, actions = batch["obs"], batch["actions"]
    _, _, logits = policy.policy_forward(obs)
    log_probs = (actions * logits - _softplus(logits)).sum(axis=1)
    ratio = np.exp(log_probs - batch["log_probs"])
    adv = batch["advantages"]
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio) * adv
    policy_loss = -np.minimum(surr1, surr2).mean()
    _, _, values = policy.value_forward(obs)
    value_loss = ((values - batch["returns"]) ** 2).mean()
    probs = _sigmoid(logits)
    entropy = (_softplus(logits) - logits * probs).sum(axis=1).mean()
    return float(policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy)


def ppo_loss_and_grads(policy: BidPolicy, batch: dict, config: TrainConfig
                       ) -> tuple[float, dict[str, np.ndarray], dict]:
    """Loss, analytic parameter gradients, and diagnostics for one minibatch."""
    p = policy.params
    obs, actions = batch["obs"], batch["actions"]
    n = len(obs)

    h1, h2, logits = policy.policy_forward(obs)
    log_probs = (actions * logits - _softplus(logits)).sum(axis=1)
    ratio = np.exp(log_probs - batch["log_probs"])
    adv = batch["advantages"]
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio) * adv
    take_unclipped = surr1 <= surr2
    policy_loss = -np.minimum(surr1, surr2).mean()

    v1, v2, values = policy.value_forward(obs)
    value_loss = ((values - batch["returns"]) ** 2).mean()

    probs = _sigmoid(logits)
    entropy_per = _softplus(logits) - logits * probs
    entropy = entropy_per.sum(axis=1).mean()

    loss = float(policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy)

    # d loss / d logits: surrogate term flows only through the unclipped branch.
    d_ratio = np.where(take_unclipped, adv, 0.0) * (-1.0 / n)
    d_logp = d_ratio * ratio
    d_logits = d_logp[:, None] * (actions - probs)
    # entropy term: dH/dl = -l * sigma(l) * (1 - sigma(l))
    d_logits += (config.entropy_coef / n) * logits * probs * (1.0 - probs)

    grads = {}
    # policy net backward
    d_h2 = d_logits @ p["pw2"]
    grads["pw2"] = d_logits.T @ h2
    grads["pb2"] = d_logits.sum(axis=0)
    d_z2 = d_h2 * (1.0 - h2 ** 2)
    grads["pw1"] = d_z2.T @ h1
    grads["pb1"] = d_z2.sum(axis=0)
    d_h1 = d_z2 @ p["pw1"]
    d_z1 = d_h1 * (1.0 - h1 ** 2)
    grads["pw0"] = d_z1.T @ obs
    grads["pb0"] = d_z1.sum(axis=0)
    # value net backward
    d_val = (config.value_coef * 2.0 / n) * (values - batch["returns"])
    grads["vw2"] = (d_val[:, None] * v2).sum(axis=0)[None, :]
    grads["vb2"] = np.array([d_val.sum()])
    d_v2 = d_val[:, None] * p["vw2"]
    d_zv2 = d_v2 * (1.0 - v2 ** 2)
    grads["vw1"] = d_zv2.T @ v1
    grads["vb1"] = d_zv2.sum(axis=0)
    d_v1 = d_zv2 @ p["vw1"]
    d_zv1 = d_v1 * (1.0 - v1 ** 2)
    grads["vw0"] = d_zv1.T @ obs
    grads["vb0"] = d_zv1.sum(axis=0)

    diag = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip_ratio)),
    }
    return loss, grads, diag


class Adam:
    """Standard Adam on a parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-5):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bias1 = 1.0 - self.b1 ** self.t
        bias2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g ** 2
            self.params[k] -= self.lr * (self.m[k] / bias1) / (np.sqrt(self.v[k] / bias2) + self.eps)


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def update(policy: BidPolicy, buffer: RolloutBuffer, config: TrainConfig,
           rng: np.random.Generator, optimizer: Adam | None = None,
           returns: np.ndarray | None = None, advantages: np.ndarray | None = None) -> dict:
    """Minibatch clipped-surrogate updates over the buffer.

    Advantages are normalized per minibatch. Non-finite gradients abort the
    update (remaining minibatches skipped, reported in the diagnostics).
    """
    if len(buffer) == 0:
        raise ValueError("buffer is empty")
    if optimizer is None:
        optimizer = Adam(policy.params, config.learning_rate)
    data = buffer.arrays()
    if returns is None or advantages is None:
        returns, advantages = compute_returns(buffer, config.gae_lambda)
    n = len(buffer)
    agg = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_fraction": []}
    aborted = False
    for _ in range(config.epochs_per_update):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = perm[start:start + config.minibatch_size]
            adv = advantages[idx]
            if len(adv) > 1:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            batch = {
                "obs": data["obs"][idx],
                "actions": data["actions"][idx],
                "log_probs": data["log_probs"][idx],
                "advantages": adv,
                "returns": returns[idx],
            }
            _, grads, diag = ppo_loss_and_grads(policy, batch, config)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                aborted = True
                break
            _clip_grads(grads, config.max_grad_norm)
            optimizer.step(grads)
            for k in agg:
                agg[k].append(diag[k])
        if aborted:
            break
    out = {k: float(np.mean(v)) if v else float("nan") for k, v in agg.items()}
    out["aborted"] = aborted
    return out


def train(train_config: TrainConfig, env_config, seed: int,
          progress: bool = False) -> tuple[BidPolicy, list[dict]]:
    """Iterate collect / returns / update until total_episodes are consumed.

    `env_config` is a harness ExperimentConfig (or anything with .system,
    .auction and .reward). Single-threaded and bitwise reproducible for a
    fixed seed. Returns the trained policy and the per-iteration curve.
    """
    from .scenario import sample_scenario  # local import keeps module load light

    system = env_config.system
    auction_params: AuctionParams = env_config.auction
    reward_params = env_config.reward
    rng = np.random.default_rng([int(seed), stream_code("train")])
    obs_dim = 3 + system.n_ris
    policy = BidPolicy(obs_dim, system.n_ris, train_config.hidden_sizes, rng)
    optimizer = Adam(policy.params, train_config.learning_rate)

    def env_factory(r: np.random.Generator) -> AuctionEpisode:
        scenario = sample_scenario(system, int(r.integers(2 ** 63)))
        return AuctionEpisode(scenario, auction_params, reward_params, record_trace=False)

    curve: list[dict] = []
    episodes_done = 0
    iteration = 0
    while episodes_done < train_config.total_episodes:
        buffer, stats = collect_rollout(policy, env_factory,
                                        train_config.rollout_length, rng)
        diag = update(policy, buffer, train_config, rng, optimizer)
        episodes_done += len(stats)
        iteration += 1
        curve.append({
            "iteration": iteration,
            "mean_episode_reward": float(np.mean([r for s in stats for r in s["agent_returns"]])),
            "mean_total_cost": float(np.mean([s["total_cost"] for s in stats])),
            "policy_loss": diag["policy_loss"],
            "value_loss": diag["value_loss"],
            "entropy": diag["entropy"],
        })
        if progress:
            print(f"iter {iteration}: episodes {episodes_done}, "
                  f"reward {curve[-1]['mean_episode_reward']:.4f}, "
                  f"cost {curve[-1]['mean_total_cost']:.4f}")
    return policy, curve
