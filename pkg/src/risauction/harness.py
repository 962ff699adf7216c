"""Configuration, experiment orchestration, the evaluation protocol and sweep.

The evaluation protocol runs the auction once per macroscopic seed (the
estimator is fading-blind, so the allocation cannot depend on the microscopic
draw) and then scores the resulting allocation under several independent
fading realizations.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import metrics
from .agents import AgentObservation, BidPolicy, RewardParams, heuristic_policy, policy_act
from .channel import realized_user_rates
from .episode import AuctionEpisode, AuctionParams
from .estimator import Allocation
from .learner import TrainConfig, train
from .metrics import EpisodeReport, summarize_episode
from .rng import stream_rng, stream_seed
from .scenario import Scenario, SystemParams, sample_scenario

OUTPUT_DIR_ENV = "RISAUCTION_OUTPUT_DIR"


@dataclass(frozen=True)
class EvalParams:
    n_macroscopic: int = 200
    n_microscopic: int = 20
    base_seed: int = 0

    def __post_init__(self):
        if self.n_macroscopic < 1 or self.n_microscopic < 1:
            raise ValueError("evaluation counts must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemParams = SystemParams()
    auction: AuctionParams = AuctionParams()
    reward: RewardParams = RewardParams(beta=1.0, gamma_fair=0.2)
    train: TrainConfig = TrainConfig()
    eval: EvalParams = EvalParams()
    gamma_sweep: tuple = (0.0, 0.1, 0.2, 0.3)
    heuristic_value_scale: float = 1.0
    output_dir: str = "out"

    def __post_init__(self):
        if len(self.gamma_sweep) == 0:
            raise ValueError("gamma_sweep must be nonempty")
        if any(g < 0 for g in self.gamma_sweep):
            raise ValueError("gamma_sweep values must be >= 0")


_SECTIONS = {
    "system": SystemParams,
    "auction": AuctionParams,
    "reward": RewardParams,
    "train": TrainConfig,
    "eval": EvalParams,
}
_TUPLE_FIELDS = {("system", "region"), ("train", "hidden_sizes")}


def _build_section(name: str, cls, raw: dict):
    if not isinstance(raw, dict):
        raise ValueError(f"{name}: must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ValueError(f"unknown config key: {name}.{key}")
        if (name, key) in _TUPLE_FIELDS:
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config from a parsed document; unknown keys are
    rejected with their full path."""
    known_top = set(_SECTIONS) | {"gamma_sweep", "heuristic_value_scale", "output_dir"}
    for key in raw:
        if key not in known_top:
            raise ValueError(f"unknown config key: {key}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build_section(name, cls, raw[name])
    if "gamma_sweep" in raw:
        kwargs["gamma_sweep"] = tuple(raw["gamma_sweep"])
    for key in ("heuristic_value_scale", "output_dir"):
        if key in raw:
            kwargs[key] = raw[key]
    return ExperimentConfig(**kwargs)


def config_to_dict(config: ExperimentConfig) -> dict:
    out: dict = {}
    for name, _cls in _SECTIONS.items():
        section = dataclasses.asdict(getattr(config, name))
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = list(value)
        out[name] = section
    out["gamma_sweep"] = list(config.gamma_sweep)
    out["heuristic_value_scale"] = config.heuristic_value_scale
    out["output_dir"] = config.output_dir
    return out


def load_config(path) -> ExperimentConfig:
    """Parse + validate a YAML config; the RISAUCTION_OUTPUT_DIR environment
    variable overrides output_dir."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    config = config_from_dict(raw)
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        config = dataclasses.replace(config, output_dir=env_dir)
    return config


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(config), fh, sort_keys=False)


def default_config() -> ExperimentConfig:
    """The bundled defaults (the published simulation parameter table)."""
    return ExperimentConfig()


def default_config_path() -> Path:
    return Path(__file__).parent / "data" / "default.yaml"


class PolicyAgent:
    """Bids with a learned policy; deterministic mode thresholds at 0.5."""

    def __init__(self, policy: BidPolicy):
        self.policy = policy

    def bid(self, observation: AgentObservation, deterministic: bool,
            rng: np.random.Generator | None) -> np.ndarray:
        return policy_act(self.policy, observation, deterministic, rng)


class HeuristicAgent:
    """Bids with the threshold baseline; ignores the deterministic flag."""

    def __init__(self, value_scale: float = 1.0):
        self.value_scale = value_scale

    def bid(self, observation: AgentObservation, deterministic: bool,
            rng: np.random.Generator | None) -> np.ndarray:
        return heuristic_policy(observation, self.value_scale)


def _as_agent(policy_or_heuristic, config: ExperimentConfig):
    if isinstance(policy_or_heuristic, BidPolicy):
        return PolicyAgent(policy_or_heuristic)
    if policy_or_heuristic == "heuristic":
        return HeuristicAgent(config.heuristic_value_scale)
    return policy_or_heuristic


def run_episode_on(scenario: Scenario, auction_params: AuctionParams,
                   reward_params: RewardParams, agent, deterministic: bool = True,
                   rng: np.random.Generator | None = None
                   ) -> tuple[Allocation, list[dict], float]:
    """Drive one auction on an existing scenario; returns (allocation, trace, spend)."""
    env = AuctionEpisode(scenario, auction_params, reward_params)
    obs = env.reset()
    done = env.state.terminated
    while not done:
        bids = [agent.bid(obs[b], deterministic, rng) for b in range(env.n_bs)]
        obs, _rewards, done, _info = env.step(bids)
    return env.allocation(), env.trace, env.total_spend()


def run_episode(config: ExperimentConfig, policy_or_heuristic, macro_seed: int,
                deterministic: bool = True, rng: np.random.Generator | None = None
                ) -> tuple[Allocation, list[dict], float]:
    """Sample the macro seed's scenario and run the full auction loop on it."""
    scenario = sample_scenario(
        config.system, stream_seed(config.eval.base_seed, "macro", macro_seed))
    agent = _as_agent(policy_or_heuristic, config)
    return run_episode_on(scenario, config.auction, config.reward, agent,
                          deterministic, rng)


def evaluate(config: ExperimentConfig, policy, gamma_fair: float) -> list[EpisodeReport]:
    """Evaluation protocol: one auction per macroscopic seed, then instantaneous
    rates under n_microscopic independent fading draws; one report per pair."""
    reward_params = RewardParams(beta=config.reward.beta, gamma_fair=gamma_fair)
    agent = _as_agent(policy, config)
    base = config.eval.base_seed
    reports: list[EpisodeReport] = []
    for m in range(config.eval.n_macroscopic):
        scenario = sample_scenario(config.system, stream_seed(base, "macro", m))
        allocation, _trace, spend = run_episode_on(
            scenario, config.auction, reward_params, agent, deterministic=True)
        for k in range(config.eval.n_microscopic):
            rng = stream_rng(base, "micro", m, k)
            rates = realized_user_rates(scenario, allocation, rng)
            reports.append(summarize_episode(scenario, allocation, rates, spend, gamma_fair))
    return reports


def checkpoint_path(directory, gamma: float) -> Path:
    return Path(directory) / f"ckpt_gamma_{gamma:g}.npz"


def train_and_save(config: ExperimentConfig, gamma: float, seed: int, out_path) -> Path:
    """Train one model at the given fairness strength and write the checkpoint
    plus its training-curve CSV next to it."""
    env_config = dataclasses.replace(
        config, reward=RewardParams(beta=config.reward.beta, gamma_fair=gamma))
    policy, curve = train(config.train, env_config, seed)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    policy.save(out_path, config_hash=_config_hash(config))
    curve_path = out_path.with_suffix(".curve.csv")
    _write_csv(curve_path,
               ["iteration", "mean_episode_reward", "mean_total_cost",
                "policy_loss", "value_loss", "entropy"],
               [[row[k] for k in ("iteration", "mean_episode_reward", "mean_total_cost",
                                  "policy_loss", "value_loss", "entropy")] for row in curve])
    return out_path


def _config_hash(config: ExperimentConfig) -> str:
    import hashlib
    doc = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_trace(path, trace: list[dict]) -> None:
    """Auction trace as line-delimited JSON records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in trace:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def sweep(config: ExperimentConfig, ckpt_dir=None, train_missing: bool = False) -> dict:
    """Evaluate one trained checkpoint per sweep gamma and emit the aggregated
    CSVs (long-format metrics plus the three figure datasets) and SVG figures.

    Checkpoints are looked up as ckpt_gamma_<g>.npz under ckpt_dir (default:
    output_dir); a missing one raises unless train_missing is set, in which
    case it is trained with the config's training settings and base seed.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = Path(ckpt_dir) if ckpt_dir is not None else out_dir
    obs_dim = 3 + config.system.n_ris

    all_reports: list[EpisodeReport] = []
    for gamma in config.gamma_sweep:
        path = checkpoint_path(ckpt_dir, gamma)
        if not path.exists():
            if not train_missing:
                raise FileNotFoundError(f"missing checkpoint for gamma={gamma:g}: {path}")
            train_and_save(config, gamma, config.eval.base_seed, path)
        policy = BidPolicy.load(path, expected_obs_dim=obs_dim)
        all_reports.extend(evaluate(config, policy, gamma))

    rows = metrics.aggregate(all_reports)
    paths = {"metrics": out_dir / "metrics.csv"}
    _write_csv(paths["metrics"], ["gamma", "metric", "mean", "ci95"],
               [[r["gamma"], r["metric"], r["mean"], r["ci95"]] for r in rows])

    by_gamma: dict[float, dict[str, tuple[float, float]]] = {}
    for r in rows:
        by_gamma.setdefault(r["gamma"], {})[r["metric"]] = (r["mean"], r["ci95"])
    gammas = sorted(by_gamma)
    n_bs = config.system.n_bs

    frontier_rows = [[g,
                      by_gamma[g]["bs0_min_rate"][0], by_gamma[g]["bs0_min_rate"][1],
                      by_gamma[g]["sum_rate"][0], by_gamma[g]["sum_rate"][1]]
                     for g in gammas]
    paths["fig3"] = out_dir / "fig3_frontier.csv"
    _write_csv(paths["fig3"],
               ["gamma", "bs0_min_rate_mean", "bs0_min_rate_ci95",
                "sum_rate_mean", "sum_rate_ci95"], frontier_rows)

    eps_labels = [metrics._eps_label(e) for e in metrics.DEFAULT_EPSILONS]
    atk_rows = [[g] + [by_gamma[g][f"atkinson_pooled_eps_{lbl}"][0] for lbl in eps_labels]
                for g in gammas]
    paths["fig4"] = out_dir / "fig4_atkinson.csv"
    _write_csv(paths["fig4"],
               ["gamma"] + [f"atkinson_eps_{lbl}" for lbl in eps_labels], atk_rows)

    ris_header = ["gamma"]
    for b in range(n_bs):
        ris_header += [f"bs{b}_ris_mean", f"bs{b}_ris_ci95"]
    ris_header += ["unassigned_ris_mean", "unassigned_ris_ci95"]
    ris_rows = []
    for g in gammas:
        row = [g]
        for b in range(n_bs):
            row += list(by_gamma[g][f"bs{b}_ris_count"])
        row += list(by_gamma[g]["unassigned_ris_count"])
        ris_rows.append(row)
    paths["fig5"] = out_dir / "fig5_ris_distribution.csv"
    _write_csv(paths["fig5"], ris_header, ris_rows)

    _render_figures(out_dir, gammas, by_gamma, eps_labels, n_bs, paths)
    return paths


def _render_figures(out_dir: Path, gammas, by_gamma, eps_labels, n_bs, paths) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    xs = [by_gamma[g]["bs0_min_rate"][0] for g in gammas]
    ys = [by_gamma[g]["sum_rate"][0] for g in gammas]
    ax.plot(xs, ys, "o-")
    for g, x, y in zip(gammas, xs, ys):
        ax.annotate(f"γ={g:g}", (x, y), textcoords="offset points", xytext=(4, 4))
    ax.set_xlabel("BS0 min user rate [bit/s/Hz]")
    ax.set_ylabel("sum rate [bit/s/Hz]")
    fig.tight_layout()
    paths["fig3_svg"] = out_dir / "fig3_frontier.svg"
    fig.savefig(paths["fig3_svg"])
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    for lbl in eps_labels:
        ax.plot(gammas, [by_gamma[g][f"atkinson_pooled_eps_{lbl}"][0] for g in gammas],
                "o-", label=f"ε={lbl}")
    ax.set_xlabel("fairness strength γ")
    ax.set_ylabel("Atkinson index")
    ax.legend()
    fig.tight_layout()
    paths["fig4_svg"] = out_dir / "fig4_atkinson.svg"
    fig.savefig(paths["fig4_svg"])
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    for b in range(n_bs):
        ax.errorbar(gammas, [by_gamma[g][f"bs{b}_ris_count"][0] for g in gammas],
                    yerr=[by_gamma[g][f"bs{b}_ris_count"][1] for g in gammas],
                    fmt="o-", label=f"BS{b}")
    ax.errorbar(gammas, [by_gamma[g]["unassigned_ris_count"][0] for g in gammas],
                yerr=[by_gamma[g]["unassigned_ris_count"][1] for g in gammas],
                fmt="o-", label="unassigned")
    ax.set_xlabel("fairness strength γ")
    ax.set_ylabel("mean RIS count")
    ax.legend()
    fig.tight_layout()
    paths["fig5_svg"] = out_dir / "fig5_ris_distribution.svg"
    fig.savefig(paths["fig5_svg"])
    plt.close(fig)
