"""Fairness-aware auction allocation of reconfigurable intelligent surfaces
among competing base stations, with learned and heuristic bidding agents."""

from .agents import (AgentObservation, BidPolicy, RewardParams, build_observation,
                     fairness_weights, heuristic_policy, marginal_values,
                     normalize_values, policy_act, reward)
from .auction import AuctionState, legal_mask, new_auction, step
from .channel import (Beamformer, FadingRealization, array_response, bs_ris_channel,
                      instantaneous_sinr, make_beamformer, random_phases,
                      realized_user_rates, ris_user_channel, sample_fading, user_rate)
from .episode import AuctionEpisode, AuctionParams
from .estimator import (Allocation, PowerBreakdown, coherent_gains, estimated_rate,
                        interference_powers, optimal_power_split, signal_powers, utility)
from .harness import (EvalParams, ExperimentConfig, default_config, evaluate,
                      load_config, run_episode, save_config, sweep)
from .learner import (RolloutBuffer, TrainConfig, Transition, collect_rollout,
                      compute_returns, train, update)
from .metrics import EpisodeReport, aggregate, atkinson, summarize_episode
from .scenario import Scenario, SystemParams, los_probability, path_gain, sample_scenario

__version__ = "0.1.0"
