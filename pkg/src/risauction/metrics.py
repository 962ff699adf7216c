"""Fairness and performance metrics over evaluated user rates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import Allocation
from .scenario import Scenario

DEFAULT_EPSILONS = (0.5, 1.0, 2.0, math.inf)


@dataclass(frozen=True, eq=False)
class EpisodeReport:
    """Realized outcome of one (macroscopic, microscopic) evaluation pair."""

    user_rates: np.ndarray       # (n_ue,) bits/s/Hz
    association: np.ndarray      # (n_ue,) serving BS per user
    per_bs_min_rate: np.ndarray  # (n_bs,), NaN for a BS with no users
    per_bs_sum_rate: np.ndarray  # (n_bs,)
    ris_counts: np.ndarray       # (n_bs + 1,): owned per BS, then unassigned
    total_spend: float
    gamma_fair: float


def atkinson(values, epsilon: float) -> float:
    """Atkinson inequality index in [0, 1]; 0 means perfect equality.

    epsilon weights the worst-off: the equally-distributed equivalent is the
    generalized mean of order 1 - epsilon, the geometric mean at epsilon 1,
    and the minimum at epsilon infinity. Any zero value with epsilon >= 1
    yields index 1 (the limit); negative values are rejected.
    """
    y = np.asarray(values, dtype=float)
    if y.size == 0:
        raise ValueError("values must be nonempty")
    if np.any(y < 0):
        raise ValueError("values must be >= 0")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    mu = y.mean()
    if mu == 0.0:
        return 0.0  # all-zero input is perfectly equal
    if math.isinf(epsilon):
        ede = y.min()
    elif epsilon == 1.0:
        if np.any(y == 0):
            return 1.0
        ede = math.exp(np.log(y).mean())  # mean of logs avoids product underflow
    else:
        if epsilon > 1.0 and np.any(y == 0):
            return 1.0
        ede = (y ** (1.0 - epsilon)).mean() ** (1.0 / (1.0 - epsilon))
    return float(1.0 - ede / mu)


def summarize_episode(scenario: Scenario, allocation: Allocation, rates,
                      spend: float, gamma_fair: float) -> EpisodeReport:
    """Per-BS min/sum rates, RIS ownership counts and the spend of one episode."""
    rates = np.asarray(rates, dtype=float)
    p = scenario.params
    if rates.shape != (p.n_ue,):
        raise ValueError(f"rates must have one entry per user ({p.n_ue})")
    mins = np.full(p.n_bs, np.nan)
    sums = np.zeros(p.n_bs)
    for b in range(p.n_bs):
        users = scenario.users_of(b)
        if len(users):
            mins[b] = rates[users].min()
            sums[b] = rates[users].sum()
    return EpisodeReport(
        user_rates=rates,
        association=scenario.association.copy(),
        per_bs_min_rate=mins,
        per_bs_sum_rate=sums,
        ris_counts=allocation.counts(p.n_bs),
        total_spend=float(spend),
        gamma_fair=float(gamma_fair),
    )


def _mean_ci(values: np.ndarray) -> tuple[float, float]:
    """NaN-aware mean and 95% normal-approximation half-width.

    Values are sorted first so the result is exactly permutation-invariant.
    """
    v = np.sort(values[~np.isnan(values)])
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(1.96 * v.std(ddof=1) / np.sqrt(v.size))


def _eps_label(eps: float) -> str:
    return "inf" if math.isinf(eps) else f"{eps:g}"


def aggregate(reports: list[EpisodeReport],
              epsilons=DEFAULT_EPSILONS) -> list[dict]:
    """Per-gamma means with 95% half-widths for every report field, plus the
    Atkinson index per epsilon pooled over all user rates of that gamma (and
    pooled per BS, so either reading of the index is inspectable).

    Returns CSV-ready rows {gamma, metric, mean, ci95} in canonical order
    (gamma, then metric name); pooled indices carry ci95 = NaN.
    """
    if not reports:
        raise ValueError("reports must be nonempty")
    n_bs = len(reports[0].per_bs_min_rate)
    gammas = sorted({r.gamma_fair for r in reports})
    rows: list[dict] = []
    for g in gammas:
        group = [r for r in reports if r.gamma_fair == g]
        fields: dict[str, np.ndarray] = {}
        for b in range(n_bs):
            fields[f"bs{b}_min_rate"] = np.array([r.per_bs_min_rate[b] for r in group])
            fields[f"bs{b}_sum_rate"] = np.array([r.per_bs_sum_rate[b] for r in group])
            fields[f"bs{b}_ris_count"] = np.array([r.ris_counts[b] for r in group], dtype=float)
        fields["unassigned_ris_count"] = np.array(
            [r.ris_counts[-1] for r in group], dtype=float)
        fields["sum_rate"] = np.array([r.per_bs_sum_rate.sum() for r in group])
        fields["total_spend"] = np.array([r.total_spend for r in group])

        metric_rows: dict[str, tuple[float, float]] = {}
        for name, vals in fields.items():
            metric_rows[name] = _mean_ci(vals)
        pooled = np.sort(np.concatenate([r.user_rates for r in group]))
        for eps in epsilons:
            metric_rows[f"atkinson_pooled_eps_{_eps_label(eps)}"] = (
                atkinson(pooled, eps), float("nan"))
            for b in range(n_bs):
                rates_b = np.sort(np.concatenate(
                    [r.user_rates[r.association == b] for r in group]))
                if rates_b.size:
                    metric_rows[f"atkinson_bs{b}_eps_{_eps_label(eps)}"] = (
                        atkinson(rates_b, eps), float("nan"))
        for name in sorted(metric_rows):
            mean, ci = metric_rows[name]
            rows.append({"gamma": g, "metric": name, "mean": mean, "ci95": ci})
    return rows
