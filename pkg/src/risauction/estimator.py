"""Macroscopic SINR / rate estimation and the utility that drives bidding.

All quantities here use only large-scale state (path gains, K factors, array
sizes), i.e. what a BS knows before any instantaneous CSI exists. Signal power
splits into a direct part, a coherent RIS part (phase-aligned directional
cascades, scales with m_ris^2) and an incoherent RIS part (scattered cascades,
scales with m_ris).
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .scenario import Scenario


@dataclass(frozen=True)
class PowerBreakdown:
    """Estimated receive-power components of one user, all in W."""

    p_direct: float
    p_coherent: float
    p_incoherent: float
    i_direct: float
    i_indirect: float
    noise: float

    def __post_init__(self):
        for name in ("p_direct", "p_coherent", "p_incoherent",
                     "i_direct", "i_indirect", "noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name}: must be >= 0")

    @property
    def sinr(self) -> float:
        return (self.p_direct + self.p_coherent + self.p_incoherent) / (
            self.noise + self.i_direct + self.i_indirect)


@dataclass(frozen=True, eq=False)
class Allocation:
    """Per-RIS owner index; -1 marks an unassigned RIS."""

    owner: np.ndarray  # (n_ris,) int

    @classmethod
    def empty(cls, n_ris: int) -> "Allocation":
        return cls(owner=np.full(n_ris, -1, dtype=np.int64))

    def owned_by(self, b: int) -> np.ndarray:
        return np.flatnonzero(self.owner == b)

    def counts(self, n_bs: int) -> np.ndarray:
        """Owned count per BS plus the unassigned count, summing to n_ris."""
        per_bs = np.array([(self.owner == b).sum() for b in range(n_bs)])
        return np.append(per_bs, (self.owner < 0).sum())


_tensor_cache: "weakref.WeakKeyDictionary[Scenario, dict]" = weakref.WeakKeyDictionary()


def _tensors(scenario: Scenario) -> dict:
    """Per-scenario link tensors shared by every estimate (pure, cached)."""
    t = _tensor_cache.get(scenario)
    if t is None:
        p = scenario.params
        g_ub2 = scenario.gain_ub ** 2                             # (n_ue, n_bs)
        g_ur2 = scenario.gain_ur ** 2                             # (n_ue, n_ris)
        g_rb2 = scenario.gain_rb ** 2                             # (n_ris, n_bs)
        k2 = scenario.k_ur / (1.0 + scenario.k_ur)                # K/(1+K)
        kbar2 = 1.0 / (1.0 + scenario.k_ur)
        base = g_ur2[:, :, None] * g_rb2[None, :, :]              # (n_ue, n_ris, n_bs)
        c2 = base * k2[:, :, None] * (p.m_ris ** 2 * p.m_bs)      # squared coherent gain
        d2 = base * kbar2[:, :, None]                             # incoherent kernel
        # Direct interference seen by user u when served by d: sum over b != d.
        i_direct = g_ub2.sum(axis=1, keepdims=True) - g_ub2       # (n_ue, n_bs), * P later
        # RIS-reflected interference kernel: for serving BS d, RIS r contributes
        # gain_ur^2 * sum_{b != d} gain_rb^2 * P * m_ris while r is not owned by d.
        rb2_others = g_rb2.sum(axis=1, keepdims=True) - g_rb2     # (n_ris, n_bs)
        i_ris = g_ur2[:, :, None] * rb2_others[None, :, :] * (p.tx_power * p.m_ris)
        t = {"g_ub2": g_ub2, "c2": c2, "d2": d2,
             "i_direct": i_direct * p.tx_power, "i_ris": i_ris}
        # Serving-user slices per BS: the auction loop's hot path.
        per_bs = []
        for b in range(p.n_bs):
            users = scenario.users_of(b)
            i_ris_b = np.ascontiguousarray(t["i_ris"][users, :, b])
            per_bs.append({
                "users": users,
                "c2": np.ascontiguousarray(c2[users, :, b]),      # (n_users, n_ris)
                "d2": np.ascontiguousarray(d2[users, :, b]),
                "p_direct": g_ub2[users, b] * p.tx_power,
                "i_direct": t["i_direct"][users, b],
                "i_ris": i_ris_b,
                "i_ris_total": i_ris_b.sum(axis=1),
            })
        t["per_bs"] = per_bs
        _tensor_cache[scenario] = t
    return t


def coherent_gains(scenario: Scenario, u: int, d: int, allocation: Allocation) -> np.ndarray:
    """Coherent cascade gains of user u over the RISs owned by BS d.

    One entry per owned RIS (ascending index order):
    gain_ur * gain_rd * sqrt(K/(1+K)) * m_ris * sqrt(m_bs).
    """
    owned = allocation.owned_by(d)
    return np.sqrt(_tensors(scenario)["c2"][u, owned, d])


def optimal_power_split(c: np.ndarray, total_power: float) -> np.ndarray:
    """Power per RIS maximizing the coherent sum under a total-power constraint.

    Proportional to the squared coherent gains; an all-zero (or empty) gain
    vector degenerates to an equal split. Sums exactly to total_power.
    """
    if total_power <= 0:
        raise ValueError("total_power must be > 0")
    c = np.asarray(c, dtype=float)
    if c.size == 0:
        return np.zeros(0)
    c2 = c ** 2
    s = c2.sum()
    split = np.full(c.size, total_power / c.size) if s == 0 else c2 / s * total_power
    # Absorb the rounding residue into the largest entry; the sum then matches
    # total_power to the last ulp (bitwise where float addition permits).
    split[np.argmax(split)] += total_power - split.sum()
    return split


def signal_powers(scenario: Scenario, u: int, d: int,
                  allocation: Allocation) -> tuple[float, float, float]:
    """(direct, coherent, incoherent) receive powers of user u served by BS d,
    under the optimal power split across d's RISs."""
    t = _tensors(scenario)
    p = scenario.params
    p_direct = t["g_ub2"][u, d] * p.tx_power
    owned = allocation.owned_by(d)
    if len(owned) == 0:
        return float(p_direct), 0.0, 0.0
    c2 = t["c2"][u, owned, d]
    d2 = t["d2"][u, owned, d]
    s = c2.sum()
    if s == 0:
        p_coherent = 0.0
        p_incoherent = p.m_bs * p.m_ris * (p.tx_power / len(owned)) * d2.sum()
    else:
        p_coherent = s * p.tx_power
        p_incoherent = p.m_bs * p.m_ris * p.tx_power * float((d2 * c2).sum()) / s
    return float(p_direct), float(p_coherent), float(p_incoherent)


def interference_powers(scenario: Scenario, u: int, d: int,
                        allocation: Allocation) -> tuple[float, float]:
    """(direct, RIS-reflected) inter-cell interference powers of user u.

    The reflected term sums, for every interfering BS, over every RIS not owned
    by the serving BS (including unassigned ones); with more than two BSs each
    unowned RIS therefore appears once per interferer.
    """
    t = _tensors(scenario)
    i_direct = t["i_direct"][u, d]
    not_owned = allocation.owner != d
    i_ris = t["i_ris"][u, not_owned, d].sum()
    return float(i_direct), float(i_ris)


def power_breakdown(scenario: Scenario, u: int, d: int, allocation: Allocation) -> PowerBreakdown:
    p_d, p_c, p_i = signal_powers(scenario, u, d, allocation)
    i_d, i_i = interference_powers(scenario, u, d, allocation)
    return PowerBreakdown(p_direct=p_d, p_coherent=p_c, p_incoherent=p_i,
                          i_direct=i_d, i_indirect=i_i, noise=scenario.params.noise_power)


def estimated_rate(scenario: Scenario, u: int, d: int, allocation: Allocation) -> float:
    """Estimated achievable rate log2(1 + estimated SINR) in bits/s/Hz."""
    return float(np.log2(1.0 + power_breakdown(scenario, u, d, allocation).sinr))


def _signal_parts(p, c2_sel, d2_sel):
    """(coherent, incoherent) power rows for already-sliced owned columns."""
    s = c2_sel.sum(axis=1)
    p_coh = s * p.tx_power
    scale = p.m_bs * p.m_ris * p.tx_power
    safe = np.where(s > 0, s, 1.0)
    p_inc = np.where(s > 0,
                     scale * (d2_sel * c2_sel).sum(axis=1) / safe,
                     scale / c2_sel.shape[1] * d2_sel.sum(axis=1))
    return p_coh, p_inc


def _bs_rates(scenario: Scenario, b: int, owner: np.ndarray) -> np.ndarray:
    """Estimated rates of BS b's own users under the given ownership vector."""
    p = scenario.params
    pb = _tensors(scenario)["per_bs"][b]
    mask = owner == b
    if mask.any():
        p_coh, p_inc = _signal_parts(p, pb["c2"][:, mask], pb["d2"][:, mask])
    else:
        p_coh = p_inc = 0.0
    i_ris = pb["i_ris_total"] - (pb["i_ris"][:, mask].sum(axis=1) if mask.any() else 0.0)
    sinr = (pb["p_direct"] + p_coh + p_inc) / (p.noise_power + pb["i_direct"] + i_ris)
    return np.log2(1.0 + sinr)


def utility(scenario: Scenario, b: int, allocation: Allocation) -> float:
    """Mean estimated rate over the users of BS b; 0 for a BS with no users."""
    if len(_tensors(scenario)["per_bs"][b]["users"]) == 0:
        return 0.0
    return float(_bs_rates(scenario, b, allocation.owner).mean())


def marginal_utilities(scenario: Scenario, b: int, allocation: Allocation,
                       available: np.ndarray) -> np.ndarray:
    """Utility gain of BS b from adding each available RIS to its current set.

    Returns a full-length (n_ris,) vector, zero at unavailable positions.
    Single-RIS marginals: each candidate is valued against the current set
    alone. Vectorized across candidates; equivalent to two utility evaluations
    per candidate.
    """
    return utility_and_marginals(scenario, b, allocation, available)[1]


def utility_and_marginals(scenario: Scenario, b: int, allocation: Allocation,
                          available: np.ndarray) -> tuple[float, np.ndarray]:
    """Current utility and the marginal-utility vector in one pass (the
    per-round auction loop needs both)."""
    p = scenario.params
    values = np.zeros(p.n_ris)
    pb = _tensors(scenario)["per_bs"][b]
    cand = np.flatnonzero(available)
    if len(pb["users"]) == 0:
        return 0.0, values
    if len(cand) == 0:
        return float(_bs_rates(scenario, b, allocation.owner).mean()), values
    owner = allocation.owner
    mask = owner == b
    n_owned = int(mask.sum())
    if n_owned:
        c2_sel = pb["c2"][:, mask]
        s_base = c2_sel.sum(axis=1)
        dc_base = (pb["d2"][:, mask] * c2_sel).sum(axis=1)
        d2sum_base = pb["d2"][:, mask].sum(axis=1)
        i_ris_base = pb["i_ris_total"] - pb["i_ris"][:, mask].sum(axis=1)
    else:
        s_base = dc_base = d2sum_base = np.zeros(len(pb["users"]))
        i_ris_base = pb["i_ris_total"]
    scale0 = p.m_bs * p.m_ris * p.tx_power
    if n_owned:
        safe0 = np.where(s_base > 0, s_base, 1.0)
        p_inc0 = np.where(s_base > 0, scale0 * dc_base / safe0,
                          scale0 / n_owned * d2sum_base)
    else:
        p_inc0 = 0.0
    sinr0 = (pb["p_direct"] + s_base * p.tx_power + p_inc0) / (
        p.noise_power + pb["i_direct"] + i_ris_base)
    base_util = np.log2(1.0 + sinr0).mean()

    c2_c = pb["c2"][:, cand]                            # (n_users, n_cand)
    d2_c = pb["d2"][:, cand]
    s_new = s_base[:, None] + c2_c
    dc_new = dc_base[:, None] + d2_c * c2_c
    scale = p.m_bs * p.m_ris * p.tx_power
    safe = np.where(s_new > 0, s_new, 1.0)
    p_coh = s_new * p.tx_power
    p_inc = np.where(s_new > 0, scale * dc_new / safe,
                     scale / (n_owned + 1) * (d2sum_base[:, None] + d2_c))
    # Owning the candidate removes its reflected-interference contribution.
    i_ris_new = i_ris_base[:, None] - pb["i_ris"][:, cand]
    sinr = (pb["p_direct"][:, None] + p_coh + p_inc) / (
        p.noise_power + pb["i_direct"][:, None] + i_ris_new)
    values[cand] = np.log2(1.0 + sinr).mean(axis=0) - base_util
    return float(base_util), values
