"""Microscopic fading, RIS phase configurations, beamformers, instantaneous SINR.

Everything here is conditioned on one Scenario (large-scale state). The
BS-to-RIS link is purely directional (rank 1), the direct BS-to-user link is
Rayleigh, and the RIS-to-user link is Rician.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from . import estimator
from .scenario import Scenario


@dataclass(frozen=True, eq=False)
class FadingRealization:
    """One microscopic draw: all scattered components, i.i.d. CN(0, 1) entries."""

    g_direct: np.ndarray    # (n_ue, n_bs, m_bs) complex
    g_ris_user: np.ndarray  # (n_ue, n_ris, m_ris) complex


@dataclass(frozen=True, eq=False)
class Beamformer:
    """Transmit vector of one user's serving BS, with its per-RIS power split."""

    vector: np.ndarray       # (m_bs,) complex
    power_split: np.ndarray  # (len R(d),) W, ordered like the owned-RIS indices


def array_response(angle: float, n_elements: int) -> np.ndarray:
    """Uniform linear array response at half-wavelength spacing.

    Element i equals exp(j * pi * i * sin(angle)); unit modulus by construction.
    """
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    return np.exp(1j * np.pi * np.arange(n_elements) * np.sin(angle))


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_fading(scenario: Scenario, seed) -> FadingRealization:
    """Draw all scattered components; deterministic given the seed.

    `seed` may be anything np.random.default_rng accepts, including a Generator.
    """
    rng = np.random.default_rng(seed)
    p = scenario.params
    g_direct = _complex_normal(rng, (p.n_ue, p.n_bs, p.m_bs))
    g_ris_user = _complex_normal(rng, (p.n_ue, p.n_ris, p.m_ris))
    return FadingRealization(g_direct=g_direct, g_ris_user=g_ris_user)


# Steering tables are pure functions of the scenario; cache per instance.
_steering_cache: "weakref.WeakKeyDictionary[Scenario, dict]" = weakref.WeakKeyDictionary()


def _steering(scenario: Scenario) -> dict:
    tab = _steering_cache.get(scenario)
    if tab is None:
        p = scenario.params
        i_bs = np.arange(p.m_bs)
        i_ris = np.arange(p.m_ris)
        tab = {
            # a(theta_{r,b}) at the BS: (n_ris, n_bs, m_bs)
            "a_bs": np.exp(1j * np.pi * np.sin(scenario.aod_bs)[..., None] * i_bs),
            # a(psi_{r,b}) at the RIS: (n_ris, n_bs, m_ris)
            "a_ris_bs": np.exp(1j * np.pi * np.sin(scenario.aoa_ris)[..., None] * i_ris),
            # a(theta_{u,r}) at the RIS: (n_ue, n_ris, m_ris)
            "a_ris_ue": np.exp(1j * np.pi * np.sin(scenario.aod_ris_user)[..., None] * i_ris),
        }
        _steering_cache[scenario] = tab
    return tab


def bs_ris_channel(scenario: Scenario, r: int, b: int) -> np.ndarray:
    """Rank-1 directional BS-to-RIS channel, (m_ris, m_bs)."""
    tab = _steering(scenario)
    return scenario.gain_rb[r, b] * np.outer(tab["a_ris_bs"][r, b], tab["a_bs"][r, b])


def ris_user_channel(scenario: Scenario, fading: FadingRealization, u: int, r: int) -> np.ndarray:
    """Rician RIS-to-user channel, (m_ris,)."""
    k = scenario.k_ur[u, r]
    los = np.sqrt(k / (1.0 + k))
    nlos = np.sqrt(1.0 / (1.0 + k))
    tab = _steering(scenario)
    return scenario.gain_ur[u, r] * (los * tab["a_ris_ue"][u, r] + nlos * fading.g_ris_user[u, r])


def align_phases(scenario: Scenario, r: int, owner_bs: int, scheduled_user: int,
                 allocation: "estimator.Allocation | None" = None) -> np.ndarray:
    """Per-element phases that make every directional cascade term real positive.

    After alignment the coherent cascade magnitude over all elements equals
    gain_ur * gain_rb * sqrt(K/(1+K)) * m_ris.
    """
    if allocation is not None and allocation.owner[r] != owner_bs:
        raise ValueError(f"RIS {r} is not allocated to BS {owner_bs}")
    if scenario.association[scheduled_user] != owner_bs:
        raise ValueError(f"user {scheduled_user} is not served by BS {owner_bs}")
    tab = _steering(scenario)
    cascade = tab["a_ris_ue"][scheduled_user, r] * tab["a_ris_bs"][r, owner_bs]
    return np.mod(-np.angle(cascade), 2.0 * np.pi)


def random_phases(rng: np.random.Generator, m_ris: int) -> np.ndarray:
    """i.i.d. uniform phases in [0, 2 pi)."""
    return rng.uniform(0.0, 2.0 * np.pi, size=m_ris)


def schedule_phases(scenario: Scenario, allocation: "estimator.Allocation",
                    evaluated_user: int, rng: np.random.Generator) -> np.ndarray:
    """(n_ris, m_ris) phase table for the instant in which `evaluated_user` is served.

    RISs owned by the user's serving BS align to the user; RISs owned by another
    BS align to one uniformly drawn user of that BS (one draw per BS, since a BS
    schedules a single user per resource); unowned RISs get random phases.
    """
    p = scenario.params
    d = int(scenario.association[evaluated_user])
    scheduled = {}
    for b in range(p.n_bs):
        if b == d or not np.any(allocation.owner == b):
            continue
        users_b = scenario.users_of(b)
        if len(users_b):
            scheduled[b] = int(rng.choice(users_b))
    phases = np.empty((p.n_ris, p.m_ris))
    for r in range(p.n_ris):
        owner = int(allocation.owner[r])
        if owner == d:
            phases[r] = align_phases(scenario, r, d, evaluated_user)
        elif owner in scheduled:
            phases[r] = align_phases(scenario, r, owner, scheduled[owner])
        else:
            phases[r] = random_phases(rng, p.m_ris)
    return phases


def make_beamformer(scenario: Scenario, u: int, d: int, allocation: "estimator.Allocation",
                    power_split: np.ndarray, rng: np.random.Generator | None = None) -> Beamformer:
    """Beam toward the owned RISs with the given power split; the split must sum
    to the BS transmit power. The directional superposition is rescaled so
    ||f||^2 equals the transmit power exactly (the construction meets it only
    asymptotically when the per-RIS steering vectors overlap). With no owned
    RIS the BS falls back to a random Gaussian beam with E[||f||^2] equal to
    the transmit power (needs `rng`).
    """
    p = scenario.params
    owned = np.flatnonzero(allocation.owner == d)
    power_split = np.asarray(power_split, dtype=float)
    if len(owned) == 0:
        if len(power_split):
            raise ValueError("power_split must be empty when no RIS is owned")
        if rng is None:
            raise ValueError("rng required for the random fallback beam")
        vec = _complex_normal(rng, p.m_bs) * np.sqrt(p.tx_power / p.m_bs)
        return Beamformer(vector=vec, power_split=power_split)
    if power_split.shape != (len(owned),):
        raise ValueError(f"power_split must have one entry per owned RIS ({len(owned)})")
    if not np.isclose(power_split.sum(), p.tx_power, rtol=1e-9, atol=0.0):
        raise ValueError(f"power_split must sum to {p.tx_power}, got {power_split.sum()!r}")
    tab = _steering(scenario)
    vec = np.sqrt(1.0 / p.m_bs) * (
        np.sqrt(power_split) @ np.conj(tab["a_bs"][owned, d])
    )
    vec *= np.sqrt(p.tx_power) / np.linalg.norm(vec)
    return Beamformer(vector=vec, power_split=power_split)


def total_channel(scenario: Scenario, fading: FadingRealization,
                  ris_phases: np.ndarray, u: int, b: int) -> np.ndarray:
    """Direct plus RIS-cascaded channel from BS b to user u, (m_bs,).

    Uses the rank-1 structure of the BS-to-RIS link: each RIS contributes a
    scalar times the BS-side steering vector.
    """
    tab = _steering(scenario)
    p = scenario.params
    if p.n_ris:
        k = scenario.k_ur[u]
        los = np.sqrt(k / (1.0 + k))[:, None]
        nlos = np.sqrt(1.0 / (1.0 + k))[:, None]
        h_ur = scenario.gain_ur[u][:, None] * (
            los * tab["a_ris_ue"][u] + nlos * fading.g_ris_user[u]
        )  # (n_ris, m_ris)
        weights = np.exp(1j * ris_phases) * tab["a_ris_bs"][:, b, :]
        s = scenario.gain_rb[:, b] * np.einsum("ri,ri->r", h_ur, weights)
        indirect = s @ tab["a_bs"][:, b, :]
    else:
        indirect = 0.0
    return scenario.gain_ub[u, b] * fading.g_direct[u, b] + indirect


def instantaneous_sinr(scenario: Scenario, fading: FadingRealization,
                       ris_phases: np.ndarray, beamformers: np.ndarray, u: int) -> float:
    """Linear SINR of user u for one fading draw and one phase table.

    `beamformers` is (n_ue, m_bs): each user's serving-BS transmit vector.
    Inter-cell interference is the exact average over the interfering BS's
    users; a BS with no users contributes nothing.
    """
    d = int(scenario.association[u])
    h_ud = total_channel(scenario, fading, ris_phases, u, d)
    signal = np.abs(h_ud @ beamformers[u]) ** 2
    denom = scenario.params.noise_power
    for b in range(scenario.params.n_bs):
        if b == d:
            continue
        users_b = scenario.users_of(b)
        if len(users_b) == 0:
            continue
        h_ub = total_channel(scenario, fading, ris_phases, u, b)
        denom += np.mean(np.abs(beamformers[users_b] @ h_ub) ** 2)
    return float(signal / denom)


def user_rate(sinr):
    """Achievable rate log2(1 + sinr) in bits/s/Hz; scalar or array."""
    s = np.asarray(sinr, dtype=float)
    if np.any(s < 0):
        raise ValueError("sinr must be >= 0")
    out = np.log2(1.0 + s)
    return float(out) if np.isscalar(sinr) or out.ndim == 0 else out


def evaluation_beamformers(scenario: Scenario, allocation: "estimator.Allocation",
                           rng: np.random.Generator) -> np.ndarray:
    """(n_ue, m_bs) serving beamformers with the closed-form optimal power split."""
    p = scenario.params
    out = np.empty((p.n_ue, p.m_bs), dtype=complex)
    for u in range(p.n_ue):
        d = int(scenario.association[u])
        c = estimator.coherent_gains(scenario, u, d, allocation)
        split = estimator.optimal_power_split(c, p.tx_power)
        out[u] = make_beamformer(scenario, u, d, allocation, split, rng=rng).vector
    return out


# Evaluation context per (scenario, allocation): alignment phases and
# directional beams are deterministic, so they are shared by all fading draws.
_eval_cache: "weakref.WeakKeyDictionary[Scenario, dict]" = weakref.WeakKeyDictionary()


def _eval_context(scenario: Scenario, allocation: "estimator.Allocation") -> dict:
    per_scenario = _eval_cache.setdefault(scenario, {})
    key = allocation.owner.tobytes()
    ctx = per_scenario.get(key)
    if ctx is None:
        p = scenario.params
        tab = _steering(scenario)
        owner = allocation.owner
        # phases aligned for (user, r) under r's owner, for owned RISs only
        align = np.zeros((p.n_ue, p.n_ris, p.m_ris))
        for r in range(p.n_ris):
            if owner[r] < 0:
                continue
            cascade = tab["a_ris_ue"][:, r, :] * tab["a_ris_bs"][r, owner[r]][None, :]
            align[:, r, :] = np.mod(-np.angle(cascade), 2.0 * np.pi)
        directional = np.zeros((p.n_ue, p.m_bs), dtype=complex)
        has_beam = np.zeros(p.n_ue, dtype=bool)
        for u in range(p.n_ue):
            d = int(scenario.association[u])
            if not np.any(owner == d):
                continue
            c = estimator.coherent_gains(scenario, u, d, allocation)
            split = estimator.optimal_power_split(c, p.tx_power)
            directional[u] = make_beamformer(scenario, u, d, allocation, split).vector
            has_beam[u] = True
        scheduled_from = {}
        for b in range(p.n_bs):
            if np.any(owner == b) and len(scenario.users_of(b)):
                scheduled_from[b] = scenario.users_of(b)
        ctx = {
            "align": align,
            "directional": directional,
            "has_beam": has_beam,
            "scheduled_from": scheduled_from,
            "k_los": np.sqrt(scenario.k_ur / (1.0 + scenario.k_ur)),
            "k_nlos": np.sqrt(1.0 / (1.0 + scenario.k_ur)),
            # gain_rb-weighted RIS-side steering per (r, b): (n_ris, n_bs, m_ris)
            "a_psi_w": scenario.gain_rb[:, :, None] * tab["a_ris_bs"],
            "a_bs": tab["a_bs"],
        }
        per_scenario[key] = ctx
    return ctx


def realized_user_rates(scenario: Scenario, allocation: "estimator.Allocation",
                        rng: np.random.Generator) -> np.ndarray:
    """Per-user instantaneous rates for one microscopic draw.

    Draws the fading, the per-instant phase schedules and any random fallback
    beams from `rng` in a fixed order (identical to composing sample_fading,
    make_beamformer, schedule_phases and instantaneous_sinr directly), so
    results are reproducible; deterministic per-scenario pieces are cached.
    """
    p = scenario.params
    tab = _steering(scenario)
    ctx = _eval_context(scenario, allocation)
    owner = allocation.owner
    fading = sample_fading(scenario, rng)
    beams = ctx["directional"].copy()
    for u in range(p.n_ue):
        if not ctx["has_beam"][u]:
            beams[u] = _complex_normal(rng, p.m_bs) * np.sqrt(p.tx_power / p.m_bs)
    users_of = [scenario.users_of(b) for b in range(p.n_bs)]

    rates = np.empty(p.n_ue)
    for u in range(p.n_ue):
        d = int(scenario.association[u])
        # phase schedule for this instant (same draw order as schedule_phases)
        scheduled = {}
        for b in range(p.n_bs):
            if b == d or b not in ctx["scheduled_from"]:
                continue
            scheduled[b] = int(rng.choice(ctx["scheduled_from"][b]))
        phases = np.empty((p.n_ris, p.m_ris))
        for r in range(p.n_ris):
            own = int(owner[r])
            if own == d:
                phases[r] = ctx["align"][u, r]
            elif own in scheduled:
                phases[r] = ctx["align"][scheduled[own], r]
            else:
                phases[r] = random_phases(rng, p.m_ris)
        # per-user Rician RIS channels, shared by both BS directions
        h_ur = scenario.gain_ur[u][:, None] * (
            ctx["k_los"][u][:, None] * tab["a_ris_ue"][u]
            + ctx["k_nlos"][u][:, None] * fading.g_ris_user[u])
        w = h_ur * np.exp(1j * phases)
        cascade = np.einsum("ri,rbi->rb", w, ctx["a_psi_w"])  # (n_ris, n_bs)
        sinr_den = p.noise_power
        signal = None
        for b in range(p.n_bs):
            h_ub = scenario.gain_ub[u, b] * fading.g_direct[u, b] \
                + cascade[:, b] @ ctx["a_bs"][:, b, :]
            if b == d:
                signal = np.abs(h_ub @ beams[u]) ** 2
            elif len(users_of[b]):
                sinr_den += np.mean(np.abs(beams[users_of[b]] @ h_ub) ** 2)
        rates[u] = np.log2(1.0 + signal / sinr_den)
    return rates
