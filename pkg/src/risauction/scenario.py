"""Macroscopic network realizations: geometry, association, LOS states, path gains.

One Scenario is a single large-scale draw. Everything downstream (SINR
estimation, auctions, fading synthesis) is parameterized by it; fast fading
lives in the channel module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s


@dataclass(frozen=True)
class SystemParams:
    """System-level constants. Powers in W, frequencies in Hz, angles in radians."""

    carrier_frequency: float = 26.0e9
    n_bs: int = 2
    m_bs: int = 50                     # antennas per BS
    n_ue: int = 20
    n_ris: int = 10
    m_ris: int = 250                   # reflecting elements per RIS
    tx_power: float = 0.1              # W per subcarrier, identical for every BS
    subcarrier_bandwidth: float = 15e3
    noise_psd: float = -174.0          # dBm/Hz
    noise_figure: float = 6.0          # dB
    pathloss_exp_los: float = 2.0
    pathloss_exp_nlos: float = 4.5
    k_factor_los: float = 100.0        # linear
    k_factor_nlos: float = 3.0
    los_decay_distance: float = 25.0   # m, decay constant of the LOS probability
    shadow_fading_variance: float = 10.0  # dB^2
    region: tuple[float, float] = (100.0, 50.0)  # m, (width, height)
    overload_prob: float = 0.75        # probability a user associates to BS0
    ris_axis_angle: float = math.pi / 2  # RIS array axis direction, from +x

    def __post_init__(self):
        for name in ("n_bs", "m_bs", "n_ue", "n_ris", "m_ris"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name}: must be an integer >= 1, got {v!r}")
        for name in ("carrier_frequency", "tx_power", "subcarrier_bandwidth",
                     "los_decay_distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name}: must be > 0")
        for name in ("pathloss_exp_los", "pathloss_exp_nlos"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name}: must be > 0")
        for name in ("k_factor_los", "k_factor_nlos", "shadow_fading_variance"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name}: must be >= 0")
        if not 0.0 <= self.overload_prob <= 1.0:
            raise ValueError(f"overload_prob: must be in [0, 1], got {self.overload_prob}")
        if len(self.region) != 2 or any(r < 0 for r in self.region):
            raise ValueError(f"region: must be (width, height) with both >= 0, got {self.region}")
        if not math.isfinite(self.ris_axis_angle):
            raise ValueError("ris_axis_angle: must be finite")
        for name in ("noise_psd", "noise_figure"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name}: must be finite")
        if not self.noise_power > 0:
            raise ValueError("derived noise power must be > 0")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def noise_power(self) -> float:
        """Thermal noise power per subcarrier in W (PSD + bandwidth + noise figure)."""
        dbm = self.noise_psd + 10.0 * math.log10(self.subcarrier_bandwidth) + self.noise_figure
        return 10.0 ** ((dbm - 30.0) / 10.0)

    @property
    def reference_gain(self) -> float:
        """Free-space power gain at 1 m: (lambda / 4 pi)^2."""
        return (self.wavelength / (4.0 * math.pi)) ** 2


@dataclass(frozen=True, eq=False)
class Scenario:
    """One macroscopic realization. Immutable after creation; arrays are not copied."""

    params: SystemParams
    bs_positions: np.ndarray      # (n_bs, 2) m
    ris_positions: np.ndarray     # (n_ris, 2) m
    user_positions: np.ndarray    # (n_ue, 2) m
    association: np.ndarray       # (n_ue,) serving BS index
    los_ub: np.ndarray            # (n_ue, n_bs) bool
    los_rb: np.ndarray            # (n_ris, n_bs) bool
    los_ur: np.ndarray            # (n_ue, n_ris) bool
    gain_ub: np.ndarray           # (n_ue, n_bs) linear amplitude gain
    gain_rb: np.ndarray           # (n_ris, n_bs)
    gain_ur: np.ndarray           # (n_ue, n_ris)
    k_ur: np.ndarray              # (n_ue, n_ris) Rician K factor, linear
    aod_bs: np.ndarray            # (n_ris, n_bs) rad, departure at BS toward RIS
    aoa_ris: np.ndarray           # (n_ris, n_bs) rad, arrival at RIS from BS
    aod_ris_user: np.ndarray      # (n_ue, n_ris) rad, departure at RIS toward user

    def __post_init__(self):
        counts = np.bincount(self.association, minlength=self.params.n_bs)
        if counts.sum() != self.params.n_ue:
            raise ValueError("every user must have exactly one serving BS")
        if not (np.all(self.gain_ub > 0) and np.all(self.gain_rb > 0)
                and np.all(self.gain_ur > 0)):
            raise ValueError("all path gains must be > 0")
        for ang in (self.aod_bs, self.aoa_ris, self.aod_ris_user):
            if not np.all(np.isfinite(ang)):
                raise ValueError("all angles must be finite")

    def users_of(self, b: int) -> np.ndarray:
        """Indices of the users served by BS b."""
        return np.flatnonzero(self.association == b)


def los_probability(distance: float, decay: float) -> float:
    """Distance-dependent LOS probability exp(-distance / decay)."""
    if decay <= 0:
        raise ValueError(f"decay must be > 0, got {decay}")
    if np.any(np.asarray(distance) < 0):
        raise ValueError(f"distance must be >= 0, got {distance}")
    return np.exp(-np.asarray(distance, dtype=float) / decay)


def path_gain(distance, is_los, params: SystemParams, shadow_db=0.0):
    """Linear amplitude gain: gain^2 = ref(1 m) * d^-exponent * 10^(shadow_db/10).

    The exponent is the LOS or NLOS value from the params. Scalar or array inputs.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be > 0 (1 m reference model)")
    expo = np.where(np.asarray(is_los, dtype=bool),
                    params.pathloss_exp_los, params.pathloss_exp_nlos)
    power = params.reference_gain * d ** (-expo) * 10.0 ** (np.asarray(shadow_db) / 10.0)
    out = np.sqrt(power)
    return float(out) if np.isscalar(distance) else out


def _pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(len(a), len(b)) Euclidean distances between 2-D point sets."""
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def _steering_angle(from_pos: np.ndarray, to_pos: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """arcsin of the direction cosine along the array axis, per (from, to) pair."""
    delta = to_pos[None, :, :] - from_pos[:, None, :]
    dist = np.linalg.norm(delta, axis=-1)
    cosine = (delta @ axis) / np.where(dist > 0, dist, 1.0)
    return np.arcsin(np.clip(cosine, -1.0, 1.0))


def sample_scenario(params: SystemParams, seed) -> Scenario:
    """Draw one macroscopic realization, deterministic given (params, seed).

    BSs sit at the midpoints of the region's left/right edges; RISs are equally
    spaced on the vertical mid-line between them; users are uniform over the
    region. Each user associates to BS0 with probability overload_prob. LOS
    flags, shadow fading and K factors are drawn independently per link.
    """
    if params.n_bs > 2:
        raise ValueError("sample_scenario supports 1 or 2 base stations")
    rng = np.random.default_rng(seed)
    width, height = params.region

    bs_positions = np.array([[0.0, height / 2.0], [width, height / 2.0]][: params.n_bs])
    ys = (np.arange(params.n_ris) + 0.5) * height / params.n_ris
    ris_positions = np.column_stack([np.full(params.n_ris, width / 2.0), ys])
    user_positions = rng.uniform([0.0, 0.0], [width, height], size=(params.n_ue, 2))

    if params.n_bs == 1:
        association = np.zeros(params.n_ue, dtype=np.int64)
    else:
        association = np.where(rng.random(params.n_ue) < params.overload_prob, 0, 1)

    d_ub = _pairwise_distances(user_positions, bs_positions)
    d_rb = _pairwise_distances(ris_positions, bs_positions)
    d_ur = _pairwise_distances(user_positions, ris_positions)

    decay = params.los_decay_distance
    los_ub = rng.random(d_ub.shape) < los_probability(d_ub, decay)
    los_rb = rng.random(d_rb.shape) < los_probability(d_rb, decay)
    los_ur = rng.random(d_ur.shape) < los_probability(d_ur, decay)

    shadow_std = math.sqrt(params.shadow_fading_variance)
    sh_ub = rng.normal(0.0, shadow_std, size=d_ub.shape)
    sh_rb = rng.normal(0.0, shadow_std, size=d_rb.shape)
    sh_ur = rng.normal(0.0, shadow_std, size=d_ur.shape)

    gain_ub = path_gain(d_ub, los_ub, params, sh_ub)
    gain_rb = path_gain(d_rb, los_rb, params, sh_rb)
    gain_ur = path_gain(d_ur, los_ur, params, sh_ur)

    k_ur = np.where(los_ur, params.k_factor_los, params.k_factor_nlos)

    bs_axis = np.array([0.0, 1.0])  # BS arrays along the cell edge direction
    ris_axis = np.array([math.cos(params.ris_axis_angle), math.sin(params.ris_axis_angle)])
    aod_bs = _steering_angle(bs_positions, ris_positions, bs_axis).T      # (n_ris, n_bs)
    aoa_ris = _steering_angle(ris_positions, bs_positions, ris_axis)      # (n_ris, n_bs)
    aod_ris_user = _steering_angle(ris_positions, user_positions, ris_axis).T  # (n_ue, n_ris)

    return Scenario(
        params=params,
        bs_positions=bs_positions,
        ris_positions=ris_positions,
        user_positions=user_positions,
        association=association,
        los_ub=los_ub, los_rb=los_rb, los_ur=los_ur,
        gain_ub=gain_ub, gain_rb=gain_rb, gain_ur=gain_ur,
        k_ur=k_ur,
        aod_bs=aod_bs, aoa_ris=aoa_ris, aod_ris_user=aod_ris_user,
    )
