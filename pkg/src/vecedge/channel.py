"""Vehicle-to-infrastructure uplink: LoS probability, Nakagami-m fading,
log-distance path loss with log-normal shadowing, and Shannon rate.

All samplers take an explicit ``numpy.random.Generator`` and broadcast over
arrays of distances so a whole (vehicle, server) matrix is realized at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioConfig

LOS, NLOS = "los", "nlos"
_LN2 = np.log(2.0)


@dataclass(frozen=True)
class ChannelRealization:
    distance: np.ndarray
    los_prob: np.ndarray
    is_los: np.ndarray
    small_scale_los: np.ndarray
    small_scale_nlos: np.ndarray
    loss_los: np.ndarray
    loss_nlos: np.ndarray
    gain: np.ndarray

    @property
    def gain_los(self):
        return self.small_scale_los / self.loss_los

    @property
    def gain_nlos(self):
        return self.small_scale_nlos / self.loss_nlos


def los_probability(d, alpha1: float, alpha2: float):
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        near = np.where(d > 0, np.minimum(alpha1 / np.where(d > 0, d, 1.0), 1.0), 1.0)
    tail = np.exp(-d / alpha2)
    p = np.clip(near * (1.0 - tail) + tail, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


def sample_small_scale(m_shape: float, rng: np.random.Generator, size=None, mean_power: float = 1.0):
    """Power gain |h|^2 of a Nakagami-m amplitude: Gamma(m, mean_power/m)."""
    if m_shape < 0.5:
        raise ValueError("Nakagami shape factor must be >= 0.5")
    return rng.gamma(m_shape, mean_power / m_shape, size=size)


def reference_loss(cfg: ScenarioConfig) -> float:
    return (4.0 * np.pi * cfg.ref_distance * cfg.carrier_freq) ** 2 / cfg.light_speed ** 2


def large_scale_loss(d, link: str, cfg: ScenarioConfig, rng: np.random.Generator | None = None,
                     shadow_std: float | None = None):
    """Path loss times shadowing; ``rng=None`` gives the median (no shadowing)."""
    if link == LOS:
        beta, std = cfg.pathloss_exp_los, cfg.shadow_std_los
    elif link == NLOS:
        beta, std = cfg.pathloss_exp_nlos, cfg.shadow_std_nlos
    else:
        raise ValueError(f"unknown link class {link!r}")
    if shadow_std is not None:
        std = shadow_std
    d = np.maximum(np.asarray(d, dtype=float), cfg.ref_distance)
    loss = reference_loss(cfg) * (d / cfg.ref_distance) ** beta
    if rng is not None:
        shadow_db = rng.normal(0.0, 1.0, size=d.shape) * std
        loss = loss * 10.0 ** (shadow_db / 10.0)
    return float(loss) if np.ndim(loss) == 0 else loss


def channel_gain(d, cfg: ScenarioConfig, rng: np.random.Generator,
                 los_prob=None) -> ChannelRealization:
    """Realize the channel power gain for one or many links.

    Both link classes are always drawn (keeps the RNG stream independent of
    the mixing mode). In ``mixture`` mode the gain is the LoS-probability
    weighted sum; in ``bernoulli`` mode one class is selected at random.
    """
    d = np.maximum(np.asarray(d, dtype=float), cfg.ref_distance)
    p = los_probability(d, cfg.alpha1, cfg.alpha2) if los_prob is None else np.broadcast_to(
        np.asarray(los_prob, dtype=float), d.shape)
    p = np.asarray(p, dtype=float)
    h_los = sample_small_scale(cfg.nakagami_m_los, rng, d.shape, cfg.mean_power)
    h_nlos = sample_small_scale(cfg.nakagami_m_nlos, rng, d.shape, cfg.mean_power)
    l_los = np.asarray(large_scale_loss(d, LOS, cfg, rng))
    l_nlos = np.asarray(large_scale_loss(d, NLOS, cfg, rng))
    is_los = rng.random(d.shape) < p
    g_los, g_nlos = h_los / l_los, h_nlos / l_nlos
    if cfg.link_mode == "bernoulli":
        gain = np.where(is_los, g_los, g_nlos)
    else:
        gain = p * g_los + (1.0 - p) * g_nlos
    return ChannelRealization(d, p, is_los, h_los, h_nlos, l_los, l_nlos, gain)


def transmission_rate(bandwidth, power, gain, noise_power):
    snr = np.asarray(power, dtype=float) * np.asarray(gain, dtype=float) / noise_power
    r = bandwidth * np.log1p(snr) / _LN2
    return float(r) if np.ndim(r) == 0 else r
