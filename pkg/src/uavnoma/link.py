"""Channel gains and per-receiver SINRs.

Squared gains follow the free-space convention ``beta0^2 / distance^2``.
Phase 1 (NOMA broadcast from the controller) and phase 2 (UAV relay to the
device) are described by :class:`LinkState` and :class:`PowerTriple`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import DirectLink, Geometry, SystemParams
from .errors import DegenerateGeometry, InvalidInput


class SicOrderWarning(UserWarning):
    """The controller-UAV gain is weaker than the direct link."""


@dataclass(frozen=True)
class LinkState:
    gain_br_sq: float
    gain_rd_sq: float
    gain_bd_sq: float
    s_br: float
    s_rd: float


@dataclass(frozen=True)
class PowerTriple:
    p1: float
    p2: float
    pu: float

    def __post_init__(self):
        if min(self.p1, self.p2, self.pu) < 0:
            raise InvalidInput(f"powers must be non-negative: {self}")

    def as_array(self):
        return np.array([self.p1, self.p2, self.pu])


def link_state(geom: Geometry, params: SystemParams, direct: DirectLink, warn=True) -> LinkState:
    s_br = float(np.sum((geom.uav - geom.controller) ** 2))
    s_rd = float(np.sum((geom.uav - geom.device) ** 2))
    if s_br == 0.0 or s_rd == 0.0:
        raise DegenerateGeometry("UAV coincides with the controller or the device")
    ls = LinkState(params.beta0_sq / s_br, params.beta0_sq / s_rd, direct.gain_sq, s_br, s_rd)
    if warn and not sic_order_ok(ls):
        warnings.warn(
            f"|h_br|^2={ls.gain_br_sq:.3e} < |h_bd|^2={ls.gain_bd_sq:.3e}; SIC ordering not guaranteed",
            SicOrderWarning,
            stacklevel=2,
        )
    return ls


def link_from_distances(s_br, s_rd, params: SystemParams, gain_bd_sq) -> LinkState:
    return LinkState(params.beta0_sq / s_br, params.beta0_sq / s_rd, gain_bd_sq, s_br, s_rd)


def sinr_device_p1(link: LinkState, pw: PowerTriple, params: SystemParams) -> float:
    """Device SINR in phase 1, treating s2 as noise."""
    g = link.gain_bd_sq
    return pw.p1 * g / (pw.p2 * g + params.noise_bs)


def snr_uav(link: LinkState, pw: PowerTriple, params: SystemParams) -> float:
    """UAV SNR on its own message after perfect SIC."""
    return pw.p2 * link.gain_br_sq / params.noise_bs


def sinr_uav_s1(link: LinkState, pw: PowerTriple, params: SystemParams) -> float:
    """UAV SINR when decoding the device message s1 first."""
    g = link.gain_br_sq
    return pw.p1 * g / (pw.p2 * g + params.noise_bs)


def sinr_uav_failed_sic(link: LinkState, pw: PowerTriple, params: SystemParams) -> float:
    """UAV SINR on s2 with s1 left in as interference."""
    g = link.gain_br_sq
    return pw.p2 * g / (pw.p1 * g + params.noise_bs)


def snr_device_p2(link: LinkState, pw: PowerTriple, params: SystemParams) -> float:
    return pw.pu * link.gain_rd_sq / params.noise_dev


def sic_order_ok(link: LinkState) -> bool:
    return link.gain_br_sq >= link.gain_bd_sq


@dataclass(frozen=True)
class Sinrs:
    gamma1: float
    gamma2: float
    gamma_s1: float
    gamma_fail: float
    gamma3: float


def all_sinrs(link: LinkState, pw: PowerTriple, params: SystemParams) -> Sinrs:
    return Sinrs(
        sinr_device_p1(link, pw, params),
        snr_uav(link, pw, params),
        sinr_uav_s1(link, pw, params),
        sinr_uav_failed_sic(link, pw, params),
        snr_device_p2(link, pw, params),
    )
