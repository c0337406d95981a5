"""Stylised 90-bank network with fat-tailed degrees, buffers and exposures."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..cascade_mc import NetworkRealization, PASource, realize_network
from ..ensemble import Ensemble, LawSpec
from ..netgen import Skeleton

log = logging.getLogger(__name__)

EXPOSURE_BASES = ("edge", "lender-total")


@dataclass(frozen=True)
class EuCalibration:
    """Growth parameters of the skeleton and log-normal balance-sheet parameters.

    Default buffer ``(k j)**beta1 * exp(a1 + b1 X)``, stress buffer the same
    times ``stress_prefactor`` with an independent X, exposure
    ``(k j)**beta2 * exp(a2 + b2 X)`` with (k, j) the edge type.

    ``exposure_basis="lender-total"`` reads the exposure formula as the
    lending bank's total, split evenly over its ``j`` borrowers, so each
    edge carries an extra factor ``1 / j``.
    """

    alpha: float = 0.169
    gamma: float = 0.169
    delta_in: float = 4.417
    delta_out: float = 4.417
    grow: int = 1000
    keep: int = 90
    beta1: float = 0.3
    a1: float = 8.03
    b1: float = 0.9
    beta2: float = -0.2
    a2: float = 8.75
    b2: float = 1.16
    stress_prefactor: float = 2.0 / 3.0
    exposure_basis: str = "edge"

    def __post_init__(self):
        if self.exposure_basis not in EXPOSURE_BASES:
            raise ValueError(f"exposure_basis must be one of {EXPOSURE_BASES}")

    def source(self) -> PASource:
        return PASource(self.grow, self.keep, self.alpha, self.gamma, self.delta_in, self.delta_out)

    def ensemble(self, p0: float = 0.0) -> Ensemble:
        node = dict(j_power=self.beta1, k_power=self.beta1)
        j_extra = -1.0 if self.exposure_basis == "lender-total" else 0.0
        return Ensemble(
            delta=LawSpec.from_log_params(self.a1, self.b1, **node),
            sigma=LawSpec.from_log_params(self.a1 + math.log(self.stress_prefactor), self.b1, **node),
            omega=LawSpec.from_log_params(self.a2, self.b2, j_power=self.beta2 + j_extra, k_power=self.beta2),
            p0=p0,
            name="eu90",
        )

    def as_dict(self) -> dict:
        return asdict(self)


def eu_streams(seed) -> tuple[np.random.Generator, np.random.Generator]:
    topo, sheet = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(topo), np.random.default_rng(sheet)


def build_eu_skeleton(cal: EuCalibration, seed) -> Skeleton:
    g = cal.source().draw(eu_streams(seed)[0])
    isolated = int(np.sum((g.in_deg == 0) | (g.out_deg == 0)))
    if isolated:
        log.info("eu90: %d kept banks lack in- or out-edges; degree factors floored at 1", isolated)
    return g


def build_eu_network(cal: EuCalibration, seed) -> NetworkRealization:
    """Skeleton plus one draw of buffers and exposures."""
    g = build_eu_skeleton(cal, seed)
    return realize_network(g, cal.ensemble(), eu_streams(seed)[1])


def eu_analytic_model(cal: EuCalibration, g: Skeleton, lam: float, p0: float, grid_step: float, M: int, delta_factor=1.0, sigma_factor=1.0):
    """Fixed-skeleton LTI model of the calibration on ``g`` (capped grid)."""
    from ..cascade_fixed import FixedLtiModel

    ens = cal.ensemble(p0).with_buffers_scaled(delta_factor, sigma_factor)
    return FixedLtiModel.from_bound(ens.bind(g), lam, grid_step, M, mode="cap", buffer_tail_tol=None)
