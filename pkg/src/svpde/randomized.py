"""Randomized initial variance: v0 replaced by an Inverse Gamma distribution.

The PDE solution already spans the v-axis, so the randomized option value is
the distribution-weighted average of the solution along the S = S0 grid
line, renormalized for the truncated support [0, v_max].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc, gammainccinv, gammaln

from .grid import Grid2D
from .pricer import PricingError, _surface_v_profile

MIN_COVERED_MASS = 0.99


@dataclass(frozen=True)
class InitDistribution:
    """Inverse Gamma initialization law for the starting variance."""

    alpha: float   # shape
    beta: float    # scale

    def __post_init__(self):
        if not (self.alpha > 1.0):
            raise ValueError("alpha must exceed 1 (finite mean)")
        if not (self.beta > 0.0):
            raise ValueError("beta must be positive")

    @property
    def mean(self) -> float:
        return self.beta / (self.alpha - 1.0)

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        out = np.zeros_like(v)
        pos = v > 0.0
        vp = v[pos]
        out[pos] = np.exp(self.alpha * math.log(self.beta)
                          - (self.alpha + 1.0) * np.log(vp)
                          - self.beta / vp - gammaln(self.alpha))
        return out

    def cdf(self, v) -> float:
        if v <= 0.0:
            return 0.0
        return float(gammaincc(self.alpha, self.beta / v))

    def quantile(self, q: float) -> float:
        t = gammainccinv(self.alpha, q)
        return self.beta / float(t)

    def median(self) -> float:
        return self.quantile(0.5)


def randomized_price(surface: np.ndarray, grid: Grid2D, s_phys: float,
                     dist: InitDistribution) -> float:
    """Average the S = s_phys line of the solution over the init distribution.

    Trapezoid quadrature on the (non-uniform) v-axis, renormalized by the
    integrated density mass over [0, v_max]; insufficient coverage means
    v_max was too small for the distribution and is an error.
    """
    profile = _surface_v_profile(grid, surface, s_phys)
    v = grid.v_axis.nodes
    w = dist.pdf(v)
    mass = float(np.trapezoid(w, v))
    if mass < MIN_COVERED_MASS:
        raise PricingError(
            f"init distribution mass on the grid is {mass:.4f} < "
            f"{MIN_COVERED_MASS}; v_max too small")
    num = float(np.trapezoid(profile * w, v))
    return num / mass


def calibrate_randomized(chain, spec=None, calib_cfg=None, eval_cfg=None):
    """Fit (vbar, kappa, xi, rho[, p], alpha, beta) on a chain.

    Thin wrapper over calibrate.calibrate with a randomized model spec; see
    that module for the optimizer contract.
    """
    from .calibrate import ModelSpec, calibrate
    if spec is None:
        spec = ModelSpec(family="power", p=None, randomized=True)
    elif not spec.randomized:
        raise ValueError("calibrate_randomized needs a randomized ModelSpec")
    return calibrate(chain, spec, calib_cfg, eval_cfg)
