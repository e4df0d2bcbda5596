"""Power-law stochastic volatility model family and PDE coefficients.

The variance process is dv = kappa*(vbar - v)*dt + xi*v^p*dW with
p = 1 (GARCH diffusion), p = 0.5 (Heston / square-root) or anything in
between.  This module holds the parameter containers plus the coefficient
functions that specialize the generic 2-D pricing PDE solver to a given p.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GARCH = "garch"
HESTON = "heston"
POWER = "power"

RHO_MIN = -0.95


def family_for_power(p: float) -> str:
    if p == 1.0:
        return GARCH
    if p == 0.5:
        return HESTON
    return POWER


@dataclass(frozen=True)
class ModelParams:
    """Model parameter vector (v0, vbar, kappa, xi, rho, p).

    All rates are annualized; v0/vbar are variances (year^-1 scale).
    rho must lie in [-0.95, 0]: the mixed-derivative stencil orientation
    assumes non-positive correlation.
    """

    v0: float
    vbar: float
    kappa: float
    xi: float
    rho: float
    p: float = 1.0

    def __post_init__(self):
        if not (self.v0 > 0.0):
            raise ValueError(f"v0 must be positive, got {self.v0}")
        if not (self.vbar > 0.0):
            raise ValueError(f"vbar must be positive, got {self.vbar}")
        if not (self.kappa > 0.0):
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not (self.xi > 0.0):
            raise ValueError(f"xi must be positive, got {self.xi}")
        if self.rho > 0.0:
            raise ValueError(f"rho must be <= 0, got {self.rho}")
        if self.rho < RHO_MIN:
            raise ValueError(f"rho must be >= {RHO_MIN}, got {self.rho}")
        if not (0.5 <= self.p <= 1.0):
            raise ValueError(f"p must lie in [0.5, 1], got {self.p}")

    @property
    def family(self) -> str:
        return family_for_power(self.p)

    def as_vector(self) -> np.ndarray:
        return np.array([self.v0, self.vbar, self.kappa, self.xi, self.rho])


@dataclass(frozen=True)
class MarketTerms:
    """Per-option market inputs: stepwise-constant r/q for the expiry."""

    S0: float
    K: float
    T: float
    r: float
    q: float

    def __post_init__(self):
        if not (self.T > 0.0):
            raise ValueError(f"T must be positive, got {self.T}")
        if not (self.K > 0.0):
            raise ValueError(f"K must be positive, got {self.K}")
        if not (self.S0 > 0.0):
            raise ValueError(f"S0 must be positive, got {self.S0}")


@dataclass(frozen=True)
class ParamBounds:
    """Box constraints used by the calibrator (wide enough for most markets)."""

    v0: tuple = (0.0025, 0.50)
    vbar: tuple = (0.005, 0.25)
    kappa: tuple = (1.0, 20.0)
    xi: tuple = (1.0, 20.0)
    rho: tuple = (RHO_MIN, 0.0)
    p: tuple = (0.5, 1.0)
    alpha: tuple = (1.0 + 1e-6, 50.0)
    beta: tuple = (1e-5, 0.5)

    def as_dict(self) -> dict:
        return {
            "v0": self.v0, "vbar": self.vbar, "kappa": self.kappa,
            "xi": self.xi, "rho": self.rho, "p": self.p,
            "alpha": self.alpha, "beta": self.beta,
        }


def coefficient_parts(params: ModelParams, terms: MarketTerms, s, v, steps,
                      log_form: bool = False):
    """Split PDE coefficients at nodes (s, v): pure terms plus the mixed factor.

    `steps` is (ds_minus, ds_plus, dv_minus, dv_plus), the four adjacent grid
    steps.  Returns (d_s, d_v, c_s, c_v, m_sv) where d/c carry only the
    physical diffusion/convection and m_sv is the mixed-term prefactor
    rho*xi*S*v^(1/2+p)/D (no S factor in log form), D = ds_p*dv_m + ds_m*dv_p.
    Everything broadcasts over numpy arrays; v = 0 kills all diffusion and
    mixed terms.
    """
    ds_m, ds_p, dv_m, dv_p = [np.asarray(x, dtype=float) for x in steps]
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    r, q = terms.r, terms.q

    if log_form:
        d_s = 0.5 * v
        c_s = (r - q - 0.5 * v) * np.ones_like(s)
        m_fac = params.rho * params.xi * np.power(v, 0.5 + params.p)
    else:
        d_s = 0.5 * s * s * v
        c_s = (r - q) * s
        m_fac = params.rho * params.xi * s * np.power(v, 0.5 + params.p)

    d_v = 0.5 * params.xi ** 2 * np.power(v, 2.0 * params.p)
    c_v = params.kappa * (params.vbar - v)

    denom = ds_p * dv_m + ds_m * dv_p
    m_sv = m_fac / denom
    return d_s, d_v, c_s, c_v, m_sv


def pde_coefficients(params: ModelParams, terms: MarketTerms, s, v, steps):
    """Semi-discrete coefficients (d_S, d_v, c_S, c_v, m_Sv) at a node.

    These are the printed values with the mixed-stencil corrections folded in:
        d_S = S^2 v / 2 + m_Sv (ds_p^2 + ds_m^2) / 2
        d_v = xi^2 v^(2p) / 2 + m_Sv (dv_p^2 + dv_m^2) / 2
        c_S = (r - q) S + m_Sv (ds_p - ds_m)
        c_v = kappa (vbar - v) + m_Sv (dv_p - dv_m)
        m_Sv = rho xi S v^(1/2+p) / D
    """
    ds_m, ds_p, dv_m, dv_p = [np.asarray(x, dtype=float) for x in steps]
    d_s, d_v, c_s, c_v, m_sv = coefficient_parts(params, terms, s, v, steps)
    d_s = d_s + 0.5 * m_sv * (ds_p ** 2 + ds_m ** 2)
    d_v = d_v + 0.5 * m_sv * (dv_p ** 2 + dv_m ** 2)
    c_s = c_s + m_sv * (ds_p - ds_m)
    c_v = c_v + m_sv * (dv_p - dv_m)
    return d_s, d_v, c_s, c_v, m_sv


def log_pde_coefficients(params: ModelParams, terms: MarketTerms, x, v, steps):
    """Same as pde_coefficients for the log-price form of the PDE.

    The underlying coordinate is X = ln(S): d_X = v/2, convection
    r - q - v/2, and the mixed factor loses the S multiplier.
    """
    ds_m, ds_p, dv_m, dv_p = [np.asarray(xx, dtype=float) for xx in steps]
    d_s, d_v, c_s, c_v, m_sv = coefficient_parts(params, terms, x, v, steps,
                                                 log_form=True)
    d_s = d_s + 0.5 * m_sv * (ds_p ** 2 + ds_m ** 2)
    d_v = d_v + 0.5 * m_sv * (dv_p ** 2 + dv_m ** 2)
    c_s = c_s + m_sv * (ds_p - ds_m)
    c_v = c_v + m_sv * (dv_p - dv_m)
    return d_s, d_v, c_s, c_v, m_sv
