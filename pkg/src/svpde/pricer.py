"""One option valuation: grid build, assemble, march, checks, interpolation.

A valuation that fails the negative-value check raises NeedsReprice; the
escalation ladder switches to the log-form PDE with the BDF3 scheme and
then scales resolution by 1.5x per level (three times) until the check
passes.  Spatial Richardson extrapolation combines fine/coarse solves as
(4*P_fine - P_coarse)/3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import march
from .discretize import assemble, smoothed_payoff
from .grid import Grid2D, make_hybrid_v_axis, make_s_axis, richardson_pair, s_bounds
from .market import CALL, PUT
from .models import MarketTerms, ModelParams
from .vol_bounds import DEFAULT_Q, FPConfig, choose_vmax

MAX_ESCALATION = 4
NEG_VALUE_REL = 0.01          # tolerated negative magnitude, relative to V0
V0_FLOOR_REL = 1e-6           # reference floor: 1e-6 * spot


class PricingError(RuntimeError):
    pass


class NeedsReprice(Exception):
    """Negative-value check failed; not fatal, triggers the reprice ladder."""


@dataclass(frozen=True)
class PriceConfig:
    scheme: str = march.HV1
    ns: int = 100
    nv: int = 50
    nt: int = 50
    spatial_re: bool = True
    log_form: bool = False
    smoothing: bool = True
    safety_factor: int = 1
    alpha: float = 0.1            # log-form left-truncation fraction of K
    vmax_q: float = DEFAULT_Q
    fp: FPConfig = field(default_factory=FPConfig)

    def __post_init__(self):
        if self.spatial_re and (self.ns % 2 or self.nv % 2):
            raise ValueError("NS and NV must be even with spatial_re on")


@dataclass
class Valuation:
    price: float
    surface: np.ndarray
    grid: Grid2D
    flags: dict
    coarse_surface: np.ndarray = None
    coarse_grid: Grid2D = None
    price_fine: float = None
    price_coarse: float = None
    error_estimate: float = None


def interp4(x: np.ndarray, y: np.ndarray, xq: float):
    """4-point (cubic Lagrange) interpolation; y may be (N,) or (N, M)."""
    n = x.size
    if n < 4:
        raise PricingError("need at least 4 nodes for cubic interpolation")
    k = int(np.searchsorted(x, xq))
    k0 = min(max(k - 2, 0), n - 4)
    xs = x[k0:k0 + 4]
    w = np.empty(4)
    for m in range(4):
        num = 1.0
        for l in range(4):
            if l != m:
                num *= (xq - xs[l]) / (xs[m] - xs[l])
        w[m] = num
    return np.tensordot(w, y[k0:k0 + 4], axes=(0, 0))


def _surface_value(grid: Grid2D, surface: np.ndarray, s_phys: float) -> float:
    """Surface value at (s_phys, v0): v0 is on-grid, cubic interpolation in S."""
    xq = math.log(s_phys) if grid.log_form else s_phys
    row = surface[:, grid.v_axis.cluster_index]
    return float(interp4(grid.s_axis.nodes[1:], row, xq))


def _surface_v_profile(grid: Grid2D, surface: np.ndarray, s_phys: float) -> np.ndarray:
    """Surface values at (s_phys, v_j) for every v node (cubic in S)."""
    xq = math.log(s_phys) if grid.log_form else s_phys
    return np.asarray(interp4(grid.s_axis.nodes[1:], surface, xq))


def negative_value_check(surface: np.ndarray, grid: Grid2D, K: float,
                         v0: float, v0_price: float, S0: float) -> bool:
    """Scan grid nodes near the strike / v0 for material negative values.

    Window: |S - K| <= 0.1 K and |v - v0| <= 0.5 v0.  Fails when V0 <= 0 or
    any windowed node is below -1% of V0 (V0 floored at 1e-6 * S0 so a
    near-zero valuation is not penalized by roundoff).
    """
    if not np.isfinite(v0_price) or v0_price <= 0.0:
        return False
    s_nodes = grid.s_axis.nodes[1:]
    s_phys = np.exp(s_nodes) if grid.log_form else s_nodes
    v_nodes = grid.v_axis.nodes
    si = np.abs(s_phys - K) <= 0.1 * K
    vj = np.abs(v_nodes - v0) <= 0.5 * v0
    window = surface[np.ix_(si, vj)]
    if window.size == 0:
        return True
    ref = max(v0_price, V0_FLOOR_REL * S0)
    return bool(window.min() >= -NEG_VALUE_REL * ref)


def _build_grids(terms: MarketTerms, params: ModelParams, cfg: PriceConfig,
                 min_s_max: float = None, min_v_max: float = None):
    vres = choose_vmax(params, terms.T, q=cfg.vmax_q, v0=params.v0, cfg=cfg.fp)
    v_max = vres.value if min_v_max is None else max(vres.value, min_v_max)
    lo, hi = s_bounds(params, terms, cfg.log_form, cfg.safety_factor, cfg.alpha)
    if min_s_max is not None:
        hi = max(hi, math.log(min_s_max) if cfg.log_form else min_s_max)
    cluster = math.log(terms.K) if cfg.log_form else terms.K
    if cfg.spatial_re:
        coarse, fine = richardson_pair(cluster, lo, hi, params.v0, v_max,
                                       cfg.ns, cfg.nv, log_form=cfg.log_form)
        return fine, coarse, vres
    s_axis = make_s_axis(cluster, lo, hi, cfg.ns)
    v_axis = make_hybrid_v_axis(params.v0, v_max, cfg.nv)
    return Grid2D(s_axis, v_axis, cfg.log_form), None, vres


def _solve_on_grid(grid: Grid2D, terms: MarketTerms, params: ModelParams,
                   side: str, cfg: PriceConfig) -> np.ndarray:
    op = assemble(grid, params, terms, side)
    init = smoothed_payoff(grid, terms.K, side, smoothing=cfg.smoothing)
    return march.Marcher(op, cfg.scheme, cfg.nt, terms.T).run(init.values)


def price_single(terms: MarketTerms, params: ModelParams, side: str,
                 cfg: PriceConfig, min_s_max: float = None,
                 min_v_max: float = None) -> Valuation:
    """Value one option; raises NeedsReprice if the negative check fails."""
    fine, coarse, vres = _build_grids(terms, params, cfg, min_s_max, min_v_max)
    surface = _solve_on_grid(fine, terms, params, side, cfg)
    p_fine = _surface_value(fine, surface, terms.S0)

    val = Valuation(price=p_fine, surface=surface, grid=fine,
                    flags={"repriced": False, "escalation_level": 0,
                           "fp_fallback": vres.fallback},
                    price_fine=p_fine)
    if coarse is not None:
        c_surface = _solve_on_grid(coarse, terms, params, side, cfg)
        p_coarse = _surface_value(coarse, c_surface, terms.S0)
        p_re = (4.0 * p_fine - p_coarse) / 3.0
        val.coarse_surface = c_surface
        val.coarse_grid = coarse
        val.price_coarse = p_coarse
        val.price = p_re
        val.error_estimate = abs(p_fine - p_re)

    ok = negative_value_check(surface, fine, terms.K, params.v0, val.price,
                              terms.S0)
    if ok and coarse is not None:
        ok = negative_value_check(val.coarse_surface, coarse, terms.K,
                                  params.v0, val.price, terms.S0)
    if not ok:
        raise NeedsReprice(f"negative-value check failed for {side} "
                           f"K={terms.K} T={terms.T}")
    return val


def spatial_re_price(terms: MarketTerms, params: ModelParams, side: str,
                     cfg: PriceConfig) -> Valuation:
    """Richardson-extrapolated valuation: (4*P_fine - P_coarse)/3."""
    if not cfg.spatial_re:
        cfg = replace(cfg, spatial_re=True)
    return price_single(terms, params, side, cfg)


def _escalated_config(cfg: PriceConfig, level: int) -> PriceConfig:
    """Ladder: level 1 switches to log-form BDF3; levels 2+ scale resolution."""
    factor = 1.5 ** (level - 1)

    def even(x):
        n = int(math.ceil(x))
        return n + (n % 2)

    return replace(cfg, scheme=march.BDF3, log_form=True,
                   ns=even(cfg.ns * factor), nv=even(cfg.nv * factor),
                   nt=max(3, int(math.floor(cfg.nt * factor))))


def reprice_escalate(terms: MarketTerms, params: ModelParams, side: str,
                     cfg: PriceConfig, min_s_max: float = None) -> Valuation:
    """Robust ladder after a NeedsReprice signal."""
    for level in range(1, MAX_ESCALATION + 1):
        try:
            val = price_single(terms, params, side,
                               _escalated_config(cfg, level), min_s_max)
        except NeedsReprice:
            continue
        val.flags["repriced"] = True
        val.flags["escalation_level"] = level
        return val
    raise PricingError(
        f"negative-value check still failing at escalation level "
        f"{MAX_ESCALATION} for {side} K={terms.K} T={terms.T}")


def price_robust(terms: MarketTerms, params: ModelParams, side: str,
                 cfg: PriceConfig, min_s_max: float = None) -> Valuation:
    """price_single with the escalation ladder applied on check failure."""
    try:
        return price_single(terms, params, side, cfg, min_s_max)
    except NeedsReprice:
        return reprice_escalate(terms, params, side, cfg, min_s_max)
