"""RMSE_IV objective evaluation over an option chain.

Approach I prices every quote on its own grid; Approach II solves one PDE
per expiry (the furthest out-of-the-money put) and extracts every sibling
strike through the level-independence scaling P(K) = K * p(S = K_ref*S0/K),
calls via put-call parity.  Deep out-of-the-money quotes force a minimum
spatial resolution that ramps with how small the market price is.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .market import (CALL, PUT, ImpliedVolError, OptionChain, OptionQuote,
                     bsm_price, implied_vol)
from .models import MarketTerms, ModelParams
from .pricer import (MAX_ESCALATION, NeedsReprice, PriceConfig, PricingError,
                     Valuation, _escalated_config, _surface_v_profile,
                     _surface_value, interp4, price_single)

# minimum-resolution ramp endpoints (relative market price of spot)
RAMP_PRICE_HI = 0.005
RAMP_PRICE_LO = 0.0001
RAMP_RES_LO = (120, 70)
RAMP_RES_HI = (400, 100)
APPROACH2_CAP = (200, 80)


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    approach: int = 2
    price: PriceConfig = field(default_factory=PriceConfig)
    threads: int = 1
    cap2: tuple = APPROACH2_CAP   # cap on the enforced minimum for Approach II

    def __post_init__(self):
        if self.approach not in (1, 2):
            raise ValueError("approach must be 1 or 2")


@dataclass
class EvalReport:
    rmse: float
    model_ivs: np.ndarray        # aligned with chain.quotes
    reprice_count: int
    wall_time: float
    n_solves: int                # PDE solve tasks (per quote or per expiry)

    def __float__(self):
        return self.rmse


def _even(x: float) -> int:
    n = int(math.ceil(x))
    return n + (n % 2)


def resolution_policy(quote: OptionQuote, chain: OptionChain,
                      cfg: EvalConfig) -> tuple:
    """Effective (NS, NV, NT) for one quote.

    Market price below 0.5% of spot ramps the enforced minimum (NS, NV)
    log-linearly from (120, 70) up to (400, 100) at 0.01% of spot; Approach
    II caps the enforced minimum at (200, 80).  NT scales with expiry:
    floor(NT * max(T, 1)).
    """
    base = cfg.price
    r = chain.rate_for(quote.expiry_index)
    price = bsm_price(chain.S0, quote.K, quote.T, r, chain.q,
                      quote.market_iv, quote.side)
    ns_min, nv_min = 0, 0
    hi = RAMP_PRICE_HI * chain.S0
    lo = RAMP_PRICE_LO * chain.S0
    if price < hi:
        u = min(1.0, math.log(hi / max(price, 1e-300)) / math.log(hi / lo))
        ns_min = RAMP_RES_LO[0] + u * (RAMP_RES_HI[0] - RAMP_RES_LO[0])
        nv_min = RAMP_RES_LO[1] + u * (RAMP_RES_HI[1] - RAMP_RES_LO[1])
        if cfg.approach == 2:
            ns_min = min(ns_min, cfg.cap2[0])
            nv_min = min(nv_min, cfg.cap2[1])
    ns = max(base.ns, _even(ns_min)) if ns_min else base.ns
    nv = max(base.nv, _even(nv_min)) if nv_min else base.nv
    nt = int(math.floor(base.nt * max(quote.T, 1.0)))
    return ns, nv, nt


def _quote_terms(quote: OptionQuote, chain: OptionChain) -> MarketTerms:
    return MarketTerms(S0=chain.S0, K=quote.K, T=quote.T,
                       r=chain.rate_for(quote.expiry_index), q=chain.q)


def _map(tasks, worker, threads: int):
    """Run workers over tasks, largest first, results in task order."""
    order = sorted(range(len(tasks)), key=lambda i: -tasks[i][0])
    results = [None] * len(tasks)
    if threads <= 1:
        for i in order:
            results[i] = worker(tasks[i][1])
        return results
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {i: pool.submit(worker, tasks[i][1]) for i in order}
        for i, fut in futures.items():
            results[i] = fut.result()
    return results


def _randomized_value(val: Valuation, s_phys: float, dist) -> float:
    """Distribution-averaged surface value at s_phys (fine/coarse combined)."""
    from .randomized import randomized_price
    p_fine = randomized_price(val.surface, val.grid, s_phys, dist)
    if val.coarse_surface is None:
        return p_fine
    p_coarse = randomized_price(val.coarse_surface, val.coarse_grid,
                                s_phys, dist)
    return (4.0 * p_fine - p_coarse) / 3.0


def _plain_value(val: Valuation, s_phys: float) -> float:
    p_fine = _surface_value(val.grid, val.surface, s_phys)
    if val.coarse_surface is None:
        return p_fine
    p_coarse = _surface_value(val.coarse_grid, val.coarse_surface, s_phys)
    return (4.0 * p_fine - p_coarse) / 3.0


def evaluate_approach1(params: ModelParams, chain: OptionChain,
                       cfg: EvalConfig, dist=None) -> EvalReport:
    """One PDE solve per quote."""
    t_start = time.perf_counter()
    grid_params = _grid_params(params, dist)
    min_vmax = _dist_vmax(dist, cfg)

    tasks = []
    for quote in chain.quotes:
        ns, nv, nt = resolution_policy(quote, chain, cfg)
        tasks.append((ns * nv * nt, (quote, ns, nv, nt)))

    def worker(task):
        quote, ns, nv, nt = task
        terms = _quote_terms(quote, chain)
        pcfg = replace(cfg.price, ns=ns, nv=nv, nt=nt)
        price, val, level = _robust_quote_price(
            terms, grid_params, quote.side, pcfg, dist, min_vmax)
        iv = implied_vol(price, chain.S0, quote.K, quote.T, terms.r,
                         chain.q, quote.side)
        return iv, level

    out = _map(tasks, worker, cfg.threads)
    ivs = np.array([o[0] for o in out])
    repriced = sum(1 for o in out if o[1] > 0)
    return _finish(ivs, chain, repriced, t_start, len(chain.quotes))


def _robust_quote_price(terms, params, side, pcfg, dist, min_vmax):
    """Price one quote with the escalation ladder; IV range failures also
    escalate (a negative or out-of-band price cannot be inverted)."""
    for level in range(0, MAX_ESCALATION + 1):
        use = pcfg if level == 0 else _escalated_config(pcfg, level)
        try:
            val = price_single(terms, params, side, use, min_v_max=min_vmax)
            if dist is None:
                price = val.price
            else:
                price = _randomized_value(val, terms.S0, dist)
            _check_band(price, terms, side)
            return price, val, level
        except (NeedsReprice, ImpliedVolError, _BandError):
            continue
    raise EvaluationError(
        f"quote {side} K={terms.K} T={terms.T} failed at escalation cap")


class _BandError(ValueError):
    pass


def _check_band(price, terms, side):
    disc_s = terms.S0 * math.exp(-terms.q * terms.T)
    disc_k = terms.K * math.exp(-terms.r * terms.T)
    lo = max(disc_s - disc_k, 0.0) if side == CALL else max(disc_k - disc_s, 0.0)
    hi = disc_s if side == CALL else disc_k
    if not (lo < price < hi):
        raise _BandError(f"price {price} outside ({lo}, {hi})")


def _grid_params(params: ModelParams, dist) -> ModelParams:
    """v0 is replaced by the distribution median when the start is randomized."""
    if dist is None:
        return params
    return replace(params, v0=dist.median())


def _dist_vmax(dist, cfg: EvalConfig):
    if dist is None:
        return None
    return dist.quantile(cfg.price.vmax_q)


def evaluate_approach2(params: ModelParams, chain: OptionChain,
                       cfg: EvalConfig, dist=None) -> EvalReport:
    """One PDE solve per expiry via the price-scaling property."""
    t_start = time.perf_counter()
    grid_params = _grid_params(params, dist)
    min_vmax = _dist_vmax(dist, cfg)

    tasks = []
    for idx in range(chain.n_expiries):
        quotes = chain.quotes_for_expiry(idx)
        if not quotes:
            continue
        ns = nv = 0
        for quote in quotes:
            qns, qnv, _ = resolution_policy(quote, chain, cfg)
            ns, nv = max(ns, qns), max(nv, qnv)
        nt = int(math.floor(cfg.price.nt * max(quotes[0].T, 1.0)))
        puts = [qt for qt in quotes if qt.side == PUT]
        k_ref = min((qt.K for qt in puts), default=min(qt.K for qt in quotes))
        tasks.append((ns * nv * nt, (idx, quotes, k_ref, ns, nv, nt)))

    def worker(task):
        idx, quotes, k_ref, ns, nv, nt = task
        T = quotes[0].T
        r = chain.rate_for(idx)
        terms = MarketTerms(S0=chain.S0, K=k_ref, T=T, r=r, q=chain.q)
        pcfg = replace(cfg.price, ns=ns, nv=nv, nt=nt)
        # the reference grid must cover every scaled evaluation point
        need = max(k_ref * chain.S0 / qt.K for qt in quotes)
        min_s_max = 1.1 * max(need, chain.S0)

        for level in range(0, MAX_ESCALATION + 1):
            use = pcfg if level == 0 else _escalated_config(pcfg, level)
            try:
                val = price_single(terms, grid_params, PUT, use,
                                   min_s_max=min_s_max, min_v_max=min_vmax)
                ivs = _extract_expiry_ivs(val, quotes, chain, k_ref, r, dist)
            except (NeedsReprice, ImpliedVolError, _BandError):
                continue
            return ivs, level
        raise EvaluationError(
            f"expiry {chain.expiries[idx]} failed at escalation cap")

    out = _map(tasks, worker, cfg.threads)
    ivs = np.concatenate([o[0] for o in out])
    repriced = sum(1 for o in out if o[1] > 0)
    return _finish(ivs, chain, repriced, t_start, len(tasks))


def _extract_expiry_ivs(val: Valuation, quotes, chain, k_ref, r, dist):
    """Scaled put prices for every strike, calls via parity, then IVs."""
    ivs = np.empty(len(quotes))
    for n, quote in enumerate(quotes):
        s_eval = k_ref * chain.S0 / quote.K
        if dist is None:
            put_scaled = _plain_value(val, s_eval)
        else:
            put_scaled = _randomized_value(val, s_eval, dist)
        put_price = (quote.K / k_ref) * put_scaled
        terms = _quote_terms(quote, chain)
        if quote.side == CALL:
            price = (put_price + chain.S0 * math.exp(-chain.q * quote.T)
                     - quote.K * math.exp(-r * quote.T))
        else:
            price = put_price
        _check_band(price, terms, quote.side)
        ivs[n] = implied_vol(price, chain.S0, quote.K, quote.T, r, chain.q,
                             quote.side)
    return ivs


def _finish(ivs, chain, repriced, t_start, n_solves) -> EvalReport:
    market = np.array([qt.market_iv for qt in chain.quotes])
    rmse = float(np.sqrt(np.mean((ivs - market) ** 2)))
    return EvalReport(rmse=rmse, model_ivs=ivs, reprice_count=repriced,
                      wall_time=time.perf_counter() - t_start,
                      n_solves=n_solves)


def evaluate(params: ModelParams, chain: OptionChain, cfg: EvalConfig,
             dist=None, model_iv_fn=None) -> EvalReport:
    """Dispatch on cfg.approach; model_iv_fn is a test seam bypassing the PDE."""
    if model_iv_fn is not None:
        t0 = time.perf_counter()
        ivs = np.array([model_iv_fn(qt) for qt in chain.quotes])
        return _finish(ivs, chain, 0, t0, 0)
    if cfg.approach == 1:
        return evaluate_approach1(params, chain, cfg, dist)
    return evaluate_approach2(params, chain, cfg, dist)
