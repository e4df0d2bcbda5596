"""Finite-difference PDE pricing engine and option-chain calibrator for
power-law stochastic volatility models (GARCH diffusion, Heston, and the
family in between)."""

from .models import GARCH, HESTON, POWER, MarketTerms, ModelParams, ParamBounds
from .market import CALL, PUT, OptionChain, OptionQuote, bsm_price, implied_vol
from .market import load_chain, load_chain_a, chain_a_path
from .pricer import PriceConfig, Valuation, price_robust, price_single
from .vol_bounds import FPConfig, StationaryDist, choose_vmax, critical_point_fp
from .vol_bounds import stationary_quantile

__version__ = "0.1.0"
