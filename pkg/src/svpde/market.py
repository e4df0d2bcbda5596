"""Option-chain data model, chain-file ingestion and Black-Scholes utilities.

The chain file is a small CSV dialect:

    spot,2367.94
    valuation_date,2017-03-31
    dividend_yield,0.0197
    rate,<expiry YYYY-MM-DD>,<r>          (one line per expiry)
    quote,<expiry YYYY-MM-DD>,<strike>,<iv_percent>

Quote side is not stored: out-of-the-money convention, puts when K < S0
and calls otherwise.  Year fractions are ACT/365 from the valuation date.
"""

from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

CALL = "call"
PUT = "put"

DAY_COUNT = 365.0


class ChainParseError(ValueError):
    pass


class ImpliedVolError(ValueError):
    """Price outside the no-arbitrage band; IV cannot be computed."""


@dataclass(frozen=True)
class OptionQuote:
    expiry_index: int
    expiry: str
    T: float
    K: float
    side: str
    market_iv: float

    def __post_init__(self):
        if self.side not in (CALL, PUT):
            raise ValueError(f"bad side {self.side!r}")


@dataclass
class OptionChain:
    S0: float
    valuation_date: str
    q: float
    expiries: list          # expiry date strings, ascending
    rates: list             # r per expiry, same order
    quotes: list = field(default_factory=list)  # expiry-major, strike-minor

    @property
    def n_expiries(self) -> int:
        return len(self.expiries)

    def rate_for(self, expiry_index: int) -> float:
        return self.rates[expiry_index]

    def quotes_for_expiry(self, expiry_index: int) -> list:
        return [qt for qt in self.quotes if qt.expiry_index == expiry_index]


def _year_fraction(valuation: str, expiry: str) -> float:
    d0 = _dt.date.fromisoformat(valuation)
    d1 = _dt.date.fromisoformat(expiry)
    days = (d1 - d0).days
    if days <= 0:
        raise ChainParseError(f"expiry {expiry} not after valuation {valuation}")
    return days / DAY_COUNT


def load_chain(path) -> OptionChain:
    """Parse a chain file; raises ChainParseError with the offending row number."""
    spot = None
    valuation = None
    div_yield = None
    rates = {}
    raw_quotes = []

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            tag = parts[0]
            try:
                if tag == "spot":
                    spot = float(parts[1])
                elif tag == "valuation_date":
                    valuation = parts[1]
                elif tag == "dividend_yield":
                    div_yield = float(parts[1])
                elif tag == "rate":
                    rates[parts[1]] = float(parts[2])
                elif tag == "quote":
                    expiry, strike, ivpct = parts[1], float(parts[2]), parts[3]
                    if ivpct == "":
                        continue  # blank IV cell: quote not present
                    raw_quotes.append((expiry, strike, float(ivpct)))
                else:
                    raise ChainParseError(f"row {lineno}: unknown tag {tag!r}")
            except (IndexError, ValueError) as exc:
                if isinstance(exc, ChainParseError):
                    raise
                raise ChainParseError(f"row {lineno}: malformed line {line!r}") from exc

    if spot is None or valuation is None or div_yield is None:
        raise ChainParseError("missing spot / valuation_date / dividend_yield header")

    expiries = sorted(rates.keys())
    index_of = {e: i for i, e in enumerate(expiries)}

    quotes = []
    for expiry, strike, ivpct in raw_quotes:
        if expiry not in index_of:
            raise ChainParseError(f"quote references expiry {expiry} with no rate line")
        T = _year_fraction(valuation, expiry)
        side = PUT if strike < spot else CALL
        quotes.append(OptionQuote(index_of[expiry], expiry, T, strike, side,
                                  ivpct / 100.0))

    quotes.sort(key=lambda qt: (qt.expiry_index, qt.K))
    for idx in range(len(expiries)):
        ks = [qt.K for qt in quotes if qt.expiry_index == idx]
        if len(set(ks)) != len(ks):
            raise ChainParseError(f"duplicate strikes for expiry {expiries[idx]}")

    return OptionChain(S0=spot, valuation_date=valuation, q=div_yield,
                       expiries=expiries, rates=[rates[e] for e in expiries],
                       quotes=quotes)


def chain_a_path() -> str:
    """Filesystem path of the bundled SPX chain (Mar 31, 2017, 246 quotes)."""
    return str(resources.files("svpde").joinpath("data/chain_a.csv"))


def load_chain_a() -> OptionChain:
    return load_chain(chain_a_path())


def bsm_price(S0: float, K: float, T: float, r: float, q: float,
              sigma: float, side: str) -> float:
    """Standard lognormal (Black-Scholes-Merton) price with dividend yield."""
    if sigma <= 0.0 or T <= 0.0:
        fwd = S0 * math.exp(-q * T) - K * math.exp(-r * T)
        return max(fwd, 0.0) if side == CALL else max(-fwd, 0.0)
    srt = sigma * math.sqrt(T)
    d1 = (math.log(S0 / K) + (r - q + 0.5 * sigma * sigma) * T) / srt
    d2 = d1 - srt
    if side == CALL:
        return S0 * math.exp(-q * T) * ndtr(d1) - K * math.exp(-r * T) * ndtr(d2)
    return K * math.exp(-r * T) * ndtr(-d2) - S0 * math.exp(-q * T) * ndtr(-d1)


SIGMA_LO = 1e-4
SIGMA_HI = 5.0


def implied_vol(price: float, S0: float, K: float, T: float, r: float,
                q: float, side: str) -> float:
    """Invert BSM for sigma on [1e-4, 5] by bracketed root-find.

    The price must lie strictly inside the no-arbitrage band
    (discounted intrinsic, forward cap); anything else raises
    ImpliedVolError, which is what a negative or zero model price
    surfaces as during calibration.
    """
    disc_S = S0 * math.exp(-q * T)
    disc_K = K * math.exp(-r * T)
    if side == CALL:
        lo, hi = max(disc_S - disc_K, 0.0), disc_S
    else:
        lo, hi = max(disc_K - disc_S, 0.0), disc_K
    if not (lo < price < hi):
        raise ImpliedVolError(
            f"price {price} outside no-arbitrage band ({lo}, {hi}) "
            f"for {side} K={K} T={T}")

    def f(sig):
        return bsm_price(S0, K, T, r, q, sig, side) - price

    f_lo, f_hi = f(SIGMA_LO), f(SIGMA_HI)
    if f_lo > 0.0 or f_hi < 0.0:
        raise ImpliedVolError(
            f"implied vol outside [{SIGMA_LO}, {SIGMA_HI}] for {side} "
            f"K={K} T={T} price={price}")
    return brentq(f, SIGMA_LO, SIGMA_HI, xtol=1e-14, maxiter=200)
