"""Command-line front door: price, calibrate, critical-point, bench-schemes.

Scalar results go to JSON (with a manifest echoing the resolved
configuration), curves to CSV.  Exit codes: 0 ok, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, replace

import numpy as np
import scipy

from . import __version__, march
from .calibrate import (CalibConfig, CalibrationError, ModelSpec, calibrate,
                        calibrate_global, temporal_re_params)
from .grid import GridError
from .market import CALL, PUT, ChainParseError, ImpliedVolError, load_chain
from .models import GARCH, HESTON, POWER, MarketTerms, ModelParams
from .objective import EvalConfig, EvaluationError, evaluate
from .pricer import PriceConfig, PricingError, price_robust
from .vol_bounds import (FPConfig, VolBoundError, choose_vmax,
                         critical_point_fp, stationary_quantile_power)

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_NUMERICAL_ERRORS = (PricingError, EvaluationError, CalibrationError,
                     VolBoundError, march.MarchError, GridError,
                     ImpliedVolError)


class ConfigError(ValueError):
    pass


def _manifest(args, t_start) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    return {
        "config": cfg,
        "seed": getattr(args, "seed", 0),
        "versions": {"svpde": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": sys.version.split()[0]},
        "wall_time_s": round(time.perf_counter() - t_start, 3),
    }


def _write_json(args, payload: dict):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def _parse_start(s: str) -> dict:
    vals = [float(tok) for tok in s.split(",")]
    if len(vals) == 5:
        names = ("v0", "vbar", "kappa", "xi", "rho")
    elif len(vals) == 6:
        names = ("v0", "vbar", "kappa", "xi", "rho", "p")
    elif len(vals) == 8:
        names = ("v0", "vbar", "kappa", "xi", "rho", "p", "alpha", "beta")
    else:
        raise ConfigError("--start needs 5, 6 or 8 comma-separated values")
    return dict(zip(names, vals))


def _model_spec(args) -> ModelSpec:
    fixed = {}
    if getattr(args, "fix_rho", None) is not None:
        fixed["rho"] = args.fix_rho
    family = args.model
    p = None
    if family == GARCH:
        p = 1.0
    elif family == HESTON:
        p = 0.5
    elif family == POWER:
        p = args.p  # None lets the optimizer fit it
    else:
        raise ConfigError(f"unknown model {family!r}")
    return ModelSpec(family=family, p=p,
                     randomized=bool(getattr(args, "randomized", False)),
                     fixed=fixed)


def _price_config(args) -> PriceConfig:
    return PriceConfig(scheme=args.scheme, ns=args.ns, nv=args.nv, nt=args.nt,
                       spatial_re=args.spatial_re == "on",
                       log_form=bool(args.log_form),
                       safety_factor=args.safety_factor)


def _params_from_args(args) -> ModelParams:
    start = _parse_start(args.start)
    p = {"garch": 1.0, "heston": 0.5}.get(args.model, start.get("p", args.p))
    if p is None:
        raise ConfigError("power model needs --p or a 6-value --start")
    return ModelParams(v0=start["v0"], vbar=start["vbar"],
                       kappa=start["kappa"], xi=start["xi"],
                       rho=start["rho"], p=p)


def cmd_price(args) -> int:
    t0 = time.perf_counter()
    params = _params_from_args(args)
    if args.chain:
        chain = load_chain(args.chain)
        s0, q = chain.S0, chain.q
        idx = args.expiry_index
        if not (0 <= idx < chain.n_expiries):
            raise ConfigError(f"--expiry-index out of range 0..{chain.n_expiries - 1}")
        quotes = chain.quotes_for_expiry(idx)
        T, r = quotes[0].T, chain.rate_for(idx)
    else:
        s0, q, T, r = args.spot, args.q, args.t, args.r
        if None in (s0, T, r, q):
            raise ConfigError("--price needs --chain or all of --spot/--t/--r/--q")
    terms = MarketTerms(S0=s0, K=args.strike, T=T, r=r, q=q)
    val = price_robust(terms, params, args.side, _price_config(args))
    _write_json(args, {
        "price": val.price,
        "price_fine": val.price_fine,
        "price_coarse": val.price_coarse,
        "error_estimate": val.error_estimate,
        "flags": val.flags,
        "manifest": _manifest(args, t0),
    })
    return 0


def cmd_calibrate(args) -> int:
    t0 = time.perf_counter()
    chain = load_chain(args.chain)
    if not chain.quotes:
        raise ConfigError("chain has no quotes")
    spec = _model_spec(args)
    eval_cfg = EvalConfig(approach=args.approach, price=_price_config(args),
                          threads=args.threads)
    start = _parse_start(args.start) if args.start else None
    calib_cfg = CalibConfig(optimizer=args.optimizer, start=start,
                            seed=args.seed, max_evals=args.max_evals)
    run = calibrate_global if args.optimizer == "de" else calibrate

    if args.temporal_re:
        nt_c, nt_f = (int(tok) for tok in args.temporal_re.split(","))
        res_c = run(chain, spec, calib_cfg, _with_nt(eval_cfg, nt_c))
        warm = replace(calib_cfg, start=dict(res_c.values))
        res = run(chain, spec, warm, _with_nt(eval_cfg, nt_f))
        names = list(res.values.keys())
        vec = temporal_re_params(res_c.vector(names), res.vector(names),
                                 nt_c, nt_f)
        fitted = dict(zip(names, (float(x) for x in vec)))
    else:
        res = run(chain, spec, calib_cfg, eval_cfg)
        fitted = {k: float(v) for k, v in res.values.items()}

    if args.out_csv:
        _write_iv_csv(args.out_csv, chain, res)
    _write_json(args, {
        "fitted": fitted,
        "rmse_iv": res.rmse,
        "evaluations": res.evaluations,
        "converged": res.converged,
        "manifest": _manifest(args, t0),
    })
    return 0


def _with_nt(eval_cfg: EvalConfig, nt: int) -> EvalConfig:
    return replace(eval_cfg, price=replace(eval_cfg.price, nt=nt))


def _write_iv_csv(path, chain, res):
    ivs = res.report.model_ivs if res.report is not None else None
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("expiry,strike,market_iv,model_iv\n")
        for n, qt in enumerate(chain.quotes):
            model = ivs[n] if ivs is not None else math.nan
            fh.write(f"{qt.expiry},{qt.K},{qt.market_iv},{model}\n")


def cmd_critical_point(args) -> int:
    t0 = time.perf_counter()
    params = _params_from_args(args)
    fp_cfg = FPConfig(nx=args.nx, nt=args.nt_fp, q=1.0 - args.tail)
    res = critical_point_fp(params, params.v0, args.t, fp_cfg)
    vmax = choose_vmax(params, args.t, q=1.0 - args.tail, cfg=fp_cfg)
    stat = stationary_quantile_power(params, 1.0 - args.tail)
    _write_json(args, {
        "fp_quantile": res.value,
        "fp_fallback": res.fallback,
        "fp_mass": res.mass,
        "stationary_quantile": stat,
        "v_max": vmax.value,
        "manifest": _manifest(args, t0),
    })
    return 0


def cmd_bench_schemes(args) -> int:
    t0 = time.perf_counter()
    chain = load_chain(args.chain)
    params = _params_from_args(args)
    nt_list = [int(tok) for tok in args.nt_list.split(",")]
    schemes = args.schemes.split(",")
    for s in schemes:
        if s not in march.SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}")

    base = _price_config(args)
    eval_cfg = EvalConfig(approach=1, price=base, threads=args.threads)

    ref_cfg = _with_nt(replace(eval_cfg,
                               price=replace(base, scheme=march.BDF3)),
                       args.benchmark_nt)
    ref = _price_chain(params, chain, ref_cfg)

    rows = []
    for scheme in schemes:
        for nt in nt_list:
            cfg = _with_nt(replace(eval_cfg,
                                   price=replace(base, scheme=scheme)), nt)
            t1 = time.perf_counter()
            prices = _price_chain(params, chain, cfg)
            wall = time.perf_counter() - t1
            err = float(np.sqrt(np.mean(((prices - ref) / ref) ** 2)))
            rows.append((scheme, nt, err, wall))

    out = args.out or "bench_schemes.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("scheme,nt,rmse_rel_error,wall_time_s\n")
        for scheme, nt, err, wall in rows:
            fh.write(f"{scheme},{nt},{err},{wall:.3f}\n")
    with open(out + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(_manifest(args, t0), fh, indent=2, sort_keys=True)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def _price_chain(params, chain, eval_cfg) -> np.ndarray:
    """Approach-I prices for every quote (resolution policy applied)."""
    from .objective import _map, _quote_terms, _robust_quote_price, resolution_policy

    tasks = []
    for quote in chain.quotes:
        ns, nv, nt = resolution_policy(quote, chain, eval_cfg)
        tasks.append((ns * nv * nt, (quote, ns, nv, nt)))

    def worker(task):
        quote, ns, nv, nt = task
        pcfg = replace(eval_cfg.price, ns=ns, nv=nv, nt=nt)
        price, _, _ = _robust_quote_price(_quote_terms(quote, chain), params,
                                          quote.side, pcfg, None, None)
        return price

    return np.array(_map(tasks, worker, eval_cfg.threads))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="svpde",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, benchmark=False):
        p.add_argument("--model", default="garch",
                       choices=[GARCH, HESTON, POWER])
        p.add_argument("--p", type=float, default=None)
        p.add_argument("--scheme", default=march.HV1, choices=march.SCHEMES)
        p.add_argument("--ns", type=int, default=100)
        p.add_argument("--nv", type=int, default=50)
        p.add_argument("--nt", type=int, default=50)
        p.add_argument("--spatial-re", default="on", choices=["on", "off"])
        p.add_argument("--log-form", action="store_true")
        p.add_argument("--safety-factor", type=int, default=2 if benchmark else 1,
                       choices=[1, 2, 3])
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None)
        p.add_argument("--start",
                       default="0.05,0.05,5,5,-0.7",
                       help="v0,vbar,kappa,xi,rho[,p[,alpha,beta]]")

    p = sub.add_parser("price", help="value one option")
    common(p)
    p.add_argument("--chain", default=None)
    p.add_argument("--expiry-index", type=int, default=0)
    p.add_argument("--strike", type=float, required=True)
    p.add_argument("--side", default=CALL, choices=[CALL, PUT])
    p.add_argument("--spot", type=float, default=None)
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--q", type=float, default=None)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("calibrate", help="fit model parameters to a chain")
    common(p)
    p.add_argument("--chain", required=True)
    p.add_argument("--approach", type=int, default=2, choices=[1, 2])
    p.add_argument("--optimizer", default="nm", choices=["nm", "de"])
    p.add_argument("--randomized", action="store_true")
    p.add_argument("--fix-rho", type=float, default=None)
    p.add_argument("--temporal-re", default=None, metavar="NTC,NTF")
    p.add_argument("--max-evals", type=int, default=2000)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_calibrate, start=None)

    p = sub.add_parser("critical-point", help="v-grid truncation quantiles")
    common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--nx", type=int, default=800)
    p.add_argument("--nt-fp", type=int, default=50)
    p.add_argument("--tail", type=float, default=2.5e-6,
                   help="1 - q tail mass")
    p.set_defaults(func=cmd_critical_point)

    p = sub.add_parser("bench-schemes", help="temporal convergence benchmark")
    common(p, benchmark=True)
    p.add_argument("--chain", required=True)
    p.add_argument("--schemes", default="hv1,hv1d,hv2,mcs,bdf3")
    p.add_argument("--nt-list", default="25,50,100,200")
    p.add_argument("--benchmark-nt", type=int, default=12800)
    p.set_defaults(func=cmd_bench_schemes)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    try:
        return args.func(args)
    except (ConfigError, ChainParseError, FileNotFoundError, ValueError) as exc:
        if isinstance(exc, _NUMERICAL_ERRORS):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
