"""Box-constrained RMSE_IV minimization over model parameters.

The local optimizer is Nelder-Mead on box-scaled coordinates (each
parameter mapped to [0, 1] over its bounds, out-of-box simplex points
projected back); the global check is Differential Evolution (rand/1/bin).
Both are deterministic given the configuration.  Temporal Richardson
extrapolation on fitted parameters combines two calibrations at nearby NT.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import differential_evolution, minimize

from .market import OptionChain
from .models import GARCH, HESTON, POWER, ModelParams, ParamBounds
from .objective import EvalConfig, EvalReport, evaluate
from .randomized import InitDistribution

NELDER_MEAD = "nm"
DIFF_EVOLUTION = "de"

DEFAULT_START = {
    "v0": 0.05, "vbar": 0.05, "kappa": 5.0, "xi": 5.0, "rho": -0.7,
    "p": 0.75, "alpha": 1.5, "beta": 0.01,
}


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Which member of the model family to fit.

    p = None on the power family lets the optimizer fit the exponent;
    `fixed` pins named parameters (e.g. {"rho": -0.8}) out of the search.
    """

    family: str = GARCH
    p: float = None
    randomized: bool = False
    fixed: dict = field(default_factory=dict)

    def power(self) -> float:
        if self.family == GARCH:
            return 1.0
        if self.family == HESTON:
            return 0.5
        return self.p  # may be None -> fitted

    def param_names(self) -> tuple:
        names = [] if self.randomized else ["v0"]
        names += ["vbar", "kappa", "xi", "rho"]
        if self.family == POWER and self.p is None:
            names.append("p")
        if self.randomized:
            names += ["alpha", "beta"]
        return tuple(n for n in names if n not in self.fixed)


@dataclass(frozen=True)
class CalibConfig:
    optimizer: str = NELDER_MEAD
    start: dict = None              # overrides DEFAULT_START entries
    bounds: ParamBounds = field(default_factory=ParamBounds)
    f_tol: float = 1e-6             # objective spread tolerance
    x_tol: float = 1e-5             # parameter tolerance, box-relative
    max_evals: int = 2000
    seed: int = 0
    keep_trace: bool = False


@dataclass
class CalibrationResult:
    params: ModelParams
    dist: InitDistribution = None   # randomized runs only
    values: dict = None             # fitted name -> value
    rmse: float = math.nan
    evaluations: int = 0
    converged: bool = False
    trace: list = None
    report: EvalReport = None
    wall_time: float = 0.0

    def vector(self, names=("v0", "vbar", "kappa", "xi", "rho")) -> np.ndarray:
        return np.array([self.values[n] for n in names])


def _build_model(spec: ModelSpec, values: dict):
    """(ModelParams, dist) from a fitted-value dict."""
    p = spec.power()
    if p is None:
        p = values["p"]
    dist = None
    if spec.randomized:
        dist = InitDistribution(values["alpha"], values["beta"])
        v0 = dist.median()
    else:
        v0 = values["v0"]
    params = ModelParams(v0=v0, vbar=values["vbar"], kappa=values["kappa"],
                         xi=values["xi"], rho=values["rho"], p=p)
    return params, dist


def _layout(spec: ModelSpec, cfg: CalibConfig):
    names = spec.param_names()
    box = cfg.bounds.as_dict()
    lo = np.array([box[n][0] for n in names])
    hi = np.array([box[n][1] for n in names])
    start_map = dict(DEFAULT_START)
    if cfg.start:
        start_map.update(cfg.start)
    z0 = np.array([(start_map[n] - box[n][0]) / (box[n][1] - box[n][0])
                   for n in names])
    if np.any(z0 < 0.0) or np.any(z0 > 1.0):
        raise CalibrationError("start vector outside parameter bounds")
    return names, lo, hi, z0


class _Objective:
    def __init__(self, chain, spec, cfg, eval_cfg):
        self.chain = chain
        self.spec = spec
        self.cfg = cfg
        self.eval_cfg = eval_cfg
        self.names, self.lo, self.hi, self.z0 = _layout(spec, cfg)
        self.count = 0
        self.best = (math.inf, None, None)
        self.trace = [] if cfg.keep_trace else None

    def values_from_z(self, z) -> dict:
        x = self.lo + np.clip(np.asarray(z, dtype=float), 0.0, 1.0) * (self.hi - self.lo)
        values = dict(zip(self.names, x))
        values.update(self.spec.fixed)
        if self.spec.family == POWER and self.spec.p is not None:
            values["p"] = self.spec.p
        return values

    def __call__(self, z) -> float:
        values = self.values_from_z(z)
        params, dist = _build_model(self.spec, values)
        report = evaluate(params, self.chain, self.eval_cfg, dist=dist)
        self.count += 1
        if report.rmse < self.best[0]:
            self.best = (report.rmse, values, report)
        if self.trace is not None:
            self.trace.append((values, report.rmse))
        return report.rmse


def calibrate(chain: OptionChain, spec: ModelSpec = None,
              calib_cfg: CalibConfig = None,
              eval_cfg: EvalConfig = None) -> CalibrationResult:
    """Fit the model to the chain; deterministic given start and configs."""
    spec = spec or ModelSpec()
    calib_cfg = calib_cfg or CalibConfig()
    eval_cfg = eval_cfg or EvalConfig()
    obj = _Objective(chain, spec, calib_cfg, eval_cfg)
    t0 = time.perf_counter()

    if calib_cfg.optimizer == DIFF_EVOLUTION:
        return _run_de(obj, calib_cfg, t0)

    res = minimize(obj, obj.z0, method="Nelder-Mead",
                   bounds=[(0.0, 1.0)] * obj.z0.size,
                   options={"xatol": calib_cfg.x_tol,
                            "fatol": calib_cfg.f_tol,
                            "maxfev": calib_cfg.max_evals,
                            "disp": False})
    return _result(obj, res.x, bool(res.success), t0)


def calibrate_global(chain: OptionChain, spec: ModelSpec = None,
                     calib_cfg: CalibConfig = None,
                     eval_cfg: EvalConfig = None) -> CalibrationResult:
    spec = spec or ModelSpec()
    calib_cfg = replace(calib_cfg or CalibConfig(), optimizer=DIFF_EVOLUTION)
    return calibrate(chain, spec, calib_cfg, eval_cfg)


def _run_de(obj: _Objective, cfg: CalibConfig, t0: float) -> CalibrationResult:
    dim = obj.z0.size
    pop = 15
    maxiter = max(1, cfg.max_evals // (pop * dim) - 1)
    res = differential_evolution(
        obj, bounds=[(0.0, 1.0)] * dim, strategy="rand1bin", popsize=pop,
        mutation=0.7, recombination=0.9, seed=cfg.seed, polish=False,
        maxiter=maxiter, tol=cfg.f_tol, init="latinhypercube")
    return _result(obj, res.x, bool(res.success), t0)


def _result(obj: _Objective, z, converged: bool, t0: float) -> CalibrationResult:
    if obj.best[1] is None:
        obj(z)
    # report the best evaluated point (optimizers may end slightly off it)
    best_rmse, best_values, best_report = obj.best
    params, dist = _build_model(obj.spec, best_values)
    return CalibrationResult(params=params, dist=dist, values=dict(best_values),
                             rmse=best_rmse, evaluations=obj.count,
                             converged=converged, trace=obj.trace,
                             report=best_report,
                             wall_time=time.perf_counter() - t0)


def temporal_re_params(coarse: np.ndarray, fine: np.ndarray,
                       nt_coarse: int, nt_fine: int) -> np.ndarray:
    """Richardson extrapolation of fitted parameters from two NT levels.

    Second-order schemes give p(NT) = p* + c/NT^2, so
    p* ~= p_f + (p_f - p_c) / ((NT_f/NT_c)^2 - 1).  Requires NT_c >= 30 and
    NT_f/NT_c >= 1.2 for the pair to sit in the asymptotic range.
    """
    coarse = np.asarray(coarse, dtype=float)
    fine = np.asarray(fine, dtype=float)
    if nt_coarse < 30:
        raise CalibrationError("temporal RE needs NT_coarse >= 30")
    ratio = nt_fine / nt_coarse
    if ratio < 1.2:
        raise CalibrationError("temporal RE needs NT_fine/NT_coarse >= 1.2")
    return fine + (fine - coarse) / (ratio ** 2 - 1.0)
