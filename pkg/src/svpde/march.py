"""Time-marching engines: HV and MCS ADI schemes, Rannacher damping, BDF3.

The march runs forward in time-to-maturity from the payoff at t = 0 to the
valuation at t = T on a uniform step dt = T/NT.  ADI sweeps reuse
per-direction tridiagonal factorizations built once per march; BDF3 and the
implicit-Euler starts factor the full sparse matrix (factorizations reused
across their steps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .discretize import SplitOperator

HV1 = "hv1"
HV1D = "hv1d"
HV2 = "hv2"
MCS = "mcs"
BDF3 = "bdf3"

SCHEMES = (HV1, HV1D, HV2, MCS, BDF3)

THETA = {
    HV1: 1.0 - math.sqrt(2.0) / 2.0,
    HV1D: 1.0 - math.sqrt(2.0) / 2.0,
    HV2: 0.5 + math.sqrt(3.0) / 6.0,
    MCS: 1.0 / 3.0,
}


class MarchError(RuntimeError):
    pass


@dataclass
class MarchState:
    v: np.ndarray
    v_prev: np.ndarray = None
    v_prev2: np.ndarray = None
    step: int = 0
    dt: float = 0.0


# ---------------------------------------------------------------------------
# linear-solve kernels (spec surface)


@dataclass
class TridiagFactor:
    m1: np.ndarray
    ueff: np.ndarray
    w: np.ndarray
    den: np.ndarray
    extra: np.ndarray


def tridiagonal_factor(lo, di, up, extra=None) -> TridiagFactor:
    """Factor batched tridiagonal systems (B, N) along the last axis.

    `extra` is an optional (B,) coefficient of x[2] in row 0 (the v = 0 row
    of A2 carries one); None means plain tridiagonal.
    """
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    di = np.atleast_2d(np.asarray(di, dtype=float))
    up = np.atleast_2d(np.asarray(up, dtype=float))
    if extra is None:
        extra = np.zeros(di.shape[0])
    else:
        extra = np.atleast_1d(np.asarray(extra, dtype=float))
    if np.any(di[:, 0] == 0.0):
        raise MarchError("zero pivot in tridiagonal factorization")
    m1, ueff, w, den = kernels.factor_axis1_arrow(
        np.ascontiguousarray(lo), np.ascontiguousarray(di),
        np.ascontiguousarray(up), np.ascontiguousarray(extra))
    if np.any(den == 0.0) or not np.all(np.isfinite(den)):
        raise MarchError("zero pivot in tridiagonal factorization")
    return TridiagFactor(m1, ueff, w, den, extra)


def tridiagonal_solve(fact: TridiagFactor, rhs) -> np.ndarray:
    rhs = np.atleast_2d(np.asarray(rhs, dtype=float))
    out = np.empty_like(rhs)
    kernels.solve_axis1_arrow(fact.m1, fact.ueff, fact.w, fact.den,
                              fact.extra, np.ascontiguousarray(rhs), out)
    return out


def sparse_factor(mat):
    """Direct sparse LU, computed once and reused across solves."""
    try:
        return spla.splu(sp.csc_matrix(mat))
    except RuntimeError as exc:
        raise MarchError(f"sparse factorization failed: {exc}") from exc


def sparse_solve(fact, rhs: np.ndarray) -> np.ndarray:
    return fact.solve(rhs)


# ---------------------------------------------------------------------------
# ADI marcher


class Marcher:
    """Precomputes factorizations for one (operator, scheme, NT, T) march."""

    def __init__(self, op: SplitOperator, scheme: str, nt: int, T: float):
        if scheme not in SCHEMES:
            raise MarchError(f"unknown scheme {scheme!r}")
        if nt < 1 or (scheme == BDF3 and nt < 3):
            raise MarchError(f"NT = {nt} too small for scheme {scheme}")
        self.op = op
        self.scheme = scheme
        self.nt = nt
        self.T = T
        self.dt = T / nt
        self._c = {k: np.ascontiguousarray(getattr(op, k)) for k in (
            "a1_lo", "a1_di", "a1_up", "a2_lo", "a2_di", "a2_up", "a2_e",
            "a0_c", "a0_xm", "a0_xp", "a0_vm", "a0_vp", "a0_pm", "a0_mp",
            "b0_r", "b0_q", "b1_r", "b1_q", "b2_r", "b2_q")}
        if scheme in THETA:
            self._build_adi_factors(THETA[scheme])
        self._full = None
        self._sparse_factors = {}

    def _build_adi_factors(self, theta: float):
        c = self._c
        td = theta * self.dt
        m1lo = -td * c["a1_lo"]
        m1di = 1.0 - td * c["a1_di"]
        m1up = -td * c["a1_up"]
        self._w1, self._den1 = kernels.factor_axis0(m1lo, m1di, m1up)
        self._up1 = m1up
        m2lo = -td * c["a2_lo"]
        m2di = 1.0 - td * c["a2_di"]
        m2up = -td * c["a2_up"]
        self._e2 = -td * c["a2_e"]
        self._m1, self._ueff, self._w2, self._den2 = kernels.factor_axis1_arrow(
            m2lo, m2di, m2up, self._e2)
        for arr in (self._den1, self._den2):
            if not np.all(np.isfinite(arr)) or np.any(arr == 0.0):
                raise MarchError("singular tridiagonal pivot in ADI factorization")

    def _full_matrix(self):
        if self._full is None:
            self._full = self.op.full_matrix()
        return self._full

    def _ie_factor(self, step: float):
        key = ("ie", step)
        if key not in self._sparse_factors:
            a = self._full_matrix()
            n = a.shape[0]
            self._sparse_factors[key] = sparse_factor(sp.identity(n) - step * a)
        return self._sparse_factors[key]

    def _b_flat(self, t: float) -> np.ndarray:
        return self.op.b(t).ravel()

    def _ie_substep(self, v: np.ndarray, t_new: float, step: float) -> np.ndarray:
        fact = self._ie_factor(step)
        rhs = v.ravel() + step * self._b_flat(t_new)
        return fact.solve(rhs).reshape(v.shape)

    def _adi_step(self, v: np.ndarray, n: int) -> np.ndarray:
        t0 = (n - 1) * self.dt
        t1 = n * self.dt
        r, q = self.op.terms.r, self.op.terms.q
        args = (v, THETA[self.scheme], self.dt,
                math.exp(-r * t0), math.exp(-q * t0),
                math.exp(-r * t1), math.exp(-q * t1),
                self._c["a1_lo"], self._c["a1_di"], self._c["a1_up"],
                self._c["a2_lo"], self._c["a2_di"], self._c["a2_up"],
                self._c["a2_e"],
                self._c["a0_c"], self._c["a0_xm"], self._c["a0_xp"],
                self._c["a0_vm"], self._c["a0_vp"], self._c["a0_pm"],
                self._c["a0_mp"],
                self._c["b0_r"], self._c["b0_q"], self._c["b1_r"],
                self._c["b1_q"], self._c["b2_r"], self._c["b2_q"],
                self._w1, self._den1, self._up1,
                self._m1, self._ueff, self._w2, self._den2, self._e2)
        if self.scheme == MCS:
            return kernels.mcs_step_kernel(*args)
        return kernels.hv_step_kernel(*args)

    def run(self, v0: np.ndarray) -> np.ndarray:
        v = np.ascontiguousarray(v0, dtype=float)
        if self.scheme == BDF3:
            return self._run_bdf3(v)
        start = 1
        if self.scheme == HV1D:
            v = self._ie_substep(v, 0.5 * self.dt, 0.5 * self.dt)
            v = self._ie_substep(v, self.dt, 0.5 * self.dt)
            start = 2
        for n in range(start, self.nt + 1):
            v = self._adi_step(v, n)
        return v

    def _run_bdf3(self, v0: np.ndarray) -> np.ndarray:
        dt = self.dt
        shape = v0.shape
        a = self._full_matrix()
        n_unknown = a.shape[0]
        ident = sp.identity(n_unknown)
        fact_q = sparse_factor(ident - 0.25 * dt * a)
        fact_h = sparse_factor(ident - 0.5 * dt * a)
        fact_b2 = sparse_factor(1.5 * ident - dt * a)
        fact_b3 = sparse_factor((11.0 / 6.0) * ident - dt * a)

        v_flat = v0.ravel()
        fine = v_flat.copy()
        for k in range(1, 5):
            fine = fact_q.solve(fine + 0.25 * dt * self._b_flat(k * dt / 4.0))
        coarse = v_flat.copy()
        for k in range(1, 3):
            coarse = fact_h.solve(coarse + 0.5 * dt * self._b_flat(k * dt / 2.0))
        v1 = 2.0 * fine - coarse

        v2 = fact_b2.solve(2.0 * v1 - 0.5 * v_flat + dt * self._b_flat(2.0 * dt))

        older, old, cur = v_flat, v1, v2
        for n in range(3, self.nt + 1):
            rhs = 3.0 * cur - 1.5 * old + older / 3.0 + dt * self._b_flat(n * dt)
            older, old = old, cur
            cur = fact_b3.solve(rhs)
        return cur.reshape(shape)


# ---------------------------------------------------------------------------
# functional spec surface (one-shot helpers; Marcher is the hot path)


def hv_step(op: SplitOperator, state: MarchState, theta: float,
            t0: float, t1: float) -> np.ndarray:
    m = Marcher(op, HV1, 1, t1 - t0)
    m._build_adi_factors(theta)
    r, q = op.terms.r, op.terms.q
    return kernels.hv_step_kernel(
        np.ascontiguousarray(state.v, dtype=float), theta, t1 - t0,
        math.exp(-r * t0), math.exp(-q * t0),
        math.exp(-r * t1), math.exp(-q * t1),
        m._c["a1_lo"], m._c["a1_di"], m._c["a1_up"],
        m._c["a2_lo"], m._c["a2_di"], m._c["a2_up"], m._c["a2_e"],
        m._c["a0_c"], m._c["a0_xm"], m._c["a0_xp"], m._c["a0_vm"],
        m._c["a0_vp"], m._c["a0_pm"], m._c["a0_mp"],
        m._c["b0_r"], m._c["b0_q"], m._c["b1_r"], m._c["b1_q"],
        m._c["b2_r"], m._c["b2_q"],
        m._w1, m._den1, m._up1, m._m1, m._ueff, m._w2, m._den2, m._e2)


def mcs_step(op: SplitOperator, state: MarchState, theta: float,
             t0: float, t1: float) -> np.ndarray:
    m = Marcher(op, MCS, 1, t1 - t0)
    m._build_adi_factors(theta)
    r, q = op.terms.r, op.terms.q
    return kernels.mcs_step_kernel(
        np.ascontiguousarray(state.v, dtype=float), theta, t1 - t0,
        math.exp(-r * t0), math.exp(-q * t0),
        math.exp(-r * t1), math.exp(-q * t1),
        m._c["a1_lo"], m._c["a1_di"], m._c["a1_up"],
        m._c["a2_lo"], m._c["a2_di"], m._c["a2_up"], m._c["a2_e"],
        m._c["a0_c"], m._c["a0_xm"], m._c["a0_xp"], m._c["a0_vm"],
        m._c["a0_vp"], m._c["a0_pm"], m._c["a0_mp"],
        m._c["b0_r"], m._c["b0_q"], m._c["b1_r"], m._c["b1_q"],
        m._c["b2_r"], m._c["b2_q"],
        m._w1, m._den1, m._up1, m._m1, m._ueff, m._w2, m._den2, m._e2)


def rannacher_start(op: SplitOperator, v0: np.ndarray, dt: float) -> np.ndarray:
    """First time step as two implicit-Euler sub-steps of dt/2."""
    m = Marcher(op, HV1D, 2, 2 * dt)
    v = m._ie_substep(np.ascontiguousarray(v0, dtype=float), 0.5 * dt, 0.5 * dt)
    return m._ie_substep(v, dt, 0.5 * dt)


def bdf3_run(op: SplitOperator, v0: np.ndarray, nt: int, T: float) -> np.ndarray:
    """IE-Richardson start, BDF2 second step, BDF3 thereafter."""
    return Marcher(op, BDF3, nt, T).run(np.ascontiguousarray(v0, dtype=float))
