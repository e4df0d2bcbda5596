"""Truncated, sinh-stretched spatial grids aligned on the strike and v0.

Both axes use the inverse-hyperbolic-sine stretching
    node(u) = lo + (c - lo) * (1 + sinh(b*(u - a)) / sinh(b*a)),
with the cluster point c placed exactly on a node by rounding a.  The
v-axis additionally offers a hybrid construction: uniform spacing on
(0, 2*v0], sinh-stretched beyond, with the junction step matched by a
root-find.  Coarse/fine Richardson pairs reuse the coarse stretch
parameters at doubled index density so every coarse node is a fine node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .models import MarketTerms, ModelParams

B_S_DEFAULT = 4.5
B_V_DEFAULT = 8.5


class GridError(ValueError):
    pass


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _sinh_fraction_a(A: float, b: float) -> float:
    """Closed-form a so the stretch reaches the far end: node(1) = hi."""
    return math.log((A + math.exp(b)) / (A + math.exp(-b))) / (2.0 * b)


def _log_sinh(x: float) -> float:
    """log(sinh(x)) without overflow for large x."""
    if x > 20.0:
        return x - math.log(2.0) + math.log1p(-math.exp(-2.0 * x))
    return math.log(math.sinh(x))


@dataclass(frozen=True)
class Axis:
    nodes: np.ndarray
    cluster_index: int
    a: float
    b: float
    kind: str                     # "sinh_s" | "sinh_v" | "hybrid_v"
    n_input: int                  # requested point count (index density)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.nodes.size - 1

    @property
    def cluster_value(self) -> float:
        return float(self.nodes[self.cluster_index])

    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def refine(self) -> "Axis":
        """Doubled-density axis reusing this axis' final stretch parameters."""
        if self.kind == "sinh_s":
            m = self.meta
            return _sinh_axis_from_params(m["lo"], m["cluster"], self.a, self.b,
                                          2 * self.n_input, kind="sinh_s")
        if self.kind == "sinh_v":
            m = self.meta
            return _sinh_axis_from_params(0.0, m["cluster"], self.a, self.b,
                                          2 * self.n_input, kind="sinh_v",
                                          n_total=2 * self.n)
        if self.kind == "hybrid_v":
            return _hybrid_refine(self)
        raise GridError(f"cannot refine axis kind {self.kind}")


@dataclass(frozen=True)
class Grid2D:
    s_axis: Axis
    v_axis: Axis
    log_form: bool = False

    @property
    def nv_star(self) -> int:
        return self.v_axis.n

    @property
    def shape(self) -> tuple:
        # unknowns: i = 1..NS (left Dirichlet row eliminated), j = 0..NV*
        return (self.s_axis.n, self.v_axis.n + 1)


def s_bounds(params: ModelParams, terms: MarketTerms, log_form: bool = False,
             safety_factor: int = 1, alpha: float = 0.1):
    """Truncation limits of the asset axis.

    S form: S_min = 0 and S_max = exp(ln(max(K, S0)) + 5*sigma_est*sqrt(T))
    clamped into [1.5K, 20K], sigma_est = (sqrt(v0) + sqrt(vbar))/2, then
    multiplied by the safety factor.  Log form: X_min is
    ln(min(K, S0)) - 6*sigma_est*sqrt(T), pushed down to ln(alpha*K) if
    needed; X_max = ln(S_max).
    """
    if safety_factor not in (1, 2, 3):
        raise GridError("safety_factor must be 1, 2 or 3")
    sigma_est = 0.5 * (math.sqrt(params.v0) + math.sqrt(params.vbar))
    srt = sigma_est * math.sqrt(terms.T)
    K, S0 = terms.K, terms.S0
    raw = max(K, S0) * math.exp(5.0 * srt)
    s_max = min(max(raw, 1.5 * K), 20.0 * K) * safety_factor
    if not log_form:
        return 0.0, s_max
    x_min = math.log(min(K, S0)) - 6.0 * srt
    x_min = min(x_min, math.log(alpha * K))
    return x_min, math.log(s_max)


def _sinh_axis_from_params(lo, cluster, a, b, n_input, kind, n_total=None):
    """Evaluate the stretch with fixed (a, b); used directly by refine()."""
    n_total = n_input if n_total is None else n_total
    idx = np.arange(n_total + 1, dtype=float)
    nodes = lo + (cluster - lo) * (1.0 + np.sinh(b * (idx / n_input - a))
                                   / math.sinh(b * a))
    k_cluster = _round_half_up(a * n_input)
    nodes[0] = lo
    nodes[k_cluster] = cluster
    return Axis(nodes=nodes, cluster_index=k_cluster, a=a, b=b, kind=kind,
                n_input=n_input, meta={"lo": lo, "cluster": cluster})


def make_s_axis(K: float, s_min: float, s_max: float, ns: int,
                b_s: float = B_S_DEFAULT, mid_cell: bool = False) -> Axis:
    """Asset-axis nodes with the strike exactly on a grid point.

    With mid_cell=True the strike is instead centered between nodes
    (a = (i_K + 0.5)/NS); off by default.
    """
    if not (s_min < K < s_max):
        raise GridError(f"need s_min < K < s_max, got {s_min}, {K}, {s_max}")
    if ns < 8:
        raise GridError("ns must be >= 8")
    A = (s_max - K) / (K - s_min)
    a = _sinh_fraction_a(A, b_s)
    i_k = int(math.floor(a * ns))
    if i_k < 2 or i_k > ns - 2:
        raise GridError(f"strike too close to the boundary (i_K = {i_k}, NS = {ns})")
    a = (i_k + 0.5) / ns if mid_cell else i_k / ns
    idx = np.arange(ns + 1, dtype=float)
    nodes = s_min + (K - s_min) * (1.0 + np.sinh(b_s * (idx / ns - a))
                                   / math.sinh(b_s * a))
    nodes[0] = s_min
    if not mid_cell:
        nodes[i_k] = K
    return Axis(nodes=nodes, cluster_index=i_k, a=a, b=b_s, kind="sinh_s",
                n_input=ns, meta={"lo": s_min, "cluster": K})


def make_v_axis(v0: float, v_max: float, nv: int,
                b_v: float = B_V_DEFAULT) -> Axis:
    """Pure sinh v-axis from 0, clustered at v0, extended to reach v_max.

    N_v0 = max(round(a*NV), ceil(0.2*NV), 6) points are guaranteed below v0;
    nodes are appended past the requested NV until the last one reaches
    v_max, so the realized count NV* can exceed NV.
    """
    if v_max <= v0:
        raise GridError(f"v_max ({v_max}) must exceed v0 ({v0})")
    A = v_max / v0 - 1.0
    a = _sinh_fraction_a(A, b_v)
    n_v0 = max(_round_half_up(a * nv), math.ceil(0.2 * nv), 6)
    a = n_v0 / nv

    nodes = [0.0]
    j = 1
    sinh_ba = math.sinh(b_v * a)
    while True:
        vj = v0 * (1.0 + math.sinh(b_v * (j / nv - a)) / sinh_ba)
        nodes.append(vj)
        if vj >= v_max and j >= nv:
            break
        if j > 40 * nv:
            raise GridError("v-axis extension runaway; check v_max")
        j += 1
    nodes = np.asarray(nodes)
    nodes[0] = 0.0
    nodes[n_v0] = v0
    return Axis(nodes=nodes, cluster_index=n_v0, a=a, b=b_v, kind="sinh_v",
                n_input=nv, meta={"cluster": v0, "v_max": v_max})


def _match_first_step(r_nu: float, n_nu: int, dv_u: float) -> float:
    """Bisection for b so that R*sinh(b/N)/sinh(b) equals the uniform step."""

    def first_step(b):
        return r_nu * math.exp(_log_sinh(b / n_nu) - _log_sinh(b))

    lo, hi = 1e-8, 500.0
    if first_step(lo) < dv_u:
        raise GridError("hybrid v-axis root-find bracket failure "
                        "(uniform step exceeds mean stretched step)")
    if first_step(hi) > dv_u:
        raise GridError("hybrid v-axis root-find bracket failure (b too large)")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if first_step(mid) > dv_u:
            lo = mid
        else:
            hi = mid
        if abs(first_step(mid) / dv_u - 1.0) <= 1e-12:
            return mid
    return 0.5 * (lo + hi)


def _hybrid_axis_at_level(meta: dict, a: float, b: float, nv: int,
                          level: int) -> Axis:
    """Evaluate the native hybrid map at index density 2**level."""
    v0, v_max = meta["cluster"], meta["v_max"]
    n_v00, nv_star0, n_nu0 = meta["n_v00"], meta["nv_star0"], meta["n_nu0"]
    dv_u0, b_nu, r_nu = meta["dv_u0"], meta["b_nu"], meta["r_nu"]
    f = 2 ** level

    n_total = f * nv_star0
    junction = f * (2 * n_v00 - 1)      # index of the node at 2*v0 - dv_u0
    nodes = np.empty(n_total + 1)
    nodes[:junction + 1] = np.arange(junction + 1, dtype=float) * (dv_u0 / f)
    lam = np.arange(1, f * n_nu0 + 1, dtype=float) / f
    nodes[junction + 1:] = (2.0 * v0 - dv_u0
                            + r_nu * np.sinh(b_nu * lam / n_nu0)
                            / math.sinh(b_nu))
    nodes[0] = 0.0
    nodes[f * n_v00] = v0
    nodes[n_total] = v_max
    return Axis(nodes=nodes, cluster_index=f * n_v00, a=a, b=b,
                kind="hybrid_v", n_input=f * nv,
                meta=dict(meta, level=level))


def make_hybrid_v_axis(v0: float, v_max: float, nv: int,
                       b_v: float = B_V_DEFAULT) -> Axis:
    """Hybrid v-axis: uniform on (0, 2*v0], sinh-stretched up to v_max.

    The pure construction fixes N_v0 and NV*; the uniform step is
    v0 / N_v0 and the stretch parameter is root-found so the first
    non-uniform step matches it.
    """
    base = make_v_axis(v0, v_max, nv, b_v)
    n_v0 = base.cluster_index
    nv_star = base.n
    dv_u = v0 / n_v0
    n_nu = nv_star - 2 * n_v0 + 1
    if n_nu < 2:
        raise GridError("hybrid v-axis degenerate: uniform zone covers the grid")
    r_nu = v_max - 2.0 * v0 + dv_u
    b_nu = _match_first_step(r_nu, n_nu, dv_u)
    meta = {"cluster": v0, "v_max": v_max, "n_v00": n_v0, "nv_star0": nv_star,
            "n_nu0": n_nu, "dv_u0": dv_u, "b_nu": b_nu, "r_nu": r_nu,
            "level": 0}
    return _hybrid_axis_at_level(meta, base.a, base.b, nv, level=0)


def _hybrid_refine(axis: Axis) -> Axis:
    m = axis.meta
    return _hybrid_axis_at_level(m, axis.a, axis.b, axis.n_input // (2 ** m["level"]),
                                 level=m["level"] + 1)


def richardson_pair(K: float, s_lo: float, s_hi: float, v0: float,
                    v_max: float, ns: int, nv: int,
                    b_s: float = B_S_DEFAULT, b_v: float = B_V_DEFAULT,
                    log_form: bool = False, hybrid: bool = True):
    """(coarse, fine) grids for spatial Richardson extrapolation.

    The coarse grid is built at (NS/2, NV/2); the fine grid reuses its
    stretch parameters at doubled index density, so coarse nodes are a
    subset of fine nodes and the strike/v0 indices double exactly.
    """
    if ns % 2 or nv % 2:
        raise GridError("NS and NV must be even for a Richardson pair")
    s_coarse = make_s_axis(K, s_lo, s_hi, ns // 2, b_s)
    make_v = make_hybrid_v_axis if hybrid else make_v_axis
    v_coarse = make_v(v0, v_max, nv // 2, b_v)
    coarse = Grid2D(s_coarse, v_coarse, log_form)
    fine = Grid2D(s_coarse.refine(), v_coarse.refine(), log_form)
    return coarse, fine
