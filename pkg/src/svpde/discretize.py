"""Semi-discrete split operator A = A0 + A1 + A2 with boundary vector b(t).

Unknowns are the grid nodes i = 1..NS, j = 0..NV*: the left Dirichlet
column is eliminated into b(t), the v = 0 row uses the one-sided
second-order first-derivative formula, and the far Neumann boundaries are
handled by ghost-node extrapolation with ghost spacing equal to the last
interior spacing.  A1 holds the S-direction terms (plus half the reaction),
A2 the v-direction terms (plus the other half), A0 everything carrying the
mixed-derivative factor.  b(t) is stored analytically as coefficients of
exp(-r t) and exp(-q t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Grid2D
from .market import CALL, PUT
from .models import MarketTerms, ModelParams, coefficient_parts


@dataclass(frozen=True)
class StencilWeights:
    weights: np.ndarray   # per-node weights
    offsets: np.ndarray   # node offsets the weights attach to

    def __iter__(self):
        return iter(self.weights)


def central_first_weights(dm: float, dp: float) -> StencilWeights:
    """Second-order first derivative on the non-uniform triple (-dm, 0, +dp)."""
    w = np.array([-dp / (dm * (dm + dp)),
                  (dp - dm) / (dm * dp),
                  dm / (dp * (dm + dp))])
    return StencilWeights(w, np.array([-1, 0, 1]))


def central_second_weights(dm: float, dp: float) -> StencilWeights:
    w = np.array([2.0 / (dm * (dm + dp)),
                  -2.0 / (dm * dp),
                  2.0 / (dp * (dm + dp))])
    return StencilWeights(w, np.array([-1, 0, 1]))


def upwind_first_weights(d1: float, d2: float) -> StencilWeights:
    """One-sided second-order first derivative using the two right neighbors."""
    w = np.array([-(2.0 * d1 + d2) / (d1 * (d1 + d2)),
                  (d1 + d2) / (d1 * d2),
                  -d1 / (d2 * (d1 + d2))])
    return StencilWeights(w, np.array([0, 1, 2]))


def mixed_term_row(ds_m: float, ds_p: float, dv_m: float, dv_p: float,
                   m_sv: float) -> dict:
    """Stencil entries of the 7-point mixed-derivative scheme, keyed by offset.

    The scheme is the corner expression m_sv*(-V[i+1,j-1] + 2V[i,j]
    - V[i-1,j+1]) plus the step-weighted first/second derivative expansions
    that the semi-discrete coefficients fold in.
    """
    w1s = central_first_weights(ds_m, ds_p).weights
    w2s = central_second_weights(ds_m, ds_p).weights
    w1v = central_first_weights(dv_m, dv_p).weights
    w2v = central_second_weights(dv_m, dv_p).weights
    cs = m_sv * (ds_p - ds_m)
    cv = m_sv * (dv_p - dv_m)
    dss = 0.5 * m_sv * (ds_p ** 2 + ds_m ** 2)
    dvv = 0.5 * m_sv * (dv_p ** 2 + dv_m ** 2)
    return {
        (0, 0): 2.0 * m_sv + cs * w1s[1] + cv * w1v[1] + dss * w2s[1] + dvv * w2v[1],
        (-1, 0): cs * w1s[0] + dss * w2s[0],
        (1, 0): cs * w1s[2] + dss * w2s[2],
        (0, -1): cv * w1v[0] + dvv * w2v[0],
        (0, 1): cv * w1v[2] + dvv * w2v[2],
        (1, -1): -m_sv,
        (-1, 1): -m_sv,
    }


@dataclass
class InitialCondition:
    values: np.ndarray   # (NI, NJ) over the unknowns
    side: str


@dataclass
class SplitOperator:
    """Coefficient arrays of the split operator over the (NI, NJ) unknowns."""

    grid: Grid2D
    terms: MarketTerms
    side: str
    # A1: tridiagonal along i at fixed j
    a1_lo: np.ndarray
    a1_di: np.ndarray
    a1_up: np.ndarray
    # A2: tridiagonal along j at fixed i, plus one extra entry on the j=0 row
    a2_lo: np.ndarray
    a2_di: np.ndarray
    a2_up: np.ndarray
    a2_e: np.ndarray      # (NI,) coefficient of V[i, 2] in the j = 0 row
    # A0: mixed-term stencil
    a0_c: np.ndarray
    a0_xm: np.ndarray
    a0_xp: np.ndarray
    a0_vm: np.ndarray
    a0_vp: np.ndarray
    a0_pm: np.ndarray     # entry at (i+1, j-1)
    a0_mp: np.ndarray     # entry at (i-1, j+1)
    # boundary vectors, analytic in time: b_k(t) = b_k_r e^{-rt} + b_k_q e^{-qt}
    b0_r: np.ndarray
    b0_q: np.ndarray
    b1_r: np.ndarray
    b1_q: np.ndarray
    b2_r: np.ndarray
    b2_q: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.a1_di.shape

    def _bt(self, br, bq, t: float) -> np.ndarray:
        return (br * math.exp(-self.terms.r * t)
                + bq * math.exp(-self.terms.q * t))

    def b0(self, t):
        return self._bt(self.b0_r, self.b0_q, t)

    def b1(self, t):
        return self._bt(self.b1_r, self.b1_q, t)

    def b2(self, t):
        return self._bt(self.b2_r, self.b2_q, t)

    def b(self, t):
        return self._bt(self.b0_r + self.b1_r + self.b2_r,
                        self.b0_q + self.b1_q + self.b2_q, t)

    # Reference matvecs (numpy); the march module has fused fast paths.
    def apply_a1(self, v: np.ndarray) -> np.ndarray:
        out = self.a1_di * v
        out[1:, :] += self.a1_lo[1:, :] * v[:-1, :]
        out[:-1, :] += self.a1_up[:-1, :] * v[1:, :]
        return out

    def apply_a2(self, v: np.ndarray) -> np.ndarray:
        out = self.a2_di * v
        out[:, 1:] += self.a2_lo[:, 1:] * v[:, :-1]
        out[:, :-1] += self.a2_up[:, :-1] * v[:, 1:]
        out[:, 0] += self.a2_e * v[:, 2]
        return out

    def apply_a0(self, v: np.ndarray) -> np.ndarray:
        out = self.a0_c * v
        out[1:, :] += self.a0_xm[1:, :] * v[:-1, :]
        out[:-1, :] += self.a0_xp[:-1, :] * v[1:, :]
        out[:, 1:] += self.a0_vm[:, 1:] * v[:, :-1]
        out[:, :-1] += self.a0_vp[:, :-1] * v[:, 1:]
        out[:-1, 1:] += self.a0_pm[:-1, 1:] * v[1:, :-1]
        out[1:, :-1] += self.a0_mp[1:, :-1] * v[:-1, 1:]
        return out

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.apply_a0(v) + self.apply_a1(v) + self.apply_a2(v)

    def full_matrix(self) -> sp.csc_matrix:
        """A = A0 + A1 + A2 as a sparse matrix, unknowns flattened v-fastest."""
        ni, nj = self.shape
        idx = np.arange(ni * nj).reshape(ni, nj)
        rows, cols, vals = [], [], []

        def add(coef, di, dj):
            ii0 = max(0, -di)
            ii1 = ni - max(0, di)
            jj0 = max(0, -dj)
            jj1 = nj - max(0, dj)
            c = coef[ii0:ii1, jj0:jj1]
            rows.append(idx[ii0:ii1, jj0:jj1].ravel())
            cols.append(idx[ii0 + di:ii1 + di, jj0 + dj:jj1 + dj].ravel())
            vals.append(c.ravel())

        add(self.a1_di + self.a2_di + self.a0_c, 0, 0)
        add(self.a1_lo + self.a0_xm, -1, 0)
        add(self.a1_up + self.a0_xp, 1, 0)
        add(self.a2_lo + self.a0_vm, 0, -1)
        add(self.a2_up + self.a0_vp, 0, 1)
        add(self.a0_pm, 1, -1)
        add(self.a0_mp, -1, 1)
        rows.append(idx[:, 0])
        cols.append(idx[:, 2])
        vals.append(self.a2_e)
        mat = sp.coo_matrix((np.concatenate(vals),
                             (np.concatenate(rows), np.concatenate(cols))),
                            shape=(ni * nj, ni * nj))
        return mat.tocsc()


def assemble(grid: Grid2D, params: ModelParams, terms: MarketTerms,
             side: str) -> SplitOperator:
    """Build the split operator for one option on one grid."""
    s_nodes = grid.s_axis.nodes
    v_nodes = grid.v_axis.nodes
    ns = grid.s_axis.n
    nj = v_nodes.size
    ni = ns
    r, q = terms.r, terms.q
    log_form = grid.log_form

    s_un = s_nodes[1:]                     # unknown asset nodes, i = 1..NS
    ds_all = np.diff(s_nodes)
    ds_m = ds_all.copy()                   # step to the left of node i (i=1..NS)
    ds_p = np.empty(ni)
    ds_p[:-1] = ds_all[1:]
    ds_p[-1] = ds_all[-1]                  # ghost spacing = last interior spacing

    dv_all = np.diff(v_nodes)
    dv_m = np.empty(nj)
    dv_m[1:] = dv_all
    dv_m[0] = dv_all[0]                    # dummy; j = 0 row never uses it
    dv_p = np.empty(nj)
    dv_p[:-1] = dv_all
    dv_p[-1] = dv_all[-1]                  # ghost spacing at v_max

    S = np.broadcast_to(s_un[:, None], (ni, nj)).copy()
    V = np.broadcast_to(v_nodes[None, :], (ni, nj)).copy()
    DSm = np.broadcast_to(ds_m[:, None], (ni, nj))
    DSp = np.broadcast_to(ds_p[:, None], (ni, nj))
    DVm = np.broadcast_to(dv_m[None, :], (ni, nj))
    DVp = np.broadcast_to(dv_p[None, :], (ni, nj))

    d_s, d_v, c_s, c_v, m_sv = coefficient_parts(
        params, terms, S, V, (DSm, DSp, DVm, DVp), log_form=log_form)
    m_sv = np.array(m_sv, dtype=float)
    m_sv[-1, :] = 0.0                      # Neumann at S_max kills the mixed term
    m_sv[:, -1] = 0.0                      # same at v_max
    # v = 0 already gives m_sv = 0 through the v^(1/2+p) factor

    # first/second derivative weights per node (broadcast over the other axis)
    w1s_m = -DSp / (DSm * (DSm + DSp))
    w1s_c = (DSp - DSm) / (DSm * DSp)
    w1s_p = DSm / (DSp * (DSm + DSp))
    w2s_m = 2.0 / (DSm * (DSm + DSp))
    w2s_c = -2.0 / (DSm * DSp)
    w2s_p = 2.0 / (DSp * (DSm + DSp))

    w1v_m = -DVp / (DVm * (DVm + DVp))
    w1v_c = (DVp - DVm) / (DVm * DVp)
    w1v_p = DVm / (DVp * (DVm + DVp))
    w2v_m = 2.0 / (DVm * (DVm + DVp))
    w2v_c = -2.0 / (DVm * DVp)
    w2v_p = 2.0 / (DVp * (DVm + DVp))

    # ---- A1: S-direction physical terms + half the reaction
    a1_lo = d_s * w2s_m + c_s * w1s_m
    a1_di = d_s * w2s_c + c_s * w1s_c - 0.5 * r
    a1_up = d_s * w2s_p + c_s * w1s_p

    # ---- A2: v-direction physical terms + half the reaction
    a2_lo = d_v * w2v_m + c_v * w1v_m
    a2_di = d_v * w2v_c + c_v * w1v_c - 0.5 * r
    a2_up = d_v * w2v_p + c_v * w1v_p
    a2_e = np.zeros(ni)

    # v = 0 row: diffusion/mixed vanish; use the one-sided first derivative
    d1, d2 = dv_all[0], dv_all[1]
    u0 = -(2.0 * d1 + d2) / (d1 * (d1 + d2))
    u1 = (d1 + d2) / (d1 * d2)
    u2 = -d1 / (d2 * (d1 + d2))
    cv0 = params.kappa * params.vbar
    a2_lo[:, 0] = 0.0
    a2_di[:, 0] = cv0 * u0 - 0.5 * r
    a2_up[:, 0] = cv0 * u1
    a2_e[:] = cv0 * u2

    # ---- A0: everything proportional to m_sv
    cs_fold = m_sv * (DSp - DSm)
    cv_fold = m_sv * (DVp - DVm)
    dss_fold = 0.5 * m_sv * (DSp ** 2 + DSm ** 2)
    dvv_fold = 0.5 * m_sv * (DVp ** 2 + DVm ** 2)
    a0_c = (2.0 * m_sv + cs_fold * w1s_c + cv_fold * w1v_c
            + dss_fold * w2s_c + dvv_fold * w2v_c)
    a0_xm = cs_fold * w1s_m + dss_fold * w2s_m
    a0_xp = cs_fold * w1s_p + dss_fold * w2s_p
    a0_vm = cv_fold * w1v_m + dvv_fold * w2v_m
    a0_vp = cv_fold * w1v_p + dvv_fold * w2v_p
    a0_pm = -m_sv
    a0_mp = -m_sv

    # ---- boundary handling
    b0_r = np.zeros((ni, nj)); b0_q = np.zeros((ni, nj))
    b1_r = np.zeros((ni, nj)); b1_q = np.zeros((ni, nj))
    b2_r = np.zeros((ni, nj)); b2_q = np.zeros((ni, nj))

    # Dirichlet value at the eliminated left column, as (coef_r, coef_q)
    if side == PUT:
        s_min_val = math.exp(s_nodes[0]) if log_form else s_nodes[0]
        dir_r, dir_q = terms.K, -s_min_val
    else:
        dir_r, dir_q = 0.0, 0.0

    b1_r[0, :] = a1_lo[0, :] * dir_r
    b1_q[0, :] = a1_lo[0, :] * dir_q
    a1_lo[0, :] = 0.0
    b0_r[0, :] = (a0_xm[0, :] + a0_mp[0, :]) * dir_r
    b0_q[0, :] = (a0_xm[0, :] + a0_mp[0, :]) * dir_q
    a0_xm = a0_xm.copy(); a0_mp = a0_mp.copy()
    a0_xm[0, :] = 0.0
    a0_mp[0, :] = 0.0

    # ghost elimination at S_max: V_ghost = V_NS + ds_ghost * gradient(t)
    if side == CALL:
        grad_q = math.exp(s_nodes[-1]) if log_form else 1.0
    else:
        grad_q = 0.0
    b1_q[-1, :] += a1_up[-1, :] * ds_p[-1] * grad_q
    a1_di[-1, :] += a1_up[-1, :]
    a1_up[-1, :] = 0.0

    # ghost elimination at v_max: zero gradient folds into the diagonal
    a2_di[:, -1] += a2_up[:, -1]
    a2_up[:, -1] = 0.0

    return SplitOperator(grid=grid, terms=terms, side=side,
                         a1_lo=a1_lo, a1_di=a1_di, a1_up=a1_up,
                         a2_lo=a2_lo, a2_di=a2_di, a2_up=a2_up, a2_e=a2_e,
                         a0_c=a0_c, a0_xm=a0_xm, a0_xp=a0_xp,
                         a0_vm=a0_vm, a0_vp=a0_vp, a0_pm=a0_pm, a0_mp=a0_mp,
                         b0_r=b0_r, b0_q=b0_q, b1_r=b1_r, b1_q=b1_q,
                         b2_r=b2_r, b2_q=b2_q)


def smoothed_payoff(grid: Grid2D, K: float, side: str,
                    smoothing: bool = True) -> InitialCondition:
    """Vanilla payoff on the unknowns with the strike-line average applied.

    The node on S = K gets 0.25*dS^2 / (S[iK+1] - S[iK-1]) with dS the
    right step for calls and the left step for puts; with smoothing off the
    strike-line value is the plain payoff (zero).
    """
    s_nodes = grid.s_axis.nodes
    s_phys = np.exp(s_nodes) if grid.log_form else s_nodes
    nj = grid.v_axis.nodes.size
    payoff = (np.maximum(s_phys[1:] - K, 0.0) if side == CALL
              else np.maximum(K - s_phys[1:], 0.0))
    values = np.repeat(payoff[:, None], nj, axis=1)
    i_k = grid.s_axis.cluster_index
    if smoothing and 1 <= i_k <= grid.s_axis.n - 1:
        ds_right = s_phys[i_k + 1] - s_phys[i_k]
        ds_left = s_phys[i_k] - s_phys[i_k - 1]
        ds = ds_right if side == CALL else ds_left
        values[i_k - 1, :] = 0.25 * ds * ds / (s_phys[i_k + 1] - s_phys[i_k - 1])
    return InitialCondition(values=values, side=side)
