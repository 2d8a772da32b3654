"""Direct collocation of a continuous-time problem onto a time mesh.

States and controls are sampled at every grid point; dynamics become
per-interval defect equalities and the rate-region / force constraints
are imposed pointwise.  All dynamics here are affine in piecewise-linear
decision trajectories, so the trapezoidal and Hermite-Simpson defects
coincide algebraically; the schemes differ in the quadrature used for
the nonlinear cost terms (trapezoid vs composite Simpson on interpolated
midpoints).

Speed dynamics are deliberately imposed as mesh differences
(v[k+1]-v[k])/dt = a[k] rather than trapezoids in a, which suppresses
singular arcs around speed switches.

The decision vector is nondimensionalized block-wise (powers by the power
cap, rates by bandwidth, positions by the path span, distances by their
geometric minimum, buffers by the total data load); constraint rows carry
matching scales.  Raw units would otherwise span ~12 orders of magnitude.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .ocp import OcpProblem
from .solution import Solution

__all__ = [
    "Mesh",
    "SparseNlp",
    "transcribe",
    "extract_solution",
    "fd_jacobian_error",
    "shift_warm_start",
]

SCHEMES = ("trapezoidal", "hermite_simpson")


@dataclass(frozen=True)
class Mesh:
    """Strictly increasing grid of absolute times."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("mesh needs at least two grid points")
        if np.any(np.diff(t) <= 0):
            raise ValueError("mesh times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, t0: float, t_end: float, intervals: int) -> "Mesh":
        return cls(np.linspace(t0, t_end, intervals + 1))

    @property
    def k(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def refine(self) -> "Mesh":
        """Halve every interval."""
        t = self.times
        mids = 0.5 * (t[:-1] + t[1:])
        return Mesh(np.sort(np.concatenate([t, mids])))

    def aligned_with(self, step: float) -> bool:
        """True when every grid time is an integer multiple of ``step``."""
        ratio = self.times / step
        return bool(np.all(np.abs(ratio - np.round(ratio)) < 1e-9))


@dataclass
class VarBlock:
    name: str
    kind: str        # p | r | chi | s | q | v | a | F | theta
    tag: str         # link name or node id
    start: int
    count: int
    scale: object    # scalar or per-point array

    def scale_at(self, i: int) -> float:
        return float(self.scale) if np.ndim(self.scale) == 0 \
            else float(self.scale[i])


class _Family:
    """One constraint family: contiguous rows plus a jacobian slot range."""

    def __init__(self, name, eq, rows, row_scale):
        self.name = name
        self.eq = eq
        self.rows = rows              # row count
        self.row_scale = row_scale    # scalar
        self.row_start = -1
        self.slot = slice(0, 0)       # into the global jacobian value array
        self.const = False            # constant jacobian values

    def pattern(self, nlp):
        raise NotImplementedError

    def eval(self, nlp, x, c_out, vals, need_jac):
        raise NotImplementedError

    def hess_vec(self, nlp, x, w, v, out):
        """Accumulate sum_i w[i] * (H(c_i) @ v) into ``out``.

        Defect families are linear up to the horizon-scaling cross terms,
        which are deliberately left out of the Hessian model (the line
        search absorbs the error); they override nothing.
        """


def _theta_value(nlp, x):
    return x[nlp.theta_index] if nlp.theta_index is not None else 1.0


class _BufferDefect(_Family):
    def __init__(self, node_id, in_blocks, out_blocks, s_block, dtau, data_scale):
        super().__init__(f"buffer_defect[{node_id}]", True, len(dtau), data_scale)
        self.s = s_block
        self.inb = in_blocks
        self.outb = out_blocks
        self.dtau = dtau

    def _flow(self, x):
        k1 = self.s.count
        flow = np.zeros(k1)
        for b in self.inb:
            flow += x[b.start:b.start + k1]
        for b in self.outb:
            flow -= x[b.start:b.start + k1]
        return flow

    def pattern(self, nlp):
        k = self.rows
        rows, cols, const = [], [], []
        kk = np.arange(k)
        half = self.dtau / 2.0
        rows.append(kk); cols.append(self.s.start + kk + 1); const.append(np.ones(k))
        rows.append(kk); cols.append(self.s.start + kk); const.append(-np.ones(k))
        for b in self.inb:
            rows.append(kk); cols.append(b.start + kk); const.append(-half)
            rows.append(kk); cols.append(b.start + kk + 1); const.append(-half)
        for b in self.outb:
            rows.append(kk); cols.append(b.start + kk); const.append(half)
            rows.append(kk); cols.append(b.start + kk + 1); const.append(half)
        self.n_static = sum(a.size for a in const)
        if nlp.theta_index is not None:
            rows.append(kk); cols.append(np.full(k, nlp.theta_index))
            const.append(np.zeros(k))
        self.const = nlp.theta_index is None
        return rows, cols, const

    def eval(self, nlp, x, c_out, vals, need_jac):
        theta = _theta_value(nlp, x)
        flow = self._flow(x)
        s = x[self.s.start:self.s.start + self.s.count]
        half = theta * self.dtau / 2.0
        c_out[:] = s[1:] - s[:-1] - half * (flow[:-1] + flow[1:])
        if need_jac and nlp.theta_index is not None:
            base = vals[self.slot]
            # static entries were written with theta=1; rescale rate columns
            rate_part = base[self.rows * 2:self.n_static]
            np.multiply(nlp._jac_template[self.slot][self.rows * 2:self.n_static],
                        theta, out=rate_part)
            base[self.n_static:] = -(self.dtau / 2.0) * (flow[:-1] + flow[1:])


class _PositionDefect(_Family):
    def __init__(self, node_id, q_block, v_block, direction, wind, dtau, scale):
        super().__init__(f"position_defect[{node_id}]", True, len(dtau), scale)
        self.q = q_block
        self.v = v_block
        self.direction = direction
        self.wind = wind
        self.dtau = dtau

    def pattern(self, nlp):
        k = self.rows
        kk = np.arange(k)
        half = self.dtau / 2.0
        rows = [kk, kk, kk, kk]
        cols = [self.q.start + kk + 1, self.q.start + kk,
                self.v.start + kk, self.v.start + kk + 1]
        const = [np.ones(k), -np.ones(k),
                 -half * self.direction, -half * self.direction]
        self.n_static = 4 * k
        if nlp.theta_index is not None:
            rows.append(kk); cols.append(np.full(k, nlp.theta_index))
            const.append(np.zeros(k))
        self.const = nlp.theta_index is None
        return rows, cols, const

    def eval(self, nlp, x, c_out, vals, need_jac):
        theta = _theta_value(nlp, x)
        q = x[self.q.start:self.q.start + self.q.count]
        v = x[self.v.start:self.v.start + self.v.count]
        half = theta * self.dtau / 2.0
        vsum = self.direction * (v[:-1] + v[1:]) + 2.0 * self.wind
        c_out[:] = q[1:] - q[:-1] - half * vsum
        if need_jac and nlp.theta_index is not None:
            base = vals[self.slot]
            k = self.rows
            np.multiply(nlp._jac_template[self.slot][2 * k:4 * k], theta,
                        out=base[2 * k:4 * k])
            base[self.n_static:] = -(self.dtau / 2.0) * vsum


class _SpeedDefect(_Family):
    def __init__(self, node_id, v_block, a_block, dtau, scale):
        super().__init__(f"speed_defect[{node_id}]", True, len(dtau), scale)
        self.v = v_block
        self.a = a_block
        self.dtau = dtau

    def pattern(self, nlp):
        k = self.rows
        kk = np.arange(k)
        rows = [kk, kk, kk]
        cols = [self.v.start + kk + 1, self.v.start + kk, self.a.start + kk]
        const = [np.ones(k), -np.ones(k), -self.dtau]
        self.n_static = 3 * k
        if nlp.theta_index is not None:
            rows.append(kk); cols.append(np.full(k, nlp.theta_index))
            const.append(np.zeros(k))
        self.const = nlp.theta_index is None
        return rows, cols, const

    def eval(self, nlp, x, c_out, vals, need_jac):
        theta = _theta_value(nlp, x)
        v = x[self.v.start:self.v.start + self.v.count]
        a = x[self.a.start:self.a.start + self.a.count - 1]
        c_out[:] = v[1:] - v[:-1] - theta * self.dtau * a
        if need_jac and nlp.theta_index is not None:
            base = vals[self.slot]
            k = self.rows
            np.multiply(nlp._jac_template[self.slot][2 * k:3 * k], theta,
                        out=base[2 * k:3 * k])
            base[self.n_static:] = -self.dtau * a


class _ForceBalance(_Family):
    def __init__(self, node_id, f_block, v_block, a_block, mass, coeffs, scale):
        super().__init__(f"force_balance[{node_id}]", True, v_block.count, scale)
        self.F = f_block
        self.v = v_block
        self.a = a_block
        self.mass = mass
        self.coeffs = coeffs

    def pattern(self, nlp):
        k1 = self.rows
        kk = np.arange(k1)
        rows = [kk, kk, kk]
        cols = [self.F.start + kk, self.v.start + kk, self.a.start + kk]
        const = [np.ones(k1), np.zeros(k1), np.full(k1, -self.mass)]
        self.const = False
        return rows, cols, const

    def eval(self, nlp, x, c_out, vals, need_jac):
        k1 = self.rows
        v = x[self.v.start:self.v.start + k1]
        d, dd = kernels.drag_terms(np.ascontiguousarray(v), self.coeffs.cd1,
                                   self.coeffs.cd2, need_jac=need_jac)
        c_out[:] = (x[self.F.start:self.F.start + k1] - d
                    - self.mass * x[self.a.start:self.a.start + k1])
        if need_jac:
            vals[self.slot][k1:2 * k1] = -dd

    def hess_vec(self, nlp, x, w, v, out):
        k1 = self.rows
        vv = x[self.v.start:self.v.start + k1]
        ddd = 2.0 * self.coeffs.cd1 + 6.0 * self.coeffs.cd2 / vv ** 4
        out[self.v.start:self.v.start + k1] += \
            -w * ddd * v[self.v.start:self.v.start + k1]


class _ThrustCeiling(_Family):
    def __init__(self, node_id, v_block, a_block, mass, coeffs, f_max, scale):
        super().__init__(f"thrust_ceiling[{node_id}]", False, v_block.count, scale)
        self.v = v_block
        self.a = a_block
        self.mass = mass
        self.coeffs = coeffs
        self.f_max = f_max

    def pattern(self, nlp):
        k1 = self.rows
        kk = np.arange(k1)
        rows = [kk, kk]
        cols = [self.v.start + kk, self.a.start + kk]
        const = [np.zeros(k1), np.full(k1, self.mass)]
        self.const = False
        return rows, cols, const

    def eval(self, nlp, x, c_out, vals, need_jac):
        k1 = self.rows
        v = x[self.v.start:self.v.start + k1]
        d, dd = kernels.drag_terms(np.ascontiguousarray(v), self.coeffs.cd1,
                                   self.coeffs.cd2, need_jac=need_jac)
        c_out[:] = d + self.mass * x[self.a.start:self.a.start + k1] - self.f_max
        if need_jac:
            vals[self.slot][:k1] = dd

    def hess_vec(self, nlp, x, w, v, out):
        k1 = self.rows
        vv = x[self.v.start:self.v.start + k1]
        ddd = 2.0 * self.coeffs.cd1 + 6.0 * self.coeffs.cd2 / vv ** 4
        out[self.v.start:self.v.start + k1] += \
            w * ddd * v[self.v.start:self.v.start + k1]


class _DistanceDef(_Family):
    """chi - |X|^2 = 0, or relaxed |X|^2 - chi <= 0."""

    def __init__(self, link_name, chi_block, q_blocks, q_consts, signs,
                 chi_const, relaxed, scale):
        rows = chi_block.count
        super().__init__(f"distance[{link_name}]", not relaxed, rows, scale)
        self.chi = chi_block
        self.q_blocks = q_blocks      # list of (block, sign) for variable ends
        self.q_consts = q_consts      # constant contribution to dq
        self.signs = signs
        self.chi_const = chi_const
        self.relaxed = relaxed

    def _dq(self, x):
        dq = np.full(self.rows, self.q_consts)
        for block, sign in zip(self.q_blocks, self.signs):
            dq += sign * x[block.start:block.start + self.rows]
        return dq

    def pattern(self, nlp):
        k1 = self.rows
        kk = np.arange(k1)
        sgn = -1.0 if self.relaxed else 1.0
        rows = [kk]
        cols = [self.chi.start + kk]
        const = [np.full(k1, sgn)]
        for block, _ in zip(self.q_blocks, self.signs):
            rows.append(kk)
            cols.append(block.start + kk)
            const.append(np.zeros(k1))
        self.const = not self.q_blocks
        return rows, cols, const

    def eval(self, nlp, x, c_out, vals, need_jac):
        k1 = self.rows
        dq = self._dq(x)
        chi = x[self.chi.start:self.chi.start + k1]
        sq = dq * dq + self.chi_const
        if self.relaxed:
            c_out[:] = sq - chi
            dq_factor = 2.0
        else:
            c_out[:] = chi - sq
            dq_factor = -2.0
        if need_jac and self.q_blocks:
            base = vals[self.slot]
            for i, (_, sign) in enumerate(zip(self.q_blocks, self.signs)):
                base[(i + 1) * k1:(i + 2) * k1] = dq_factor * sign * dq

    def hess_vec(self, nlp, x, w, v, out):
        if not self.q_blocks:
            return
        k1 = self.rows
        factor = 2.0 if self.relaxed else -2.0
        dq_dir = np.zeros(k1)
        for block, sign in zip(self.q_blocks, self.signs):
            dq_dir += sign * v[block.start:block.start + k1]
        for block, sign in zip(self.q_blocks, self.signs):
            out[block.start:block.start + k1] += factor * sign * w * dq_dir


class _Capacity(_Family):
    """Subset rate bound on one receiver band, one row per grid point."""

    def __init__(self, band_rx, subset_names, r_blocks, p_blocks, chi_blocks,
                 coefs, alpha, bandwidth, k1, as_equality=False):
        name = f"rate_region[{band_rx}|{'+'.join(subset_names)}]"
        super().__init__(name, as_equality, k1, bandwidth)
        self.r_blocks = r_blocks
        self.p_blocks = p_blocks
        self.chi_blocks = chi_blocks
        self.coefs = np.ascontiguousarray(coefs, dtype=float)
        self.alpha = alpha
        self.bandwidth = bandwidth

    def _stack(self, x, blocks):
        return np.ascontiguousarray(
            np.stack([x[b.start:b.start + self.rows] for b in blocks]))

    def pattern(self, nlp):
        k1 = self.rows
        kk = np.arange(k1)
        rows, cols, const = [], [], []
        for b in self.r_blocks:
            rows.append(kk); cols.append(b.start + kk); const.append(np.ones(k1))
        for b in self.p_blocks:
            rows.append(kk); cols.append(b.start + kk); const.append(np.zeros(k1))
        for b in self.chi_blocks:
            rows.append(kk); cols.append(b.start + kk); const.append(np.zeros(k1))
        self.const = False
        return rows, cols, const

    def eval(self, nlp, x, c_out, vals, need_jac):
        k1 = self.rows
        n = len(self.p_blocks)
        p = self._stack(x, self.p_blocks)
        chi = self._stack(x, self.chi_blocks)
        r = self._stack(x, self.r_blocks)
        gap, dp, dchi = kernels.capacity_terms(
            p, chi, r, self.coefs, self.alpha, self.bandwidth, need_jac=need_jac)
        c_out[:] = gap
        if need_jac:
            base = vals[self.slot]
            base[n * k1:2 * n * k1] = dp.ravel()
            base[2 * n * k1:3 * n * k1] = dchi.ravel()

    def hess_vec(self, nlp, x, w, v, out):
        """Curvature of -B*log2(1+u) with u the received SNR sum."""
        k1 = self.rows
        p = self._stack(x, self.p_blocks)
        chi = self._stack(x, self.chi_blocks)
        vp = self._stack(v, self.p_blocks)
        vchi = self._stack(v, self.chi_blocks)
        a = self.alpha
        chi_pow = chi ** (-a)
        du_dp = self.coefs[:, None] * chi_pow            # A_i
        terms = du_dp * p                                # T_i
        u = terms.sum(axis=0)
        du_dchi = -a * terms / chi                       # B_i
        scale1 = (self.bandwidth / kernels.LN2) / (1.0 + u) ** 2
        scale2 = (self.bandwidth / kernels.LN2) / (1.0 + u)
        grad_dir = (du_dp * vp + du_dchi * vchi).sum(axis=0)
        cross = -a * du_dp / chi                         # d2u/dp dchi
        uvv_p = cross * vchi
        uvv_chi = cross * vp + (a * (a + 1.0) * terms / chi ** 2) * vchi
        hp = w * (scale1 * du_dp * grad_dir - scale2 * uvv_p)
        hchi = w * (scale1 * du_dchi * grad_dir - scale2 * uvv_chi)
        for i, b in enumerate(self.p_blocks):
            out[b.start:b.start + k1] += hp[i]
        for i, b in enumerate(self.chi_blocks):
            out[b.start:b.start + k1] += hchi[i]


class SparseNlp:
    """Finite-dimensional program with exact first derivatives.

    Works in scaled space: callers see the scaled decision vector, scaled
    bounds and scaled constraint values; ``extract_solution`` undoes the
    scaling.
    """

    def __init__(self, problem: OcpProblem, mesh: Mesh, scheme: str):
        self.problem = problem
        self.mesh = mesh
        self.scheme = scheme
        self.blocks: list[VarBlock] = []
        self._block_map: dict[tuple[str, str], VarBlock] = {}
        self.theta_index: int | None = None
        self.families: list[_Family] = []
        self._built = False

    # -- layout ------------------------------------------------------------

    def add_block(self, kind, tag, count, scale) -> VarBlock:
        start = self.blocks[-1].start + self.blocks[-1].count if self.blocks else 0
        block = VarBlock(f"{kind}[{tag}]", kind, tag, start, count, scale)
        self.blocks.append(block)
        self._block_map[(kind, tag)] = block
        return block

    def block(self, kind, tag) -> VarBlock:
        return self._block_map[(kind, tag)]

    def has_block(self, kind, tag) -> bool:
        return (kind, tag) in self._block_map

    @property
    def n(self) -> int:
        return self.blocks[-1].start + self.blocks[-1].count if self.blocks else 0

    @property
    def m(self) -> int:
        return int(self.eq_mask.size)

    def _finalize(self, lb, ub, x0):
        self.x_scale = np.empty(self.n)
        for b in self.blocks:
            self.x_scale[b.start:b.start + b.count] = np.broadcast_to(
                b.scale, (b.count,))
        self.lb = lb / self.x_scale
        self.ub = ub / self.x_scale
        self.x0 = np.clip(x0 / self.x_scale, self.lb, self.ub)

        rows_all, cols_all, vals_all = [], [], []
        row_off = 0
        nnz = 0
        eq, cscale = [], []
        for fam in self.families:
            fam.row_start = row_off
            r, c, v = fam.pattern(self)
            count = sum(a.size for a in r)
            fam.slot = slice(nnz, nnz + count)
            rows_all += [a + row_off for a in r]
            cols_all.append(np.concatenate(c))
            vals_all.append(np.concatenate([np.asarray(a, float) for a in v]))
            nnz += count
            row_off += fam.rows
            eq.append(np.full(fam.rows, fam.eq))
            cscale.append(np.full(fam.rows, fam.row_scale))
        self.eq_mask = (np.concatenate(eq) if eq else np.zeros(0, bool))
        self.c_scale = (np.concatenate(cscale) if cscale else np.zeros(0))
        self.lam0 = np.zeros(row_off)
        if self.problem.options.objective == "throughput":
            # rate rows bind at any maximizer; their multipliers equal the
            # scaled marginal value of rate, known in closed form
            w_quad = _trap_weights(self.mesh.dt, self.mesh.k + 1)
            for fam in self.families:
                if isinstance(fam, _Capacity) and fam.eq:
                    self.lam0[fam.row_start:fam.row_start + fam.rows] = \
                        w_quad * fam.bandwidth / self.obj_scale
        rows = np.concatenate(rows_all) if rows_all else np.zeros(0, int)
        cols = np.concatenate(cols_all) if cols_all else np.zeros(0, int)
        self._jac_template = np.concatenate(vals_all) if vals_all else np.zeros(0)
        self._jac_rows = rows
        self._jac_cols = cols
        # scale factors per entry: d(c/cs)/d(x/xs) = J * xs/cs
        self._jac_factor = self.x_scale[cols] / self.c_scale[rows]
        # canonical CSR structure built once; per-eval we permute values in
        order = np.lexsort((cols, rows))
        self._perm = order
        self._csr = sp.csr_matrix(
            (np.zeros(rows.size), (rows[order], cols[order])),
            shape=(row_off, self.n))
        self._csr.sum_duplicates()
        if self._csr.nnz != rows.size:
            raise AssertionError("duplicate jacobian entries in pattern")
        self._vals = self._jac_template.copy()
        self._built = True

    # -- evaluation ---------------------------------------------------------

    def eval_all(self, x_scaled, need_jac=True):
        """Objective, objective gradient, constraints and jacobian (scaled)."""
        x = x_scaled * self.x_scale
        c = np.empty(self.eq_mask.size)
        vals = self._vals
        if need_jac:
            np.copyto(vals, self._jac_template)
        for fam in self.families:
            fam.eval(self, x, c[fam.row_start:fam.row_start + fam.rows],
                     vals, need_jac)
        f, g = self._objective(x, need_jac)
        c /= self.c_scale
        if not need_jac:
            return f / self.obj_scale, None, c, None
        jac = self._csr
        jac.data = (vals * self._jac_factor)[self._perm]
        g_scaled = g * self.x_scale / self.obj_scale
        return f / self.obj_scale, g_scaled, c, jac

    def _objective(self, x, need_grad):
        theta = _theta_value(self, x)
        g = np.zeros(self.n) if need_grad else None
        total = 0.0
        for term in self._cost_terms:
            total += term(x, theta, g)
        if self.theta_index is not None:
            stretch = self.horizon_ref * (theta - 1.0)
            total += self.overtime_weight * stretch
            if need_grad:
                g[self.theta_index] += self.overtime_weight * self.horizon_ref
        return total, g

    def hess_vec(self, x_scaled, w_rows, v_scaled, out_scaled=None):
        """Scaled product (H(f) + sum_i w_i H(c_i)) @ v.

        ``w_rows`` are (scaled-row) constraint weights; pass zeros to get
        the pure objective curvature.  Horizon-scaling cross terms are not
        modelled.
        """
        x = x_scaled * self.x_scale
        v = v_scaled * self.x_scale
        theta = _theta_value(self, x)
        out = np.zeros(self.n)
        w_phys = w_rows / self.c_scale
        for fam in self.families:
            w = w_phys[fam.row_start:fam.row_start + fam.rows]
            fam.hess_vec(self, x, w, v, out)
        out_cost = np.zeros(self.n)
        for hv in self._cost_hessvecs:
            hv(x, theta, v, out_cost)
        out += out_cost / self.obj_scale
        out *= self.x_scale
        if out_scaled is not None:
            out_scaled += out
            return out_scaled
        return out

    def constraint_names(self):
        out = []
        for fam in self.families:
            out += [f"{fam.name}#{i}" for i in range(fam.rows)]
        return out

    def dump(self, path, x_scaled=None):
        """Sparse triplet text dump for external cross-checks."""
        x = self.x0 if x_scaled is None else x_scaled
        f, g, c, jac = self.eval_all(x)
        coo = jac.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# nlp dump: n={self.n} m={self.m} nnz={coo.nnz} "
                     f"scheme={self.scheme}\n")
            fh.write("# all quantities in scaled space; multiply variables "
                     "by their scale column to recover SI units\n")
            fh.write(f"# objective at x: {f!r}\n")
            fh.write("section vars  # index name lb ub x scale\n")
            for b in self.blocks:
                for i in range(b.count):
                    j = b.start + i
                    fh.write(f"{j} {b.name}#{i} {self.lb[j]!r} {self.ub[j]!r} "
                             f"{x[j]!r} {b.scale_at(i)!r}\n")
            fh.write("section cons  # index name type value scale\n")
            row = 0
            for fam in self.families:
                kind = "eq" if fam.eq else "ineq"
                for i in range(fam.rows):
                    fh.write(f"{row} {fam.name}#{i} {kind} {c[row]!r} "
                             f"{fam.row_scale!r}\n")
                    row += 1
            fh.write("section jac  # row col value\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {v!r}\n")


# ---------------------------------------------------------------------------
# builder

def transcribe(problem: OcpProblem, mesh: Mesh,
               scheme: str = "trapezoidal") -> SparseNlp:
    if scheme not in SCHEMES:
        raise ValueError(f"unsupported scheme {scheme!r}; pick from {SCHEMES}")
    t = mesh.times
    if abs(t[0] - problem.t0) > 1e-9 or abs(t[-1] - problem.horizon) > 1e-9:
        raise ValueError("mesh does not span the problem window")
    cfg = problem.cfg
    opts = problem.options
    k1 = mesh.k + 1
    dtau = mesh.dt

    nlp = SparseNlp(problem, mesh, scheme)

    # -- scales
    data_scale = max(sum(n.data_init for n in cfg.nodes), 1.0)
    endpoints = [n.q_init for n in cfg.nodes] + [n.q_final for n in cfg.nodes]
    pos_scale = max(max(abs(e) for e in endpoints), 1.0)
    span = max(endpoints) - min(endpoints)
    vmax = max((n.speed_bounds[1] for n in cfg.nodes), default=1.0) or 1.0

    lb = []
    ub = []
    x0 = []

    def push(block, lo, hi, init):
        lb.append(np.broadcast_to(lo, (block.count,)).astype(float).copy())
        ub.append(np.broadcast_to(hi, (block.count,)).astype(float).copy())
        x0.append(np.broadcast_to(init, (block.count,)).astype(float).copy())

    # -- frozen / static longitudinal profiles (for x0 and pinned chi)
    def terminal_q_guess(node, b):
        if b.qT is not None:
            return b.qT
        v_ref = b.v0 if b.v0 is not None else node.speed_bounds[0]
        return b.q0 + node.direction * v_ref * horizon_len

    seeded_profiles: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def nominal_q(node_id):
        node = cfg.node(node_id)
        if not node.is_aerial:
            return np.full(k1, node.q_init)
        if opts.fixed_trajectory:
            icpt, slope = problem.frozen_profile(node_id)
            return icpt + slope * t
        if node_id in seeded_profiles:
            return seeded_profiles[node_id][0]
        b = problem.boundary_for(node_id)
        return np.linspace(b.q0, terminal_q_guess(node, b), k1)

    # initial rate guess: route each node's excess data through its
    # outgoing links at a constant rate, following declared node order
    horizon_len = problem.horizon - problem.t0
    inflow = {n.id: 0.0 for n in cfg.nodes}
    rate0 = {}
    for n in cfg.nodes:
        b = problem.boundary_for(n.id)
        held = b.s0 + inflow[n.id] * horizon_len
        target = min(b.sT_ub, held)
        out_links = [l for l in problem.links if l.tx == n.id]
        if out_links and held > target:
            per_link = (held - target) / horizon_len / len(out_links)
            for l in out_links:
                rate0[l.name] = per_link
                inflow[l.rx] += per_link
        else:
            for l in out_links:
                rate0[l.name] = 0.0

    # Straight-line starts cannot express the slow-down needed when the
    # cruise capacity falls short of the data load; in that case seed the
    # trajectory guess with the capacity-maximizing dwell profile instead.
    if not opts.fixed_trajectory:
        _seed_dwell_profiles(problem, t, rate0, seeded_profiles)

    # -- link blocks
    # The initial rates are capped at the capacity of the (power-capped)
    # starting powers, so the nonlinear rate-region rows start feasible
    # and the remaining infeasibility sits in the linear defect rows.
    alpha = cfg.comm.path_loss_exponent
    r_series: dict[str, np.ndarray] = {}
    for link in problem.links:
        chi_nom = _link_chi(problem, link, nominal_q)
        p_block = nlp.add_block("p", link.name, k1, cfg.comm.max_power)
        r_guess = rate0[link.name]
        coef = link.gain_const * problem.h_eff / link.noise_power
        snr_needed = 2.0 ** (r_guess / link.bandwidth) - 1.0
        p_guess = np.clip(snr_needed * chi_nom ** alpha / coef,
                          0.0, cfg.comm.max_power)
        if opts.objective == "throughput":
            push(p_block, cfg.comm.max_power, cfg.comm.max_power,
                 cfg.comm.max_power)
            p_guess = np.full(k1, cfg.comm.max_power)
        else:
            push(p_block, 0.0, cfg.comm.max_power, p_guess)
        cap = link.bandwidth * np.log2(1.0 + coef * p_guess * chi_nom ** -alpha)
        if opts.objective == "throughput":
            r0 = 0.999 * cap
        else:
            r0 = np.minimum(r_guess, 0.999 * cap)
        r_block = nlp.add_block("r", link.name, k1, link.bandwidth)
        r_lo = opts.min_rate if opts.single_hop_chain else 0.0
        r0 = np.maximum(r0, r_lo)
        r_series[link.name] = r0
        push(r_block, r_lo, np.inf, r0)
        chi_lo = max(link.chi_const, 1e-6)
        # squared distances span decades over a pass; per-point scaling by
        # the nominal profile keeps the scaled variable and its rate-bound
        # sensitivity O(1) everywhere
        chi_scale = np.maximum(chi_nom, chi_lo)
        chi_block = nlp.add_block("chi", link.name, k1, chi_scale)
        tx_free = cfg.node(link.tx).is_aerial and not opts.fixed_trajectory
        rx_free = cfg.node(link.rx).is_aerial and not opts.fixed_trajectory
        if tx_free or rx_free:
            push(chi_block, chi_lo, np.inf, chi_nom)
        else:
            push(chi_block, chi_nom, chi_nom, chi_nom)

    # -- node buffers (defect-consistent integration of the initial rates)
    for n in cfg.nodes:
        b = problem.boundary_for(n.id)
        s_block = nlp.add_block("s", n.id, k1, data_scale)
        lo = np.zeros(k1)
        hi = np.full(k1, min(n.memory, np.inf))
        lo[0] = hi[0] = b.s0
        hi[-1] = min(hi[-1], b.sT_ub)
        flow = np.zeros(k1)
        for l in problem.links:
            if l.rx == n.id:
                flow += r_series[l.name]
            elif l.tx == n.id:
                flow -= r_series[l.name]
        s_guess = b.s0 + np.concatenate(
            [[0.0], np.cumsum(0.5 * dtau * (flow[:-1] + flow[1:]))])
        s_guess = np.clip(s_guess, lo, hi)
        push(s_block, lo, hi, s_guess)

    # -- aerial mobility blocks
    for nid in problem.aerial_ids():
        node = cfg.node(nid)
        b = problem.boundary_for(nid)
        vlo, vhi = node.speed_bounds
        coeffs = cfg.coeffs(nid)
        q_block = nlp.add_block("q", nid, k1, pos_scale)
        qlo = np.full(k1, -np.inf)
        qhi = np.full(k1, np.inf)
        qlo[0] = qhi[0] = b.q0
        q_end = terminal_q_guess(node, b)
        if b.qT is not None:
            qlo[-1] = qhi[-1] = b.qT
        q_guess = (seeded_profiles[nid][0] if nid in seeded_profiles
                   else np.linspace(b.q0, q_end, k1))
        push(q_block, qlo, qhi, q_guess)

        v_need = (q_end - b.q0) / horizon_len - opts.wind_offset
        v_nom = float(np.clip(node.direction * v_need, vlo, vhi))
        v_block = nlp.add_block("v", nid, k1, vmax)
        vlo_arr = np.full(k1, vlo)
        vhi_arr = np.full(k1, vhi)
        if b.v0 is not None:
            vlo_arr[0] = vhi_arr[0] = b.v0
        if b.vT is not None:
            vlo_arr[-1] = vhi_arr[-1] = b.vT
        if nid in seeded_profiles:
            v_guess = seeded_profiles[nid][1].copy()
        else:
            v_guess = np.full(k1, v_nom)
        push(v_block, vlo_arr, vhi_arr, np.clip(v_guess, vlo_arr, vhi_arr))

        # the terminal acceleration drives no defect row (speed defects use
        # left-point accelerations), so leaving it free would let the cost
        # term F(T)*v(T) sink without bound through the force balance; pin
        # it to zero, which only fixes the reported terminal thrust
        a_block = nlp.add_block("a", nid, k1, 1.0)
        a_lo = np.full(k1, -np.inf)
        a_hi = np.full(k1, np.inf)
        a_lo[-1] = a_hi[-1] = 0.0
        push(a_block, a_lo, a_hi, 0.0)

        if not opts.convex_cost_substitution:
            f_scale = max(_drag_scalar(vlo, coeffs), _drag_scalar(vhi, coeffs),
                          1.0) + node.mass
            f_block = nlp.add_block("F", nid, k1, f_scale)
            push(f_block, node.thrust_bounds[0], node.thrust_bounds[1],
                 np.clip(_drag_scalar(v_nom, coeffs),
                         node.thrust_bounds[0], node.thrust_bounds[1]))

    if opts.free_terminal_time:
        theta_block = nlp.add_block("theta", "horizon", 1, 1.0)
        nlp.theta_index = theta_block.start
        push(theta_block, 0.05, 20.0, 1.0)

    nlp.horizon_ref = horizon_len
    nlp.overtime_weight = opts.overtime_weight

    # -- constraint families
    for n in cfg.nodes:
        in_blocks = [nlp.block("r", l.name) for l in problem.links if l.rx == n.id]
        out_blocks = [nlp.block("r", l.name) for l in problem.links if l.tx == n.id]
        nlp.families.append(_BufferDefect(
            n.id, in_blocks, out_blocks, nlp.block("s", n.id), dtau, data_scale))

    for nid in problem.aerial_ids():
        node = cfg.node(nid)
        coeffs = cfg.coeffs(nid)
        nlp.families.append(_PositionDefect(
            nid, nlp.block("q", nid), nlp.block("v", nid),
            node.direction, opts.wind_offset, dtau, pos_scale))
        nlp.families.append(_SpeedDefect(
            nid, nlp.block("v", nid), nlp.block("a", nid), dtau, vmax))
        f_scale = max(_drag_scalar(node.speed_bounds[0], coeffs),
                      _drag_scalar(node.speed_bounds[1], coeffs), 1.0) + node.mass
        if opts.convex_cost_substitution:
            if math.isfinite(node.thrust_bounds[1]):
                nlp.families.append(_ThrustCeiling(
                    nid, nlp.block("v", nid), nlp.block("a", nid),
                    node.mass, coeffs, node.thrust_bounds[1], f_scale))
        else:
            nlp.families.append(_ForceBalance(
                nid, nlp.block("F", nid), nlp.block("v", nid),
                nlp.block("a", nid), node.mass, coeffs, f_scale))

    for link in problem.links:
        tx_free = cfg.node(link.tx).is_aerial and not opts.fixed_trajectory
        rx_free = cfg.node(link.rx).is_aerial and not opts.fixed_trajectory
        if not (tx_free or rx_free):
            continue  # chi pinned by bounds
        q_blocks, signs = [], []
        q_consts = 0.0
        if rx_free:
            q_blocks.append(nlp.block("q", link.rx)); signs.append(1.0)
        else:
            q_consts += cfg.node(link.rx).q_init
        if tx_free:
            q_blocks.append(nlp.block("q", link.tx)); signs.append(-1.0)
        else:
            q_consts -= cfg.node(link.tx).q_init
        chi_lo = max(link.chi_const, 1e-6)
        nlp.families.append(_DistanceDef(
            link.name, nlp.block("chi", link.name), q_blocks, q_consts, signs,
            link.chi_const, opts.distance_relaxation, chi_lo))

    for band in problem.bands:
        for subset in band.subsets:
            names = [problem.links[i].tx for i in subset]
            r_blocks = [nlp.block("r", problem.links[i].name) for i in subset]
            p_blocks = [nlp.block("p", problem.links[i].name) for i in subset]
            chi_blocks = [nlp.block("chi", problem.links[i].name) for i in subset]
            coefs = [problem.links[i].gain_const * problem.h_eff
                     / band.noise_power for i in subset]
            # when maximizing delivered data on a single-user band the rate
            # bound binds everywhere, so impose it as an equality
            as_eq = (opts.objective == "throughput" and len(band.links) == 1)
            nlp.families.append(_Capacity(
                band.rx, names, r_blocks, p_blocks, chi_blocks, coefs,
                cfg.comm.path_loss_exponent, band.bandwidth, k1,
                as_equality=as_eq))

    # -- cost terms
    nlp._cost_terms, nlp._cost_hessvecs = _build_cost(nlp, problem, mesh, scheme)
    if opts.objective == "throughput":
        # delivered bits, not joules
        nlp.obj_scale = sum(l.bandwidth for l in problem.links) * horizon_len
    else:
        obj_parts = [cfg.comm.max_power * horizon_len * max(len(problem.links), 1)]
        for nid in ([n.id for n in cfg.nodes if n.is_aerial]):
            node = cfg.node(nid)
            v_avg = node.trip_length / cfg.horizon
            if v_avg > 0:
                c = cfg.coeffs(nid)
                obj_parts.append(horizon_len * (c.cd1 * v_avg ** 3 + c.cd2 / v_avg))
        nlp.obj_scale = sum(obj_parts)

    nlp._finalize(np.concatenate(lb), np.concatenate(ub), np.concatenate(x0))
    return nlp


def _seed_dwell_profiles(problem, t, rate0, out):
    """Replace straight-line trajectory guesses with dwell profiles.

    Applies to free aerial transmitters whose cruise-speed window cannot
    carry their routed data load even at the power cap: the guess then
    dwells at the slow bound near the dominant receiver (the profile that
    maximizes deliverable data), which puts the start in the basin the
    solve must end in.
    """
    from .oracles import bangbang_speed

    cfg = problem.cfg
    alpha = cfg.comm.path_loss_exponent
    horizon_len = t[-1] - t[0]
    for nid in problem.aerial_ids():
        node = cfg.node(nid)
        b = problem.boundary_for(nid)
        if b.qT is None or b.qT == b.q0:
            continue
        out_links = [l for l in problem.links if l.tx == nid]
        if not out_links or any(cfg.node(l.rx).is_aerial for l in out_links):
            continue
        throughput = problem.options.objective == "throughput"
        need = sum(rate0[l.name] for l in out_links) * horizon_len
        if need <= 0 and not throughput:
            continue

        def capacity(q):
            total = 0.0
            for l in out_links:
                chi = (q - cfg.node(l.rx).q_init) ** 2 + l.chi_const
                coef = l.gain_const * problem.h_eff / l.noise_power
                r = l.bandwidth * np.log2(
                    1.0 + coef * cfg.comm.max_power * chi ** -alpha)
                total += np.trapezoid(r, t)
            return total

        if (not throughput
                and capacity(np.linspace(b.q0, b.qT, t.size)) >= 1.05 * need):
            continue
        main = max(out_links, key=lambda l: rate0[l.name])
        rxq = cfg.node(main.rx).q_init
        lo, hi = node.speed_bounds
        if hi <= lo:
            continue
        sign = 1.0 if b.qT >= b.q0 else -1.0
        try:
            prof = bangbang_speed(sign * (b.q0 - rxq), sign * (b.qT - rxq),
                                  lo, hi, horizon_len)
        except ValueError:
            continue
        v_prof = np.asarray(prof.sample(t - t[0]), dtype=float).copy()
        if b.v0 is not None:
            v_prof[0] = b.v0
        if b.vT is not None:
            v_prof[-1] = b.vT
        v_prof = _repair_displacement(v_prof, t, sign * (b.qT - b.q0), lo, hi,
                                      pin_first=b.v0 is not None,
                                      pin_last=b.vT is not None)
        q_prof = b.q0 + sign * np.concatenate(
            [[0.0], np.cumsum(0.5 * np.diff(t) * (v_prof[:-1] + v_prof[1:]))])
        out[nid] = (q_prof, v_prof)


def _repair_displacement(v, t, target, vlo, vhi, pin_first, pin_last):
    """Nudge a speed profile so its trapezoidal path integral hits target.

    The correction is spread over whatever headroom remains toward the
    violated bound, leaving pinned endpoints untouched, so the returned
    profile stays inside [vlo, vhi] and integrates to ``target`` exactly
    (up to the available headroom).
    """
    v = v.copy()
    for _ in range(30):
        err = target - float(np.trapezoid(v, t))
        if abs(err) <= 1e-9 * max(1.0, abs(target)):
            break
        room = (vhi - v) if err > 0 else (v - vlo)
        if pin_first:
            room[0] = 0.0
        if pin_last:
            room[-1] = 0.0
        room_time = float(np.trapezoid(room, t))
        if room_time <= 1e-12:
            break
        # frac > 0 raises v toward vhi, frac < 0 lowers it toward vlo
        frac = float(np.clip(err / room_time, -1.0, 1.0))
        v = v + frac * room
    return v


def _drag_scalar(v, coeffs):
    if v <= 0:
        return 0.0
    return coeffs.cd1 * v * v + coeffs.cd2 / (v * v)


def _link_chi(problem, link, nominal_q):
    dq = nominal_q(link.rx) - nominal_q(link.tx)
    return dq * dq + link.chi_const


def _trap_weights(dtau, k1):
    w = np.zeros(k1)
    w[:-1] += dtau / 2.0
    w[1:] += dtau / 2.0
    return w


def _build_cost(nlp, problem, mesh, scheme):
    """Assemble cost closures: (value+grad accumulators, hessian products)."""
    cfg = problem.cfg
    opts = problem.options
    k1 = mesh.k + 1
    dtau = mesh.dt
    w = _trap_weights(dtau, k1)
    terms = []
    hessvecs = []

    def add(pair):
        term, hv = pair
        terms.append(term)
        if hv is not None:
            hessvecs.append(hv)

    if opts.objective == "throughput":
        for link in problem.links:
            add(_linear_term(nlp.block("r", link.name), -w, k1, nlp))
        return terms, hessvecs

    for link in problem.links:
        add(_linear_term(nlp.block("p", link.name), w, k1, nlp))

    for nid in problem.aerial_ids():
        node = cfg.node(nid)
        coeffs = cfg.coeffs(nid)
        v_block = nlp.block("v", nid)
        if opts.convex_cost_substitution:
            add(_drag_power_term(v_block, node.mass, coeffs, dtau, scheme, nlp))
        else:
            add(_product_term(nlp.block("F", nid), v_block, dtau, scheme, nlp))
    return terms, hessvecs


def _linear_term(block, w, k1, nlp):
    sl = slice(block.start, block.start + k1)

    def term(x, theta, g):
        val = float(w @ x[sl])
        if g is not None:
            g[sl] += theta * w
            if nlp.theta_index is not None:
                g[nlp.theta_index] += val
        return theta * val
    return term, None


def _product_term(f_block, v_block, dtau, scheme, nlp):
    k1 = f_block.count
    fs = slice(f_block.start, f_block.start + k1)
    vs = slice(v_block.start, v_block.start + k1)
    w = _trap_weights(dtau, k1)

    def trap(x, theta, g):
        F, v = x[fs], x[vs]
        val = float(w @ (F * v))
        if g is not None:
            g[fs] += theta * w * v
            g[vs] += theta * w * F
            if nlp.theta_index is not None:
                g[nlp.theta_index] += val
        return theta * val

    def simpson(x, theta, g):
        F, v = x[fs], x[vs]
        fm = 0.5 * (F[:-1] + F[1:])
        vm = 0.5 * (v[:-1] + v[1:])
        seg = (dtau / 6.0) * (F[:-1] * v[:-1] + 4.0 * fm * vm + F[1:] * v[1:])
        val = float(seg.sum())
        if g is not None:
            gF = np.zeros(k1)
            gV = np.zeros(k1)
            gF[:-1] += (dtau / 6.0) * (v[:-1] + 2.0 * vm)
            gF[1:] += (dtau / 6.0) * (v[1:] + 2.0 * vm)
            gV[:-1] += (dtau / 6.0) * (F[:-1] + 2.0 * fm)
            gV[1:] += (dtau / 6.0) * (F[1:] + 2.0 * fm)
            g[fs] += theta * gF
            g[vs] += theta * gV
            if nlp.theta_index is not None:
                g[nlp.theta_index] += val
        return theta * val

    def trap_hv(x, theta, v_dir, out):
        out[fs] += theta * w * v_dir[vs]
        out[vs] += theta * w * v_dir[fs]

    def simpson_hv(x, theta, v_dir, out):
        dF, dv = v_dir[fs], v_dir[vs]
        third, sixth = dtau / 3.0, dtau / 6.0
        oF = np.zeros(k1)
        oV = np.zeros(k1)
        oF[:-1] += third * dv[:-1] + sixth * dv[1:]
        oF[1:] += sixth * dv[:-1] + third * dv[1:]
        oV[:-1] += third * dF[:-1] + sixth * dF[1:]
        oV[1:] += sixth * dF[:-1] + third * dF[1:]
        out[fs] += theta * oF
        out[vs] += theta * oV

    if scheme == "trapezoidal":
        return trap, trap_hv
    return simpson, simpson_hv


def _drag_power_term(v_block, mass, coeffs, dtau, scheme, nlp):
    """Integral of v*D(v) plus the kinetic-energy increment."""
    k1 = v_block.count
    vs = slice(v_block.start, v_block.start + k1)
    w = _trap_weights(dtau, k1)

    def kinetic(v, g, theta):
        val = 0.5 * mass * (v[-1] ** 2 - v[0] ** 2)
        if g is not None:
            g[vs.start + k1 - 1] += mass * v[-1]
            g[vs.start] -= mass * v[0]
        return val

    def trap(x, theta, g):
        v = x[vs]
        pw, dpw = kernels.speed_power_terms(np.ascontiguousarray(v),
                                            coeffs.cd1, coeffs.cd2,
                                            need_jac=g is not None)
        val = float(w @ pw)
        if g is not None:
            g[vs] += theta * w * dpw
            if nlp.theta_index is not None:
                g[nlp.theta_index] += val
        return theta * val + kinetic(v, g, theta)

    def simpson(x, theta, g):
        v = x[vs]
        vm = np.ascontiguousarray(0.5 * (v[:-1] + v[1:]))
        pw, dpw = kernels.speed_power_terms(np.ascontiguousarray(v),
                                            coeffs.cd1, coeffs.cd2,
                                            need_jac=g is not None)
        pwm, dpwm = kernels.speed_power_terms(vm, coeffs.cd1, coeffs.cd2,
                                              need_jac=g is not None)
        seg = (dtau / 6.0) * (pw[:-1] + 4.0 * pwm + pw[1:])
        val = float(seg.sum())
        if g is not None:
            gV = np.zeros(k1)
            gV[:-1] += (dtau / 6.0) * (dpw[:-1] + 2.0 * dpwm)
            gV[1:] += (dtau / 6.0) * (dpw[1:] + 2.0 * dpwm)
            g[vs] += theta * gV
            if nlp.theta_index is not None:
                g[nlp.theta_index] += val
        return theta * val + kinetic(v, g, theta)

    def curvature(v):
        return 6.0 * coeffs.cd1 * v + 2.0 * coeffs.cd2 / v ** 3

    def kinetic_hv(v_dir, out):
        out[vs.start + k1 - 1] += mass * v_dir[vs.start + k1 - 1]
        out[vs.start] -= mass * v_dir[vs.start]

    def trap_hv(x, theta, v_dir, out):
        v = x[vs]
        out[vs] += theta * w * curvature(v) * v_dir[vs]
        kinetic_hv(v_dir, out)

    def simpson_hv(x, theta, v_dir, out):
        v = x[vs]
        dv = v_dir[vs]
        cm = curvature(0.5 * (v[:-1] + v[1:]))
        ck = curvature(v)
        dvm = 0.5 * (dv[:-1] + dv[1:])
        oV = np.zeros(k1)
        oV[:-1] += (dtau / 6.0) * (ck[:-1] * dv[:-1] + 2.0 * cm * dvm)
        oV[1:] += (dtau / 6.0) * (ck[1:] * dv[1:] + 2.0 * cm * dvm)
        out[vs] += theta * oV
        kinetic_hv(v_dir, out)

    if scheme == "trapezoidal":
        return trap, trap_hv
    return simpson, simpson_hv


# ---------------------------------------------------------------------------
# extraction and checks

def extract_solution(x_scaled, nlp: SparseNlp) -> Solution:
    """Physical time series and energy breakdown from an NLP point."""
    x_scaled = np.asarray(x_scaled, dtype=float)
    if x_scaled.shape != (nlp.n,):
        raise ValueError(f"point has dimension {x_scaled.shape}, expected {nlp.n}")
    x = x_scaled * nlp.x_scale
    problem = nlp.problem
    cfg = problem.cfg
    mesh = nlp.mesh
    k1 = mesh.k + 1
    theta = _theta_value(nlp, x)
    times = mesh.times[0] + theta * (mesh.times - mesh.times[0])

    def series(kind, tag):
        b = nlp.block(kind, tag)
        return x[b.start:b.start + b.count].copy()

    sol = Solution(times=times, power={}, rate={}, sq_distance={}, buffer={},
                   time_stretch=theta)
    for link in problem.links:
        sol.power[link.name] = series("p", link.name)
        sol.rate[link.name] = series("r", link.name)
        sol.sq_distance[link.name] = series("chi", link.name)
    for n in cfg.nodes:
        sol.buffer[n.id] = series("s", n.id)

    for n in cfg.nodes:
        if not n.is_aerial:
            continue
        coeffs = cfg.coeffs(n.id)
        if problem.options.fixed_trajectory:
            icpt, slope = problem.frozen_profile(n.id)
            q = icpt + slope * times
            v = np.full(k1, abs(slope))
            a = np.zeros(k1)
            F = np.array([_drag_scalar(vv, coeffs) for vv in v])
        else:
            q = series("q", n.id)
            v = series("v", n.id)
            a = series("a", n.id)
            if nlp.has_block("F", n.id):
                F = series("F", n.id)
            else:
                F = np.array([_drag_scalar(vv, coeffs) for vv in v]) + n.mass * a
        sol.position[n.id] = q
        sol.speed[n.id] = v
        sol.accel[n.id] = a
        sol.thrust[n.id] = F

    for n in cfg.nodes:
        outgoing = [l.name for l in problem.links if l.tx == n.id]
        e_t = 0.0
        for name in outgoing:
            e_t += float(np.trapezoid(sol.power[name], times))
        sol.transmit_energy[n.id] = e_t
        if n.id in sol.speed:
            sol.propulsion_energy[n.id] = float(
                np.trapezoid(sol.thrust[n.id] * sol.speed[n.id], times))
        else:
            sol.propulsion_energy[n.id] = 0.0

    f, _, _, _ = nlp.eval_all(x_scaled, need_jac=False)
    sol.objective = f * nlp.obj_scale
    return sol


def fd_jacobian_error(nlp: SparseNlp, x_scaled=None, step=1e-6, rng=None,
                      n_points=1, spread=0.1):
    """Worst relative mismatch between analytic and central-difference rows.

    Points are sampled inside the (clipped) bound box around x0.  Returns
    the max over sampled points of
    ``max_ij |J_ij - Jfd_ij| / max(1, |J|_max)``.
    """
    rng = rng or np.random.default_rng(0)
    lo = np.where(np.isfinite(nlp.lb), nlp.lb, nlp.x0 - 1.0)
    hi = np.where(np.isfinite(nlp.ub), nlp.ub, nlp.x0 + 1.0)
    worst = 0.0
    for _ in range(n_points):
        if x_scaled is None:
            xp = nlp.x0 + spread * rng.uniform(-1.0, 1.0, nlp.n) * (hi - lo)
            xp = np.clip(xp, lo, hi)
        else:
            xp = np.asarray(x_scaled, dtype=float)
        _, _, _, jac = nlp.eval_all(xp)
        jac = jac.toarray()
        fd = np.empty_like(jac)
        for j in range(nlp.n):
            e = np.zeros(nlp.n)
            e[j] = step
            _, _, cp, _ = nlp.eval_all(xp + e, need_jac=False)
            _, _, cm, _ = nlp.eval_all(xp - e, need_jac=False)
            fd[:, j] = (cp - cm) / (2 * step)
        scale = max(1.0, np.abs(jac).max())
        worst = max(worst, float(np.abs(jac - fd).max() / scale))
        if x_scaled is not None:
            break
    return worst


def shift_warm_start(old_nlp: SparseNlp, x_old, lam_old, new_nlp: SparseNlp):
    """Map a solution one mesh interval forward onto a shrunken grid.

    Assumes both grids are uniform with the same step and the new grid is
    the old one minus its first point.  Values at dropped grid points are
    discarded; missing trailing values reuse the final point.
    """
    x_new = new_nlp.x0.copy()
    lam_new = np.zeros(new_nlp.eq_mask.size)
    for b_new in new_nlp.blocks:
        if not old_nlp.has_block(b_new.kind, b_new.tag):
            continue
        b_old = old_nlp.block(b_new.kind, b_new.tag)
        if b_new.count == 1:
            x_new[b_new.start] = x_old[b_old.start]
            continue
        take = min(b_old.count - 1, b_new.count)
        seg = x_old[b_old.start + 1:b_old.start + 1 + take]
        x_new[b_new.start:b_new.start + take] = seg
        x_new[b_new.start + take:b_new.start + b_new.count] = seg[-1] if take else 0.0
    old_fams = {f.name: f for f in old_nlp.families}
    for fam in new_nlp.families:
        src = old_fams.get(fam.name)
        if src is None:
            continue
        drop = src.rows - fam.rows
        if drop < 0:
            continue
        lam_new[fam.row_start:fam.row_start + fam.rows] = \
            lam_old[src.row_start + drop:src.row_start + src.rows]
    return np.clip(x_new, new_nlp.lb, new_nlp.ub), lam_new
