"""
Centralized polar AC OPF: flow equations, balance residuals, objective and
the full-network solve used as the reference primal value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nlp
from .errors import SolverDiverged
from .network import BranchCoeffs, Network

TWO_PI = 2 * np.pi


@dataclass
class FlowState:
    v: np.ndarray
    theta: np.ndarray
    p_g: np.ndarray
    q_g: np.ndarray
    p_f: np.ndarray
    q_f: np.ndarray
    p_t: np.ndarray
    q_t: np.ndarray

    def check(self, net: Network):
        nb, ng, nl = net.n_bus, net.n_gen, net.n_branch
        for name, size in (("v", nb), ("theta", nb), ("p_g", ng), ("q_g", ng),
                           ("p_f", nl), ("q_f", nl), ("p_t", nl), ("q_t", nl)):
            if np.shape(getattr(self, name)) != (size,):
                raise ValueError(f"FlowState.{name} should have shape ({size},)")
        return self


def _unpack(c):
    if isinstance(c, BranchCoeffs):
        return (c.g_c_ff, c.b_c_ff, c.g_ff, c.b_ff, c.g_c_tt, c.b_c_tt, c.g_tt, c.b_tt)
    c = np.asarray(c)
    return tuple(c[..., k] for k in range(8))


def branch_flows(c, v_f, th_f, v_t, th_t):
    """Directed flows ``(p_f, q_f, p_t, q_t)`` of one branch or a stack of them.

    ``c`` is a :class:`BranchCoeffs` or an array whose last axis holds the
    eight coefficients.
    """
    gcf, bcf, gf, bf, gct, bct, gt, bt = _unpack(c)
    d = th_f - th_t
    vv = v_f * v_t
    cs, sn = vv * np.cos(d), vv * np.sin(d)
    p_f = gcf * v_f * v_f - gf * cs + bf * sn
    q_f = bcf * v_f * v_f - bf * cs - gf * sn
    p_t = gct * v_t * v_t - gt * cs - bt * sn
    q_t = bct * v_t * v_t - bt * cs + gt * sn
    return p_f, q_f, p_t, q_t


def flow_jacobian(c, v_f, th_f, v_t, th_t):
    """Derivatives of ``(p_f, q_f, p_t, q_t)`` w.r.t. ``(v_f, th_f, v_t, th_t)``.

    Returns an array of shape ``(..., 4, 4)`` (rows: flows, columns: inputs).
    """
    gcf, bcf, gf, bf, gct, bct, gt, bt = _unpack(c)
    d = th_f - th_t
    cos, sin = np.cos(d), np.sin(d)
    vv = v_f * v_t
    J = np.empty(np.broadcast(v_f, v_t, d, gf).shape + (4, 4))
    # p_f
    J[..., 0, 0] = 2 * gcf * v_f - gf * v_t * cos + bf * v_t * sin
    J[..., 0, 1] = vv * (gf * sin + bf * cos)
    J[..., 0, 2] = v_f * (-gf * cos + bf * sin)
    J[..., 0, 3] = -J[..., 0, 1]
    # q_f
    J[..., 1, 0] = 2 * bcf * v_f - bf * v_t * cos - gf * v_t * sin
    J[..., 1, 1] = vv * (bf * sin - gf * cos)
    J[..., 1, 2] = v_f * (-bf * cos - gf * sin)
    J[..., 1, 3] = -J[..., 1, 1]
    # p_t
    J[..., 2, 0] = v_t * (-gt * cos - bt * sin)
    J[..., 2, 1] = vv * (gt * sin - bt * cos)
    J[..., 2, 2] = 2 * gct * v_t - gt * v_f * cos - bt * v_f * sin
    J[..., 2, 3] = -J[..., 2, 1]
    # q_t
    J[..., 3, 0] = v_t * (-bt * cos + gt * sin)
    J[..., 3, 1] = vv * (bt * sin + gt * cos)
    J[..., 3, 2] = 2 * bct * v_t - bt * v_f * cos + gt * v_f * sin
    J[..., 3, 3] = -J[..., 3, 1]
    return J


def network_flows(net: Network, v, theta):
    f, t = net.f_idx, net.t_idx
    return branch_flows(net.coeffs, v[f], theta[f], v[t], theta[t])


def flow_state(net: Network, v, theta, p_g, q_g) -> FlowState:
    """A :class:`FlowState` whose branch flows are consistent with ``(v, theta)``."""
    v, theta = np.asarray(v, float), np.asarray(theta, float)
    return FlowState(v, theta, np.asarray(p_g, float), np.asarray(q_g, float),
                     *network_flows(net, v, theta))


def flat_start(net: Network) -> FlowState:
    """``v = 1``, ``theta = 0``, dispatch at the middle of its box."""
    vec = net.vectors()
    return flow_state(net, np.ones(net.n_bus), np.zeros(net.n_bus),
                      0.5 * (vec["p_min"] + vec["p_max"]), 0.5 * (vec["q_min"] + vec["q_max"]))


def _bus_sum(net, index, values):
    return np.bincount(index, weights=values, minlength=net.n_bus)


def balance_residuals(net: Network, s: FlowState):
    """Per-bus active/reactive power-balance residuals ``(r_p, r_q)``.

    ``r_p = sum(p_g) - p_d - sum(p_branch) - g_sh v^2`` and
    ``r_q = sum(q_g) - q_d - sum(q_branch) + b_sh v^2``.
    """
    vec = net.vectors()
    out_p = _bus_sum(net, net.f_idx, s.p_f) + _bus_sum(net, net.t_idx, s.p_t)
    out_q = _bus_sum(net, net.f_idx, s.q_f) + _bus_sum(net, net.t_idx, s.q_t)
    v2 = s.v * s.v
    r_p = _bus_sum(net, net.gen_idx, s.p_g) - vec["p_d"] - out_p - vec["g_sh"] * v2
    r_q = _bus_sum(net, net.gen_idx, s.q_g) - vec["q_d"] - out_q + vec["b_sh"] * v2
    return r_p, r_q


def objective(net: Network, p_g) -> float:
    """Total generation cost in $/hr of a per-unit dispatch."""
    vec = net.vectors()
    p_g = np.asarray(p_g, float)
    return float(np.sum((vec["c2"] * p_g + vec["c1"]) * p_g + vec["c0"]))


# ---------------------------------------------------------------------------
# centralized solve

class _CentralProblem:
    """Reduced-space OPF with flows substituted: ``x = [v, theta, p_g, q_g]``."""

    def __init__(self, net: Network, cost_scale: float):
        self.net = net
        nb, ng = net.n_bus, net.n_gen
        self.nb, self.ng = nb, ng
        self.n = 2 * nb + 2 * ng
        self.vec = net.vectors()
        self.scale = cost_scale
        self.limited = np.array([k for k, br in enumerate(net.branches) if br.s_max is not None], dtype=int)
        self.s2 = np.array([net.branches[k].s_max ** 2 for k in self.limited])
        lo_ang, hi_ang = [], []
        for k, br in enumerate(net.branches):
            if br.angle_min > -TWO_PI:
                lo_ang.append(k)
            if br.angle_max < TWO_PI:
                hi_ang.append(k)
        self.lo_ang = np.array(lo_ang, dtype=int)
        self.hi_ang = np.array(hi_ang, dtype=int)

    def split(self, x):
        nb, ng = self.nb, self.ng
        return x[:nb], x[nb:2 * nb], x[2 * nb:2 * nb + ng], x[2 * nb + ng:]

    def bounds(self):
        nb, ng, vec = self.nb, self.ng, self.vec
        lo = np.concatenate([vec["v_min"], np.full(nb, -np.inf), vec["p_min"], vec["q_min"]])
        hi = np.concatenate([vec["v_max"], np.full(nb, np.inf), vec["p_max"], vec["q_max"]])
        ref = nb + self.net.ref_index
        lo[ref] = hi[ref] = 0.0
        return lo, hi

    def objective(self, x):
        _, _, pg, _ = self.split(x)
        vec = self.vec
        f = np.sum((vec["c2"] * pg + vec["c1"]) * pg + vec["c0"])
        grad = np.zeros(self.n)
        grad[2 * self.nb:2 * self.nb + self.ng] = 2 * vec["c2"] * pg + vec["c1"]
        return f / self.scale, grad / self.scale

    def _flows(self, x):
        v, th, _, _ = self.split(x)
        net = self.net
        f, t = net.f_idx, net.t_idx
        flows = branch_flows(net.coeffs, v[f], th[f], v[t], th[t])
        jac = flow_jacobian(net.coeffs, v[f], th[f], v[t], th[t])
        return flows, jac

    def _columns(self):
        net, nb = self.net, self.nb
        f, t = net.f_idx, net.t_idx
        return np.stack([f, nb + f, t, nb + t], axis=1)

    def eq(self, x):
        net, nb, ng, vec = self.net, self.nb, self.ng, self.vec
        v, _, pg, qg = self.split(x)
        (pf, qf, pt, qt), J = self._flows(x)
        s = FlowState(v, None, pg, qg, pf, qf, pt, qt)
        r_p, r_q = balance_residuals(net, s)
        jac = np.zeros((2 * nb, self.n))
        cols = self._columns()
        f, t = net.f_idx, net.t_idx
        for row_off, frow, trow in ((0, 0, 2), (nb, 1, 3)):
            for end_bus, jrow in ((f, frow), (t, trow)):
                rows = row_off + end_bus
                np.add.at(jac, (rows[:, None], cols), -J[:, jrow, :])
        idx = np.arange(nb)
        jac[idx, idx] += -2 * vec["g_sh"] * v
        jac[nb + idx, idx] += 2 * vec["b_sh"] * v
        gi = net.gen_idx
        jac[gi, 2 * nb + np.arange(ng)] = 1.0
        jac[nb + gi, 2 * nb + ng + np.arange(ng)] = 1.0
        return np.concatenate([r_p, r_q]), jac

    def ineq(self, x):
        nb = self.nb
        (pf, qf, pt, qt), J = self._flows(x)
        cols = self._columns()
        lim = self.limited
        vals, rows = [], []
        if lim.size:
            for p_, q_, rp, rq in ((pf, qf, 0, 1), (pt, qt, 2, 3)):
                vals.append(p_[lim] ** 2 + q_[lim] ** 2 - self.s2)
                block = np.zeros((lim.size, self.n))
                dd = 2 * p_[lim, None] * J[lim, rp, :] + 2 * q_[lim, None] * J[lim, rq, :]
                np.add.at(block, (np.arange(lim.size)[:, None], cols[lim]), dd)
                rows.append(block)
        f, t = self.net.f_idx, self.net.t_idx
        for ks, sign in ((self.hi_ang, 1.0), (self.lo_ang, -1.0)):
            if ks.size == 0:
                continue
            bound = np.array([self.net.branches[k].angle_max if sign > 0 else self.net.branches[k].angle_min
                              for k in ks])
            _, th, _, _ = self.split(x)
            vals.append(sign * (th[f[ks]] - th[t[ks]] - bound))
            block = np.zeros((ks.size, self.n))
            block[np.arange(ks.size), nb + f[ks]] = sign
            block[np.arange(ks.size), nb + t[ks]] = -sign
            rows.append(block)
        if not vals:
            return np.zeros(0), np.zeros((0, self.n))
        return np.concatenate(vals), np.vstack(rows)

    def has_ineq(self):
        return self.limited.size + self.lo_ang.size + self.hi_ang.size > 0


def solve_centralized(net: Network, start: FlowState | None = None, tol=1e-8,
                      max_iter=200, inner_max_iter=5000):
    """Solve the full OPF from ``start`` (flat start by default).

    Returns ``(state, cost)`` with cost in $/hr. The slack-bus angle is fixed
    at zero. Raises :class:`SolverDiverged` if the engine does not reach
    ``tol``; the partial result is attached as ``exc.result``.
    """
    start = flat_start(net) if start is None else start
    x0 = np.concatenate([start.v, start.theta, start.p_g, start.q_g])
    scale = max(1.0, abs(objective(net, start.p_g)))
    prob = _CentralProblem(net, scale)
    lo, hi = prob.bounds()
    problem = nlp.NlpProblem(prob.n, prob.objective, lo, hi,
                             ineq=prob.ineq if prob.has_ineq() else None, eq=prob.eq)
    res = nlp.solve(problem, x0, tol=tol, max_iter=max_iter, inner_max_iter=inner_max_iter)
    v, th, pg, qg = prob.split(res.x)
    state = flow_state(net, v, th, pg, qg)
    cost = objective(net, pg)
    if not res.converged:
        exc = SolverDiverged(f"centralized solve ended with status {res.status} "
                             f"(KKT residual {res.kkt_residual:.3g})")
        exc.result = (state, cost, res)
        raise exc
    return state, cost
