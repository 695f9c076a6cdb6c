"""
Component subproblems of the modified Lagrange dual.

Every generator, bus and line owns a small problem coupled to the rest of
the network only through the multipliers. Generators and buses have closed
forms; lines are solved locally with :mod:`opfdd.nlp`.

Sign convention: the Lagrangian adds ``lam_p * r_p + lam_q * r_q`` for each
bus balance residual and ``lam_v * (v_i - v_i(ij)) + lam_th * (th_i - th_i(ij))``
for each branch end, so the subgradient is exactly the residual vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nlp
from .errors import NonCoerciveBus, NonconvexQuadratic
from .network import Branch, BranchCoeffs, Bus, Generator, Network

VARIANTS = ("A1", "A2", "A3")

#: Line state layout: ``[p_ij, q_ij, p_ji, q_ji, v_i(ij), th_i(ij), v_j(ji), th_j(ji)]``.
FLAT_LINE = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0])
FLOW_MASK = np.array([1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
FULL_MASK = np.ones(8)


@dataclass(frozen=True)
class AlgoParams:
    """Algorithm variant, penalty weights, step sizes and stopping tolerance.

    ``variant`` may be left as ``None`` for a bare parameter setting; it has
    to be filled in before a run. A1 ignores both penalties, A2 ignores
    ``rho_pq``.
    """

    nu: float
    rho_pq: float = 0.0
    rho_vth: float = 0.0
    alpha_i: float = 0.0
    alpha_ij: float = 0.0
    epsilon: float = 1e-4
    variant: str | None = None

    def __post_init__(self):
        for name in ("nu", "rho_pq", "rho_vth", "alpha_i", "alpha_ij"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.variant is not None:
            v = self.variant.upper()
            if v not in VARIANTS:
                raise ValueError(f"unknown variant {self.variant!r}")
            object.__setattr__(self, "variant", v)

    @property
    def rho_v(self):
        """Consensus penalty actually applied (zero for A1)."""
        return 0.0 if self.variant == "A1" else self.rho_vth

    @property
    def rho_c(self):
        """Power-coupling penalty actually applied (A3 only)."""
        return self.rho_pq if self.variant == "A3" else 0.0


@dataclass
class MultiplierSet:
    """Balance multipliers per bus and consensus multipliers per branch end.

    ``lam_v`` and ``lam_th`` have shape ``(n_branch, 2)``; column 0 is the
    from end ``(i, (ij))`` and column 1 the to end ``(j, (ji))``.
    """

    lam_p: np.ndarray
    lam_q: np.ndarray
    lam_v: np.ndarray
    lam_th: np.ndarray

    @classmethod
    def zeros(cls, net: Network):
        nb, nl = net.n_bus, net.n_branch
        return cls(np.zeros(nb), np.zeros(nb), np.zeros((nl, 2)), np.zeros((nl, 2)))

    def flat(self):
        """Stack into one vector: ``[lam_p, lam_q, lam_v, lam_th]``."""
        return np.concatenate([self.lam_p, self.lam_q, self.lam_v.ravel(), self.lam_th.ravel()])

    @classmethod
    def from_flat(cls, net: Network, x):
        nb, nl = net.n_bus, net.n_branch
        x = np.asarray(x, float)
        if x.shape != (2 * nb + 4 * nl,):
            raise ValueError(f"expected {2 * nb + 4 * nl} values, got {x.shape}")
        return cls(x[:nb].copy(), x[nb:2 * nb].copy(),
                   x[2 * nb:2 * nb + 2 * nl].reshape(nl, 2).copy(),
                   x[2 * nb + 2 * nl:].reshape(nl, 2).copy())

    def copy(self):
        return MultiplierSet(self.lam_p.copy(), self.lam_q.copy(),
                             self.lam_v.copy(), self.lam_th.copy())

    def line(self, net: Network, k):
        """The eight multipliers seen by branch ``k``, in line-state order."""
        f, t = net.f_idx[k], net.t_idx[k]
        return np.array([self.lam_p[f], self.lam_q[f], self.lam_p[t], self.lam_q[t],
                         self.lam_v[k, 0], self.lam_th[k, 0], self.lam_v[k, 1], self.lam_th[k, 1]])


@dataclass
class ComponentState:
    """Duplicated primal variables: ``gen (n_gen, 2)``, ``line (n_branch, 8)``, ``bus (n_bus, 2)``."""

    gen: np.ndarray
    line: np.ndarray
    bus: np.ndarray
    line_status: list = field(default_factory=list)

    @classmethod
    def flat(cls, net: Network):
        """Algorithmic starting point: midpoint dispatch, flat lines and buses."""
        vec = net.vectors()
        gen = np.column_stack([(vec["p_min"] + vec["p_max"]) / 2, (vec["q_min"] + vec["q_max"]) / 2])
        line = np.tile(FLAT_LINE, (net.n_branch, 1))
        bus = np.column_stack([np.ones(net.n_bus), np.zeros(net.n_bus)])
        return cls(gen, line, bus)

    def copy(self):
        return ComponentState(self.gen.copy(), self.line.copy(), self.bus.copy(), list(self.line_status))

    def bus_flows(self, net: Network):
        """Per-bus sums of the line-side flows leaving each bus."""
        nb = net.n_bus
        p = (np.bincount(net.f_idx, self.line[:, 0], nb) + np.bincount(net.t_idx, self.line[:, 2], nb))
        q = (np.bincount(net.f_idx, self.line[:, 1], nb) + np.bincount(net.t_idx, self.line[:, 3], nb))
        return p, q

    def bus_gen(self, net: Network):
        nb = net.n_bus
        return (np.bincount(net.gen_idx, self.gen[:, 0], nb),
                np.bincount(net.gen_idx, self.gen[:, 1], nb))


# --------------------------------------------------------------------------
# generators


def _gen_kernel(c2, c1, c0, p_min, p_max, q_min, q_max, lam_p, lam_q,
                p_prev, q_prev, pc, qc, nu, rho):
    """Vectorised closed form of the generator problem.

    Minimises ``c2 p^2 + c1 p + c0 + lam_p p + lam_q q + nu/2 |x - x_prev|^2
    + rho ((p - pc)^2 + (q - qc)^2)`` over the box.
    """
    c2 = np.asarray(c2, float)
    if np.any(c2 + nu / 2 + rho <= 0):
        raise NonconvexQuadratic("generator subproblem is not strictly convex")
    if rho == 0:
        pc = qc = 0.0
    p = np.clip((-c1 - lam_p + nu * p_prev + 2 * rho * pc) / (2 * c2 + nu + 2 * rho), p_min, p_max)
    q = np.clip((-lam_q + nu * q_prev + 2 * rho * qc) / (nu + 2 * rho), q_min, q_max) \
        if nu + rho > 0 else np.where(lam_q > 0, q_min, q_max)
    val = (c2 * p * p + c1 * p + c0 + lam_p * p + lam_q * q
           + nu / 2 * ((p - p_prev) ** 2 + (q - q_prev) ** 2))
    if rho:
        val = val + rho * ((p - pc) ** 2 + (q - qc) ** 2)
    return p, q, val


def gen_subproblem(g: Generator, lam, prev, targets, params: AlgoParams):
    """Closed-form generator update.

    Parameters
    ----------
    g : Generator
    lam : (lam_p, lam_q) of the generator's bus
    prev : (p, q) at the current iterate, the proximal anchor
    targets : (pc, qc) or None; required for A3
    params : AlgoParams

    Returns
    -------
    (p, q, value), value being the generator's share of the dual function.
    """
    rho = params.rho_c
    if rho and targets is None:
        raise ValueError("A3 generator update needs coupling targets")
    pc, qc = targets if targets is not None else (0.0, 0.0)
    p, q, val = _gen_kernel(g.c2, g.c1, g.c0, g.p_min, g.p_max, g.q_min, g.q_max,
                            lam[0], lam[1], prev[0], prev[1], pc, qc, params.nu, rho)
    return float(p), float(q), float(val)


def gen_round(net: Network, lam: MultiplierSet, state: ComponentState, targets, params: AlgoParams):
    """All generator updates at once; returns ``(gen array, values)``."""
    vec = net.vectors()
    gi = net.gen_idx
    rho = params.rho_c
    pc, qc = (targets[0], targets[1]) if rho else (0.0, 0.0)
    p, q, val = _gen_kernel(vec["c2"], vec["c1"], vec["c0"], vec["p_min"], vec["p_max"],
                            vec["q_min"], vec["q_max"], lam.lam_p[gi], lam.lam_q[gi],
                            state.gen[:, 0], state.gen[:, 1], pc, qc, params.nu, rho)
    return np.column_stack([p, q]), val


# --------------------------------------------------------------------------
# buses


def _bus_kernel(g_sh, b_sh, p_d, q_d, lam_p, lam_q, sum_lv, sum_lth, degree,
                sum_v, sum_th, sum_v2, sum_th2, v_prev, th_prev, nu, rho):
    """Vectorised closed form of the bus problem; see :func:`bus_subproblem`."""
    a = 2 * (-lam_p * g_sh + lam_q * b_sh) + rho * degree + nu
    a_th = rho * degree + nu
    if np.any(a <= 0) or np.any(a_th <= 0):
        raise NonCoerciveBus("bus subproblem is unbounded below; increase rho_vth or nu")
    v = (rho * sum_v - sum_lv + nu * v_prev) / a
    th = (rho * sum_th - sum_lth + nu * th_prev) / a_th
    val = (lam_p * (-p_d - g_sh * v * v) + lam_q * (-q_d + b_sh * v * v)
           + sum_lv * v + sum_lth * th
           + rho / 2 * (degree * v * v - 2 * v * sum_v + sum_v2
                        + degree * th * th - 2 * th * sum_th + sum_th2)
           + nu / 2 * ((v - v_prev) ** 2 + (th - th_prev) ** 2))
    return v, th, val


def bus_subproblem(b: Bus, lam, neighbors, prev, params: AlgoParams):
    """Closed-form bus update.

    Parameters
    ----------
    b : Bus
    lam : (lam_p, lam_q, lam_v, lam_th) where ``lam_v`` and ``lam_th`` list the
        consensus multipliers of the bus's branch ends
    neighbors : (v_hat, th_hat), the line-side copies of this bus's voltage,
        in the same order as ``lam_v``
    prev : (v, th) at the current iterate
    params : AlgoParams

    Returns
    -------
    (v, th, value)

    Raises
    ------
    NonCoerciveBus
        If the voltage curvature ``2(-lam_p g_sh + lam_q b_sh) + rho |B_i| + nu``
        is not positive.
    """
    lam_p, lam_q, lam_v, lam_th = lam
    v_hat, th_hat = (np.asarray(x, float) for x in neighbors)
    lam_v, lam_th = np.asarray(lam_v, float), np.asarray(lam_th, float)
    if not (v_hat.shape == th_hat.shape == lam_v.shape == lam_th.shape):
        raise ValueError("neighbour copies and consensus multipliers must align")
    v, th, val = _bus_kernel(b.g_sh, b.b_sh, b.p_d, b.q_d, lam_p, lam_q, lam_v.sum(),
                             lam_th.sum(), v_hat.size, v_hat.sum(), th_hat.sum(),
                             v_hat @ v_hat, th_hat @ th_hat, prev[0], prev[1],
                             params.nu, params.rho_v)
    return float(v), float(th), float(val)


def bus_round(net: Network, lam: MultiplierSet, state: ComponentState, params: AlgoParams):
    """All bus updates at once, using the line copies held in ``state``."""
    vec = net.vectors()
    nb, f, t = net.n_bus, net.f_idx, net.t_idx
    line = state.line

    def ends(col_f, col_t):
        return np.bincount(f, col_f, nb) + np.bincount(t, col_t, nb)

    degree = ends(np.ones(len(f)), np.ones(len(t)))
    v, th, val = _bus_kernel(
        vec["g_sh"], vec["b_sh"], vec["p_d"], vec["q_d"], lam.lam_p, lam.lam_q,
        ends(lam.lam_v[:, 0], lam.lam_v[:, 1]), ends(lam.lam_th[:, 0], lam.lam_th[:, 1]),
        degree, ends(line[:, 4], line[:, 6]), ends(line[:, 5], line[:, 7]),
        ends(line[:, 4] ** 2, line[:, 6] ** 2), ends(line[:, 5] ** 2, line[:, 7] ** 2),
        state.bus[:, 0], state.bus[:, 1], params.nu, params.rho_v)
    return np.column_stack([v, th]), val


# --------------------------------------------------------------------------
# lines


class LineProblem:
    """Reduced line subproblem in ``y = (v_i, v_j, th_i - th_j, th_i + th_j)``.

    Flows are substituted by their polar expressions, so only the voltage
    boxes, the angle-difference box and the two thermal limits remain. The
    objective is divided by ``scale`` for conditioning; :meth:`value`
    reports it unscaled.
    """

    def __init__(self, br: Branch, c: BranchCoeffs, v_box_i, v_box_j, lam, x_prev, mask, nu,
                 anchors=None, rho_v=0.0, targets=None, rho_pq=0.0):
        self.c = c.as_array() if isinstance(c, BranchCoeffs) else np.asarray(c, float)
        self.lam = np.asarray(lam, float)
        self.x_prev = np.asarray(x_prev, float)
        self.w = nu * np.asarray(mask, float)
        self.anchors = None if anchors is None or rho_v == 0 else np.asarray(anchors, float)
        self.rho_v = rho_v
        self.targets = None if targets is None or rho_pq == 0 else np.asarray(targets, float)
        self.rho_pq = rho_pq
        self.scale = max(1.0, nu, rho_v, rho_pq)
        self.s_max = br.s_max
        self.lower = np.array([v_box_i[0], v_box_j[0], br.angle_min, -np.inf])
        self.upper = np.array([v_box_i[1], v_box_j[1], br.angle_max, np.inf])

    def _flows(self, y):
        gcf, bcf, gf, bf, gct, bct, gt, bt = self.c
        vi, vj, d = y[0], y[1], y[2]
        cs, sn = np.cos(d), np.sin(d)
        vv = vi * vj
        a, b = vv * cs, vv * sn
        flows = np.array([gcf * vi * vi - gf * a + bf * b,
                          bcf * vi * vi - bf * a - gf * b,
                          gct * vj * vj - gt * a - bt * b,
                          bct * vj * vj - bt * a + gt * b])
        jc, js = vj * cs, vj * sn
        ic, is_ = vi * cs, vi * sn
        jac = np.array([
            [2 * gcf * vi - gf * jc + bf * js, -gf * ic + bf * is_, gf * b + bf * a],
            [2 * bcf * vi - bf * jc - gf * js, -bf * ic - gf * is_, bf * b - gf * a],
            [-gt * jc - bt * js, 2 * gct * vj - gt * ic - bt * is_, gt * b - bt * a],
            [-bt * jc + gt * js, 2 * bct * vj - bt * ic + gt * is_, bt * b + gt * a],
        ])
        return flows, jac

    def state(self, y):
        """Full eight-component line state at ``y``."""
        flows, _ = self._flows(y)
        return np.concatenate([flows, [y[0], (y[3] + y[2]) / 2, y[1], (y[3] - y[2]) / 2]])

    def _raw(self, y):
        flows, jf = self._flows(y)
        x = np.concatenate([flows, [y[0], (y[3] + y[2]) / 2, y[1], (y[3] - y[2]) / 2]])
        dx = x - self.x_prev
        f = -self.lam @ x + 0.5 * (self.w @ (dx * dx))
        gx = -self.lam + self.w * dx
        if self.anchors is not None:
            e = x[4:] - self.anchors
            f += 0.5 * self.rho_v * (e @ e)
            gx[4:] += self.rho_v * e
        if self.targets is not None:
            e = flows - self.targets
            f += 0.5 * self.rho_pq * (e @ e)
            gx[:4] += self.rho_pq * e
        grad = np.empty(4)
        grad[:3] = gx[:4] @ jf
        grad[0] += gx[4]
        grad[1] += gx[6]
        grad[2] += 0.5 * (gx[5] - gx[7])
        grad[3] = 0.5 * (gx[5] + gx[7])
        return f, grad

    def objective(self, y):
        f, g = self._raw(y)
        return f / self.scale, g / self.scale

    def value(self, y):
        return float(self._raw(y)[0])

    def thermal(self, y):
        flows, jf = self._flows(y)
        s2 = self.s_max * self.s_max
        val = np.array([flows[0] ** 2 + flows[1] ** 2, flows[2] ** 2 + flows[3] ** 2]) / s2 - 1.0
        jac = np.zeros((2, 4))
        jac[0, :3] = 2 * (flows[0] * jf[0] + flows[1] * jf[1]) / s2
        jac[1, :3] = 2 * (flows[2] * jf[2] + flows[3] * jf[3]) / s2
        return val, jac

    def nlp_problem(self):
        ineq = self.thermal if self.s_max is not None else None
        return nlp.NlpProblem(4, self.objective, self.lower, self.upper, ineq=ineq)

    @staticmethod
    def to_y(x):
        """Map a line state (or warm start) to the reduced coordinates."""
        return np.array([x[4], x[6], x[5] - x[7], x[5] + x[7]])


def line_subproblem(br: Branch, c: BranchCoeffs, lam, bus_anchors, flow_targets, prev,
                    params: AlgoParams, warm_start=None, v_boxes=None, tol=1e-8,
                    max_iter=200, inner_max_iter=500):
    """Solve one line subproblem locally.

    Parameters
    ----------
    br, c : Branch and its coefficients
    lam : the eight multipliers ``[lam_p_i, lam_q_i, lam_p_j, lam_q_j,
        lam_v_ij, lam_th_ij, lam_v_ji, lam_th_ji]``
    bus_anchors : (v_i, th_i, v_j, th_j) of the buses at the current iterate;
        used by A2/A3
    flow_targets : (pc_ij, qc_ij, pc_ji, qc_ji) or None; used by A3
    prev : line state at the current iterate, the proximal anchor
    params : AlgoParams
    warm_start : line state to start from; the flat point by default
    v_boxes : ((v_min_i, v_max_i), (v_min_j, v_max_j))

    Returns
    -------
    (line state, value, NlpResult)
    """
    if params.variant is None:
        raise ValueError("params.variant must be set")
    if v_boxes is None:
        raise ValueError("voltage boxes of both end buses are required")
    mask = FULL_MASK if params.variant == "A1" else FLOW_MASK
    if params.rho_c and flow_targets is None:
        raise ValueError("A3 line update needs flow targets")
    prob = LineProblem(br, c, v_boxes[0], v_boxes[1], lam, prev, mask, params.nu,
                       anchors=bus_anchors, rho_v=params.rho_v,
                       targets=flow_targets, rho_pq=params.rho_c)
    y0 = LineProblem.to_y(FLAT_LINE if warm_start is None else warm_start)
    res = nlp.solve(prob.nlp_problem(), y0, tol=tol, max_iter=max_iter,
                    inner_max_iter=inner_max_iter)
    return prob.state(res.x), prob.value(res.x), res


def line_round(net: Network, lam: MultiplierSet, state: ComponentState, targets,
               params: AlgoParams, warm="flat", map_fn=map):
    """All line updates; ``map_fn`` may fan the branches out to a pool.

    Returns ``(line array, values, statuses)``.
    """
    vec = net.vectors()
    f, t = net.f_idx, net.t_idx

    def solve(k):
        i, j = f[k], t[k]
        anchors = (state.bus[i, 0], state.bus[i, 1], state.bus[j, 0], state.bus[j, 1])
        tg = targets[2][k] if params.rho_c else None
        ws = state.line[k] if warm == "previous" else None
        x, val, res = line_subproblem(
            net.branches[k], net.coeffs[k], lam.line(net, k), anchors, tg, state.line[k],
            params, warm_start=ws,
            v_boxes=((vec["v_min"][i], vec["v_max"][i]), (vec["v_min"][j], vec["v_max"][j])))
        return x, val, res.status

    out = list(map_fn(solve, range(net.n_branch)))
    line = np.array([o[0] for o in out]).reshape(net.n_branch, 8)
    return line, np.array([o[1] for o in out]), [o[2] for o in out]


# --------------------------------------------------------------------------
# coupling and dual value


def residuals(net: Network, state: ComponentState):
    """Bus balance residuals ``(r_p, r_q)`` of a component state."""
    vec = net.vectors()
    pg, qg = state.bus_gen(net)
    pl, ql = state.bus_flows(net)
    v2 = state.bus[:, 0] ** 2
    r_p = pg - vec["p_d"] - pl - vec["g_sh"] * v2
    r_q = qg - vec["q_d"] - ql + vec["b_sh"] * v2
    return r_p, r_q


def coupling_targets(net: Network, state: ComponentState):
    """Targets each component would need to close its bus's balance alone.

    Returns ``(pc_g, qc_g, line_targets)`` with ``line_targets`` of shape
    ``(n_branch, 4)`` ordered ``(pc_ij, qc_ij, pc_ji, qc_ji)``. Each target is
    the component's own value minus (generators) or plus (lines) the bus
    residual, which is the same sum with the component's own term left out.
    """
    r_p, r_q = residuals(net, state)
    gi, f, t = net.gen_idx, net.f_idx, net.t_idx
    pc_g = state.gen[:, 0] - r_p[gi]
    qc_g = state.gen[:, 1] - r_q[gi]
    line = np.column_stack([state.line[:, 0] + r_p[f], state.line[:, 1] + r_q[f],
                            state.line[:, 2] + r_p[t], state.line[:, 3] + r_q[t]])
    return pc_g, qc_g, line


@dataclass
class Sweep:
    """Result of one pass over every component at fixed multipliers."""

    state: ComponentState
    gen_values: np.ndarray
    bus_values: np.ndarray
    line_values: np.ndarray

    @property
    def dual_value(self):
        return float(self.gen_values.sum() + self.bus_values.sum() + self.line_values.sum())


def sweep(net: Network, lam: MultiplierSet, state: ComponentState, params: AlgoParams,
          warm="flat", map_fn=map) -> Sweep:
    """Solve all subproblems at ``lam`` starting from iterate ``state``.

    A1 solves every component against iteration ``k`` values. A2 and A3
    solve generators and lines first, then buses against the fresh line
    copies.
    """
    if params.variant is None:
        raise ValueError("params.variant must be set")
    targets = coupling_targets(net, state) if params.rho_c else None
    gen, gen_val = gen_round(net, lam, state, targets, params)
    line, line_val, status = line_round(net, lam, state, targets, params, warm, map_fn)
    if params.variant == "A1":
        bus, bus_val = bus_round(net, lam, state, params)
    else:
        mid = ComponentState(state.gen, line, state.bus)
        bus, bus_val = bus_round(net, lam, mid, params)
    return Sweep(ComponentState(gen, line, bus, status), gen_val, bus_val, line_val)


def modified_dual_value(net: Network, lam: MultiplierSet, state: ComponentState,
                        params: AlgoParams) -> float:
    """Modified dual function at ``lam`` with proximal anchors taken from ``state``.

    Equal to the sum of the generator, bus and line optimal values, in $/hr.
    """
    return sweep(net, lam, state, params).dual_value
