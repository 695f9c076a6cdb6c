"""
Outer loop of the distributed algorithms: subproblem sweeps, multiplier
ascent, stopping test, gap diagnostics and the named parameter settings.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .decomposition import AlgoParams, ComponentState, MultiplierSet, residuals, sweep
from .errors import SolverDiverged, UnknownSetting
from .formulation import flat_start, objective, solve_centralized
from .network import Network

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
DIVERGED = "diverged"

DEFAULT_MAX_ITER = 200_000
DIVERGENCE_FACTOR = 1e6

# name: (nu, rho_pq, rho_vth, alpha_i, alpha_ij)
SETTINGS = {
    "A": (3000, 30, 300000, 300, 300000),
    "B": (1000, 100, 10000, 100, 10000),
    "C": (1000, 1000, 100000, 100, 100000),
    "D": (100, 1, 10000, 10, 10000),
    "E": (5000, 500, 50000, 500, 50000),
    "F": (3000, 300, 300000, 300, 300000),
    "G": (100, 10, 1000, 10, 1000),
    "H": (5000, 500, 500000, 500, 500000),
    "I": (100, 10, 10000, 10, 10000),
    "J": (10000, 100, 100000, 1000, 100000),
    "K": (10000, 1000, 10000, 1000, 10000),
    "L": (1000, 100, 100000, 100, 100000),
    "M": (8000, 800, 800000, 800, 800000),
    "N": (5000, 500, 100000, 500, 100000),
    "O": (80000, 8000, 100000, 8000, 100000),
    "P": (10000, 1000, 100000, 1000, 100000),
    "Q": (10000, 1000, 100000, 1000, 100000),
    "R": (1000, 10, 10000, 100, 10000),
    "S": (50000, 5000, 500000, 5000, 500000),
    "T": (8000, 800, 100000, 800, 100000),
}


def lookup_setting(name: str) -> AlgoParams:
    """Named parameter setting, returned without a variant."""
    key = str(name).strip().upper()
    if key not in SETTINGS:
        raise UnknownSetting(f"unknown setting {name!r}; expected one of A..T")
    nu, rho_pq, rho_vth, alpha_i, alpha_ij = SETTINGS[key]
    return AlgoParams(nu=float(nu), rho_pq=float(rho_pq), rho_vth=float(rho_vth),
                      alpha_i=float(alpha_i), alpha_ij=float(alpha_ij))


@dataclass(frozen=True)
class IterationTrace:
    k: int
    residual_norm: float
    dual_value: float
    gen_cost: float
    wall_ms: float


@dataclass
class RunReport:
    converged: bool
    iterations: int
    p_ipm: float | None
    p_amd: float
    d_amd: float
    amd_gap: float | None
    ro_gap: float | None
    status: str = CONVERGED
    residual_norm: float = math.nan
    params: dict = field(default_factory=dict)
    case: str = ""
    version: str = __version__

    def to_json(self, indent=2):
        """Serialise to JSON; non-finite numbers become ``null``."""
        doc = {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
               for k, v in asdict(self).items()}
        return json.dumps(doc, indent=indent, allow_nan=False)


def gaps(p_ipm, p_amd, d_amd):
    """``(amd_gap, ro_gap)`` in percent of the centralized cost."""
    if p_ipm == 0:
        raise ZeroDivisionError("centralized cost is zero; gaps are undefined")
    return (p_ipm - d_amd) / p_ipm * 100.0, (p_ipm - p_amd) / p_ipm * 100.0


def subgradient(net: Network, state: ComponentState) -> MultiplierSet:
    """Residuals of the relaxed constraints, shaped like the multipliers."""
    r_p, r_q = residuals(net, state)
    f, t = net.f_idx, net.t_idx
    g_v = np.column_stack([state.bus[f, 0] - state.line[:, 4], state.bus[t, 0] - state.line[:, 6]])
    g_th = np.column_stack([state.bus[f, 1] - state.line[:, 5], state.bus[t, 1] - state.line[:, 7]])
    return MultiplierSet(r_p, r_q, g_v, g_th)


def update_multipliers(lam: MultiplierSet, g: MultiplierSet, params: AlgoParams) -> MultiplierSet:
    """One ascent step: bus multipliers move by ``alpha_i``, consensus ones by ``alpha_ij``."""
    a, b = params.alpha_i, params.alpha_ij
    return MultiplierSet(lam.lam_p + a * g.lam_p, lam.lam_q + a * g.lam_q,
                         lam.lam_v + b * g.lam_v, lam.lam_th + b * g.lam_th)


def run(net: Network, params: AlgoParams, max_iter=DEFAULT_MAX_ITER, seed_state=None,
        workers=1, p_ipm=None, warm="flat", callback=None):
    """Run the distributed algorithm selected by ``params.variant``.

    Parameters
    ----------
    net : Network
    params : AlgoParams with ``variant`` set
    max_iter : int
    seed_state : ComponentState, optional
        Starting iterate; the flat start by default.
    workers : int
        Threads used for the line round. Results do not depend on it.
    p_ipm : float, optional
        Centralized reference cost. Computed from the flat start when omitted;
        pass ``False`` to skip it, which leaves the gaps as ``None``.
    warm : {"flat", "previous"}
        Starting point of each line solve.
    callback : callable, optional
        Called with each :class:`IterationTrace` as it is produced.

    Returns
    -------
    (RunReport, list of IterationTrace)
    """
    if params.variant is None:
        raise ValueError("params.variant must be set before running")
    if warm not in ("flat", "previous"):
        raise ValueError("warm must be 'flat' or 'previous'")
    state = ComponentState.flat(net) if seed_state is None else seed_state.copy()
    lam = MultiplierSet.zeros(net)
    trace = []
    t0 = time.perf_counter()
    status = MAX_ITER
    first = None
    norm = math.inf
    d_val = math.nan
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    map_fn = pool.map if pool is not None else map
    try:
        for k in range(1, max_iter + 1):
            sw = sweep(net, lam, state, params, warm=warm, map_fn=map_fn)
            state = sw.state
            d_val = sw.dual_value
            g = subgradient(net, state)
            norm = float(np.linalg.norm(g.flat()))
            row = IterationTrace(k, norm, d_val, objective(net, state.gen[:, 0]),
                                 (time.perf_counter() - t0) * 1e3)
            trace.append(row)
            if callback is not None:
                callback(row)
            if k % 100 == 0:
                log.info("k=%d residual=%.3e dual=%.6f", k, norm, d_val)
            if first is None:
                first = max(norm, 1e-300)
            if not math.isfinite(norm) or norm > DIVERGENCE_FACTOR * first:
                status = DIVERGED
                break
            if norm < params.epsilon:
                status = CONVERGED
                break
            lam = update_multipliers(lam, g, params)
    finally:
        if pool is not None:
            pool.shutdown()

    p_amd = objective(net, state.gen[:, 0])
    if p_ipm is None:
        try:
            _, p_ipm = solve_centralized(net, flat_start(net))
        except SolverDiverged as exc:
            log.warning("centralized reference did not converge: %s", exc)
            p_ipm = exc.result[1]
    if p_ipm is False:
        p_ipm = amd_gap = ro_gap = None
    else:
        amd_gap, ro_gap = gaps(p_ipm, p_amd, d_val)
    report = RunReport(
        converged=status == CONVERGED, iterations=len(trace), p_ipm=p_ipm, p_amd=p_amd,
        d_amd=d_val, amd_gap=amd_gap, ro_gap=ro_gap, status=status, residual_norm=norm,
        params=asdict(params), case=net.name)
    report.state = state
    report.multipliers = lam
    return report, trace


def with_variant(params: AlgoParams, variant: str, epsilon=None) -> AlgoParams:
    """Copy of ``params`` with the variant (and optionally epsilon) set."""
    changes = {"variant": variant}
    if epsilon is not None:
        changes["epsilon"] = epsilon
    return replace(params, **changes)


TRACE_HEADER = ("k", "residual_norm", "dual_value", "gen_cost", "wall_ms")


def trace_csv(trace, thin=1) -> str:
    """CSV text of a trace, keeping every ``thin``-th row and always the last."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for n, row in enumerate(trace):
        if n % thin and n != len(trace) - 1:
            continue
        w.writerow([row.k, repr(row.residual_norm), repr(row.dual_value),
                    repr(row.gen_cost), repr(row.wall_ms)])
    return buf.getvalue()
