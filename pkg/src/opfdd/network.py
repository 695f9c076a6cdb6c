"""
Per-unit network model, case readers and derived branch coefficients.

Everything downstream of this module works in per-unit on the system base.
MW/MVAr/degree quantities only exist in the input files; :func:`parse_matpower`
and :func:`parse_json` convert once at load time and :func:`emit_json` converts
back.
"""

from __future__ import annotations

import json
import math
import re
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    DanglingReference,
    DisconnectedNetwork,
    MalformedCase,
    NetworkError,
    SchemaViolation,
    UnsupportedCostModel,
    ZeroTap,
)

#: angle-difference bound used when a case carries no ANGMIN/ANGMAX columns
DEFAULT_ANGLE_LIMIT = math.pi / 3
#: MATPOWER's "no limit" angle value, in degrees
UNLIMITED_ANGLE_DEG = 360.0


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float
    v_max: float
    g_sh: float = 0.0
    b_sh: float = 0.0
    p_d: float = 0.0
    q_d: float = 0.0


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0

    def cost(self, p):
        """Quadratic cost in $/hr of a per-unit dispatch ``p``."""
        return (self.c2 * p + self.c1) * p + self.c0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_ch: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    s_max: float | None = None
    angle_min: float = -2 * math.pi
    angle_max: float = 2 * math.pi

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class BranchCoeffs:
    """Real coefficients of the polar branch-flow equations.

    ``*_ff`` belong to the from-end injection, ``*_tt`` to the to-end one;
    the ``c`` variants multiply the squared own-end voltage.
    """

    g_c_ff: float
    b_c_ff: float
    g_ff: float
    b_ff: float
    g_c_tt: float
    b_c_tt: float
    g_tt: float
    b_tt: float

    def as_array(self):
        return np.array([self.g_c_ff, self.b_c_ff, self.g_ff, self.b_ff,
                         self.g_c_tt, self.b_c_tt, self.g_tt, self.b_tt])


def branch_coeffs(b: Branch) -> BranchCoeffs:
    """Closed-form pi-model coefficients of a branch (with complex tap)."""
    if not b.tap > 0:
        raise ZeroTap(f"branch {b.from_bus}-{b.to_bus} has tap {b.tap}")
    y_conj = b.series_admittance.conjugate()
    t = b.tap * complex(math.cos(b.shift), math.sin(b.shift))
    half_ch = 0.5j * b.b_ch
    c_from = (y_conj - half_ch) / (b.tap * b.tap)
    s_from = y_conj / t
    c_to = y_conj - half_ch
    s_to = y_conj / t.conjugate()
    return BranchCoeffs(c_from.real, c_from.imag, s_from.real, s_from.imag,
                        c_to.real, c_to.imag, s_to.real, s_to.imag)


@dataclass(frozen=True)
class Network:
    """Immutable per-unit network.

    Besides the component tuples the instance carries index arrays used by the
    vectorised flow code: ``f_idx``/``t_idx`` (branch end bus positions),
    ``gen_idx`` (generator bus positions) and ``coeffs`` (``nl x 8`` array in
    :class:`BranchCoeffs` field order).
    """

    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    ref_bus: int | None = None
    name: str = field(default="network", compare=False)

    bus_index: dict = field(init=False, repr=False, compare=False)
    f_idx: np.ndarray = field(init=False, repr=False, compare=False)
    t_idx: np.ndarray = field(init=False, repr=False, compare=False)
    gen_idx: np.ndarray = field(init=False, repr=False, compare=False)
    coeffs: np.ndarray = field(init=False, repr=False, compare=False)
    branch_ends: tuple = field(init=False, repr=False, compare=False)
    gens_at: tuple = field(init=False, repr=False, compare=False)
    _vectors: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "branches", tuple(self.branches))
        _validate(self)
        index = {b.id: k for k, b in enumerate(self.buses)}
        f_idx = np.array([index[br.from_bus] for br in self.branches], dtype=int)
        t_idx = np.array([index[br.to_bus] for br in self.branches], dtype=int)
        gen_idx = np.array([index[g.bus] for g in self.generators], dtype=int)
        coeffs = np.array([branch_coeffs(br).as_array() for br in self.branches]).reshape(-1, 8)
        ends = [[] for _ in self.buses]
        for k in range(len(self.branches)):
            ends[f_idx[k]].append((k, 0))
            ends[t_idx[k]].append((k, 1))
        gens = [[] for _ in self.buses]
        for g, i in enumerate(gen_idx):
            gens[i].append(g)
        for arr in (f_idx, t_idx, gen_idx, coeffs):
            arr.flags.writeable = False
        object.__setattr__(self, "bus_index", index)
        object.__setattr__(self, "f_idx", f_idx)
        object.__setattr__(self, "t_idx", t_idx)
        object.__setattr__(self, "gen_idx", gen_idx)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "branch_ends", tuple(tuple(e) for e in ends))
        object.__setattr__(self, "gens_at", tuple(tuple(g) for g in gens))
        vec = {name: np.array([getattr(b, name) for b in self.buses], dtype=float)
               for name in ("v_min", "v_max", "g_sh", "b_sh", "p_d", "q_d")}
        for name in ("p_min", "p_max", "q_min", "q_max", "c2", "c1", "c0"):
            vec[name] = np.array([getattr(g, name) for g in self.generators], dtype=float)
        for arr in vec.values():
            arr.flags.writeable = False
        object.__setattr__(self, "_vectors", vec)
        _check_connected(self)

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_gen(self):
        return len(self.generators)

    @property
    def n_branch(self):
        return len(self.branches)

    @property
    def ref_index(self):
        """Position of the angle-reference bus (first bus when unset)."""
        return self.bus_index[self.ref_bus] if self.ref_bus is not None else 0

    def branch_coeffs(self, k) -> BranchCoeffs:
        return BranchCoeffs(*self.coeffs[k])

    def vectors(self):
        """Read-only per-bus and per-generator parameter arrays, keyed by field name."""
        return self._vectors


def _validate(net):
    if not net.base_mva > 0:
        raise NetworkError("base_mva must be positive")
    if not net.buses:
        raise NetworkError("network has no buses")
    ids = set()
    for b in net.buses:
        if b.id in ids:
            raise NetworkError(f"duplicate bus id {b.id}")
        ids.add(b.id)
        if not 0 < b.v_min <= b.v_max:
            raise NetworkError(f"bus {b.id}: need 0 < v_min <= v_max")
    for g in net.generators:
        if g.bus not in ids:
            raise DanglingReference(f"generator {g.id} at unknown bus {g.bus}")
        if g.p_min > g.p_max or g.q_min > g.q_max:
            raise NetworkError(f"generator {g.id}: inverted dispatch bounds")
        if g.c2 < 0:
            raise NetworkError(f"generator {g.id}: negative quadratic cost")
    for br in net.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in ids:
                raise DanglingReference(f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}")
        if not br.angle_min < br.angle_max:
            raise NetworkError(f"branch {br.from_bus}-{br.to_bus}: empty angle window")
        if br.s_max is not None and not br.s_max > 0:
            raise NetworkError(f"branch {br.from_bus}-{br.to_bus}: s_max must be positive or None")
    if net.ref_bus is not None and net.ref_bus not in ids:
        raise DanglingReference(f"reference bus {net.ref_bus} does not exist")


def _check_connected(net):
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for k, end in net.branch_ends[i]:
            j = int(net.t_idx[k] if end == 0 else net.f_idx[k])
            if j not in seen:
                seen.add(j)
                queue.append(j)
    if len(seen) != net.n_bus:
        raise DisconnectedNetwork(f"{net.n_bus - len(seen)} bus(es) unreachable from bus {net.buses[0].id}")


# ---------------------------------------------------------------------------
# MATPOWER reader

_BLOCK = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_SCALAR = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def _strip_comments(text):
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _matrix(body, name):
    rows = []
    for chunk in re.split(r"[;\n]", body):
        chunk = chunk.replace(",", " ").strip()
        if not chunk:
            continue
        try:
            rows.append([float(tok) for tok in chunk.split()])
        except ValueError as exc:
            raise MalformedCase(f"mpc.{name}: non-numeric entry in row {chunk!r}") from exc
    if not rows:
        raise MalformedCase(f"mpc.{name} is empty")
    width = len(rows[0])
    for r in rows:
        if len(r) != width:
            raise MalformedCase(f"mpc.{name}: ragged row ({len(r)} vs {width} columns)")
    return rows


def _cost_coeffs(row, gen_id):
    model = int(row[0])
    if model != 2:
        raise UnsupportedCostModel(f"generator {gen_id}: cost model {model} (only polynomial model 2)")
    n = int(row[3])
    coeffs = row[4:4 + n]
    if n > 3 or len(coeffs) != n:
        raise UnsupportedCostModel(f"generator {gen_id}: polynomial of {n} coefficients")
    c2, c1, c0 = ([0.0] * (3 - n) + list(coeffs))
    return c2, c1, c0


def parse_matpower(text: str, name: str = "network") -> Network:
    """Read the standard MATPOWER case-file subset into a per-unit :class:`Network`.

    Out-of-service generators and branches are dropped, ``RATE_A = 0`` means
    no thermal limit and ``TAP = 0`` means a plain line. Angle bounds at
    MATPOWER's "unlimited" values (0 or +/-360 deg) are stored as +/-2*pi;
    cases without ANGMIN/ANGMAX columns get +/-``DEFAULT_ANGLE_LIMIT``.
    """
    text = _strip_comments(text)
    m = _SCALAR.search(text)
    if m is None:
        raise MalformedCase("missing mpc.baseMVA")
    base = float(m.group(1))
    blocks = {b.group(1): b.group(2) for b in _BLOCK.finditer(text)}
    for key in ("bus", "gen", "branch", "gencost"):
        if key not in blocks:
            raise MalformedCase(f"missing mpc.{key} block")
    bus_rows = _matrix(blocks["bus"], "bus")
    gen_rows = _matrix(blocks["gen"], "gen")
    branch_rows = _matrix(blocks["branch"], "branch")
    cost_rows = _matrix(blocks["gencost"], "gencost")
    if len(bus_rows[0]) < 13 or len(gen_rows[0]) < 10 or len(branch_rows[0]) < 11:
        raise MalformedCase("too few columns for the MATPOWER version 2 format")
    if len(cost_rows) < len(gen_rows):
        raise MalformedCase("mpc.gencost has fewer rows than mpc.gen")

    buses = []
    ref = None
    for r in bus_rows:
        bus_id = int(r[0])
        if int(r[1]) == 3 and ref is None:
            ref = bus_id
        buses.append(Bus(bus_id, v_min=r[12], v_max=r[11], g_sh=r[4] / base, b_sh=r[5] / base,
                         p_d=r[2] / base, q_d=r[3] / base))

    gens = []
    for k, (r, c) in enumerate(zip(gen_rows, cost_rows), start=1):
        if r[7] <= 0:
            continue
        c2, c1, c0 = _cost_coeffs(c, k)
        gens.append(Generator(k, int(r[0]), p_min=r[9] / base, p_max=r[8] / base,
                              q_min=r[4] / base, q_max=r[3] / base,
                              c2=c2 * base ** 2, c1=c1 * base, c0=c0))

    has_angles = len(branch_rows[0]) >= 13
    branches = []
    for r in branch_rows:
        if r[10] <= 0:
            continue
        if has_angles:
            lo = r[11] if r[11] != 0 else -UNLIMITED_ANGLE_DEG
            hi = r[12] if r[12] != 0 else UNLIMITED_ANGLE_DEG
            lo, hi = math.radians(max(lo, -UNLIMITED_ANGLE_DEG)), math.radians(min(hi, UNLIMITED_ANGLE_DEG))
        else:
            lo, hi = -DEFAULT_ANGLE_LIMIT, DEFAULT_ANGLE_LIMIT
        branches.append(Branch(int(r[0]), int(r[1]), r=r[2], x=r[3], b_ch=r[4],
                               tap=r[8] if r[8] != 0 else 1.0, shift=math.radians(r[9]),
                               s_max=r[5] / base if r[5] > 0 else None,
                               angle_min=lo, angle_max=hi))
    return Network(base, buses, gens, branches, ref_bus=ref, name=name)


def load_case(name_or_path) -> Network:
    """Load a bundled case (``"case9"``) or a MATPOWER/JSON file path."""
    path = Path(name_or_path)
    if not path.exists():
        bundled = resources.files("opfdd") / "data" / f"{path.stem}.m"
        if bundled.is_file():
            return parse_matpower(bundled.read_text(), name=path.stem)
        raise FileNotFoundError(f"no such case file: {name_or_path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return parse_json(text, name=path.stem)
    return parse_matpower(text, name=path.stem)


# ---------------------------------------------------------------------------
# JSON reader / writer

_BUS_KEYS = ("id", "v_min", "v_max", "g_sh", "b_sh", "p_d", "q_d")
_GEN_KEYS = ("id", "bus", "p_min", "p_max", "q_min", "q_max", "c2", "c1", "c0")
_BRANCH_KEYS = ("from", "to", "r", "x", "b_ch", "tap", "shift_deg", "s_max",
                "angle_min_deg", "angle_max_deg")
_INT_KEYS = {"id", "bus", "from", "to"}
_NULLABLE = {"s_max"}


def _records(doc, key, fields):
    items = doc.get(key)
    if not isinstance(items, list):
        raise SchemaViolation("expected a list", f"$.{key}")
    out = []
    for n, item in enumerate(items):
        path = f"$.{key}[{n}]"
        if not isinstance(item, dict):
            raise SchemaViolation("expected an object", path)
        rec = {}
        for f in fields:
            if f not in item:
                raise SchemaViolation("missing field", f"{path}.{f}")
            v = item[f]
            if v is None and f in _NULLABLE:
                rec[f] = None
                continue
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaViolation("expected a number", f"{path}.{f}")
            if f in _INT_KEYS and int(v) != v:
                raise SchemaViolation("expected an integer", f"{path}.{f}")
            rec[f] = int(v) if f in _INT_KEYS else float(v)
        out.append(rec)
    return out


def parse_json(text: str, name: str = "network") -> Network:
    """Read the JSON case schema (MW/MVA/degree units) into a per-unit network."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("top level must be an object")
    base = doc.get("base_mva")
    if isinstance(base, bool) or not isinstance(base, (int, float)) or not base > 0:
        raise SchemaViolation("expected a positive number", "$.base_mva")
    base = float(base)
    bus_recs = _records(doc, "buses", _BUS_KEYS)
    if not bus_recs:
        raise SchemaViolation("at least one bus required", "$.buses")
    seen = set()
    for n, r in enumerate(bus_recs):
        if r["id"] in seen:
            raise SchemaViolation(f"duplicate bus id {r['id']}", f"$.buses[{n}].id")
        seen.add(r["id"])
    gen_recs = _records(doc, "generators", _GEN_KEYS)
    branch_recs = _records(doc, "branches", _BRANCH_KEYS)
    for n, r in enumerate(gen_recs):
        if r["bus"] not in seen:
            raise SchemaViolation(f"unknown bus {r['bus']}", f"$.generators[{n}].bus")
    for n, r in enumerate(branch_recs):
        for end in ("from", "to"):
            if r[end] not in seen:
                raise SchemaViolation(f"unknown bus {r[end]}", f"$.branches[{n}].{end}")
    ref = doc.get("ref_bus")
    if ref is not None and ref not in seen:
        raise SchemaViolation(f"unknown bus {ref}", "$.ref_bus")

    buses = [Bus(r["id"], r["v_min"], r["v_max"], g_sh=r["g_sh"] / base, b_sh=r["b_sh"] / base,
                 p_d=r["p_d"] / base, q_d=r["q_d"] / base) for r in bus_recs]
    gens = [Generator(r["id"], r["bus"], p_min=r["p_min"] / base, p_max=r["p_max"] / base,
                      q_min=r["q_min"] / base, q_max=r["q_max"] / base,
                      c2=r["c2"] * base ** 2, c1=r["c1"] * base, c0=r["c0"]) for r in gen_recs]
    branches = [Branch(r["from"], r["to"], r=r["r"], x=r["x"], b_ch=r["b_ch"], tap=r["tap"],
                       shift=math.radians(r["shift_deg"]),
                       s_max=r["s_max"] / base if r["s_max"] else None,
                       angle_min=math.radians(r["angle_min_deg"]),
                       angle_max=math.radians(r["angle_max_deg"])) for r in branch_recs]
    try:
        return Network(base, buses, gens, branches, ref_bus=ref, name=doc.get("name", name))
    except NetworkError as exc:
        raise SchemaViolation(str(exc)) from exc


def _preimage(forward, target):
    """A float ``m`` with ``forward(m) == target`` exactly, searched near the naive inverse.

    Unit conversion is one multiplication or division, so the exact source
    value sits within a few ulps of the naive inverse.
    """
    m = forward.inverse(target)
    if forward(m) == target:
        return m
    lo = hi = m
    for _ in range(64):
        lo, hi = math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf)
        if forward(lo) == target:
            return lo
        if forward(hi) == target:
            return hi
    return m


class _Scale:
    def __init__(self, factor, divide):
        self.factor, self.divide = factor, divide

    def __call__(self, x):
        return x / self.factor if self.divide else x * self.factor

    def inverse(self, y):
        return y * self.factor if self.divide else y / self.factor


class _Radians:
    def __call__(self, deg):
        return math.radians(deg)

    def inverse(self, rad):
        return math.degrees(rad)


def to_json_dict(net: Network) -> dict:
    base = net.base_mva
    per_unit = _Scale(base, divide=True)
    quad = _Scale(base ** 2, divide=False)
    lin = _Scale(base, divide=False)
    rad = _Radians()

    def mw(x):
        return _preimage(per_unit, x)

    doc = {
        "name": net.name,
        "base_mva": base,
        "ref_bus": net.ref_bus,
        "buses": [{"id": b.id, "v_min": b.v_min, "v_max": b.v_max, "g_sh": mw(b.g_sh),
                   "b_sh": mw(b.b_sh), "p_d": mw(b.p_d), "q_d": mw(b.q_d)} for b in net.buses],
        "generators": [{"id": g.id, "bus": g.bus, "p_min": mw(g.p_min), "p_max": mw(g.p_max),
                        "q_min": mw(g.q_min), "q_max": mw(g.q_max),
                        "c2": _preimage(quad, g.c2), "c1": _preimage(lin, g.c1), "c0": g.c0}
                       for g in net.generators],
        "branches": [{"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b_ch": br.b_ch,
                      "tap": br.tap, "shift_deg": _preimage(rad, br.shift),
                      "s_max": mw(br.s_max) if br.s_max is not None else None,
                      "angle_min_deg": _preimage(rad, br.angle_min),
                      "angle_max_deg": _preimage(rad, br.angle_max)} for br in net.branches],
    }
    return doc


def emit_json(net: Network, indent=None) -> str:
    """Serialise ``net`` in the JSON case schema; :func:`parse_json` inverts it exactly."""
    return json.dumps(to_json_dict(net), indent=indent)
