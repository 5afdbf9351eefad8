"""Assembly of the epigraph-form mixed-integer conic program.

Every vertex and edge gets a product-variable block per incidence plus a
cost slack; homogenized membership constraints activate sets and costs
through the binary variables. The assembler consumes a tailored plan and
emits labeled constraint blocks, so structural tests and program dumps
can tell base product constraints, lifted constraints, and binary-side
rows apart. A box-envelope formulation is provided as a baseline.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import cones
from .cones import Cone, ConicSet, NONNEG, ZERO, homogenize
from .conic_solver import OPTIMAL, UNBOUNDED, ConicConstraint, ConicProgram, solve_conic
from .graph import (
    GcsGraph,
    GraphError,
    RecessionCheck,
    edge_epigraph,
    validate_recession,
    vertex_epigraph,
)
from .ilp import EQ, GE, BinaryVar, IlpDescription, TailoredPlan, canonical_bv, ye, yv


class AssemblyError(ValueError):
    pass


@dataclass
class MicpVariableLayout:
    """Column assignment for all continuous blocks and binaries.

    ``z_v``/``t_v`` are per-vertex variable and cost-slack blocks,
    ``z_inc``/``t_inc`` their per-incidence product copies, ``z_e``/``t_e``
    the edge auxiliary and edge cost-slack blocks. ``x_v`` holds explicit
    vertex variables (box-envelope formulation only). Binary columns come
    after all continuous ones.
    """

    n_continuous: int = 0
    z_v: dict = field(default_factory=dict)
    t_v: dict = field(default_factory=dict)
    x_v: dict = field(default_factory=dict)
    z_inc: dict = field(default_factory=dict)
    t_inc: dict = field(default_factory=dict)
    z_e: dict = field(default_factory=dict)
    t_e: dict = field(default_factory=dict)
    binaries: list[BinaryVar] = field(default_factory=list)
    binary_col: dict[BinaryVar, int] = field(default_factory=dict)

    def _grow(self, dim: int) -> np.ndarray:
        cols = np.arange(self.n_continuous, self.n_continuous + dim)
        self.n_continuous += dim
        return cols

    @property
    def n_total(self) -> int:
        return self.n_continuous + len(self.binaries)


@dataclass(frozen=True)
class ConicBlock:
    """Labeled conic constraint rows ``A x + b in K`` of the program."""

    A: np.ndarray
    b: np.ndarray
    cones: tuple[Cone, ...]
    label: str

    def as_constraint(self) -> ConicConstraint:
        return ConicConstraint(self.A, self.b, self.cones)


@dataclass
class MixedIntegerConicProgram:
    """Linear objective, labeled conic blocks, binaries with fixes, and
    binary-side lazy separators."""

    layout: MicpVariableLayout
    objective: np.ndarray
    blocks: list[ConicBlock]
    fixes: dict[BinaryVar, int]
    separators: list
    graph: GcsGraph
    formulation: str = "tailored"

    @property
    def n_total(self) -> int:
        return self.layout.n_total

    def labels(self) -> list[str]:
        return [blk.label for blk in self.blocks]

    def to_json_dict(self) -> dict:
        """Stable-order dump of the program for golden tests and debugging."""
        lay = self.layout
        fmt_key = lambda key: repr(key)
        return {
            "formulation": self.formulation,
            "n_continuous": lay.n_continuous,
            "n_binary": len(lay.binaries),
            "layout": {
                "z_v": {fmt_key(k): v.tolist() for k, v in lay.z_v.items()},
                "t_v": {fmt_key(k): v.tolist() for k, v in lay.t_v.items()},
                "x_v": {fmt_key(k): v.tolist() for k, v in lay.x_v.items()},
                "z_inc": {fmt_key(k): v.tolist() for k, v in lay.z_inc.items()},
                "t_inc": {fmt_key(k): v.tolist() for k, v in lay.t_inc.items()},
                "z_e": {fmt_key(k): v.tolist() for k, v in lay.z_e.items()},
                "t_e": {fmt_key(k): v.tolist() for k, v in lay.t_e.items()},
            },
            "binaries": [repr(bv) for bv in lay.binaries],
            "fixes": {repr(bv): val for bv, val in self.fixes.items()},
            "objective": self.objective.tolist(),
            "blocks": [
                {
                    "label": blk.label,
                    "cones": [[c.kind, c.dim] for c in blk.cones],
                    "rows": blk.A.tolist(),
                    "const": blk.b.tolist(),
                }
                for blk in self.blocks
            ],
        }


@dataclass
class SolveResult:
    """Outcome of a mixed-integer solve in the graph's terms."""

    status: str
    value: float
    subgraph_vertices: list
    subgraph_edges: list[tuple]
    x: dict
    bound_trace: list[tuple[float, float, float]]
    relaxation_value: float | None = None
    reconciled: bool = True
    reconciliation_gap: float = 0.0
    wall_seconds: float = 0.0
    nodes: int = 0
    cuts: int = 0


STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded-relaxation"
STATUS_LIMIT = "limit"


# -- shared element preparation ----------------------------------------------


@dataclass(frozen=True)
class _ElementData:
    epi: ConicSet  # epigraph set over (x, slacks)
    hom: ConicSet  # homogenization of epi, as plain conic rows over (x, slacks, y)
    n: int
    k: int
    constant_cost: float


def _prepare(graph: GcsGraph) -> tuple[dict, dict]:
    vdata = {}
    for v in graph.vertices:
        epi, k, const = vertex_epigraph(v)
        vdata[v.name] = _ElementData(epi, homogenize(epi).as_conic_set(), v.dim, k, const)
    edata = {}
    for e in graph.edges:
        epi, k, const = edge_epigraph(e)
        edata[e.key] = _ElementData(epi, homogenize(epi).as_conic_set(), e.var_dim, k, const)
    return vdata, edata


def _check_recession(graph: GcsGraph, mode: str):
    if mode == "skip":
        return
    for v in graph.vertices:
        verdict = validate_recession(graph, v)
        if verdict is RecessionCheck.OK:
            continue
        msg = (
            f"vertex {v.name!r}: cost may not grow superlinearly along a recession "
            f"direction of its set (probe: {verdict.value}); the homogenized program "
            "can be unbounded"
        )
        if mode == "strict":
            raise AssemblyError(msg)
        warnings.warn(msg, stacklevel=3)


def _membership_block(hom: ConicSet, terms, n_total: int, label: str) -> ConicBlock:
    """Rows for ``sum(coef * vec) in hom`` where each vec maps homogenized
    coordinates to program columns (-1 marks the constant one)."""
    A = np.zeros((hom.m, n_total))
    b = hom.d.copy()
    for coef, idx in terms:
        if coef == 0.0:
            continue
        for j, col in enumerate(idx):
            if col < 0:
                b = b + coef * hom.C[:, j]
            else:
                A[:, col] += coef * hom.C[:, j]
    return ConicBlock(A, b, hom.cones, label)


def _binary_rows(ilp_rows, binary_col, n_total: int, extra=()):
    blocks = []
    for i, con in enumerate(list(ilp_rows) + list(extra)):
        row = np.zeros((1, n_total))
        for bv, coef in con.terms.items():
            row[0, binary_col[bv]] += coef
        kind = NONNEG if con.sense == GE else ZERO
        label = f"ilp:{i}" + (f":{con.tag}" if con.tag else "")
        blocks.append(ConicBlock(row, np.array([con.const]), (Cone(kind, 1),), label))
    return blocks


def _canonical_binary_side(graph: GcsGraph, ilp: IlpDescription):
    """Rewrite binary references onto stored graph keys, validating them."""
    rows = []
    for con in ilp.constraints:
        terms = {}
        for bv, coef in con.terms.items():
            cbv = canonical_bv(graph, bv)
            terms[cbv] = terms.get(cbv, 0.0) + coef
        rows.append(type(con)(terms, con.const, con.sense, con.tag))
    fixed = {canonical_bv(graph, bv): val for bv, val in ilp.fixed.items()}
    return rows, fixed


def assemble(graph: GcsGraph, plan: TailoredPlan, recession: str = "warn") -> MixedIntegerConicProgram:
    """Build the tailored mixed-integer conic program from a plan.

    Per incidence the surviving base product constraints are emitted, then
    the plan's lifted memberships and equalities, the per-edge coupling
    constraint, and finally the untouched binary-side rows. A vertex with
    no incident edges keeps its direct homogenized membership, which the
    incidence constraints would otherwise imply.
    """
    _check_recession(graph, recession)
    vdata, edata = _prepare(graph)
    lay = MicpVariableLayout()
    for v in graph.vertices:
        dat = vdata[v.name]
        lay.z_v[v.name] = lay._grow(dat.n)
        lay.t_v[v.name] = lay._grow(dat.k)
    for v in graph.vertices:
        dat = vdata[v.name]
        for ekey in graph.incident(v.name):
            lay.z_inc[(v.name, ekey)] = lay._grow(dat.n)
            lay.t_inc[(v.name, ekey)] = lay._grow(dat.k)
    for e in graph.edges:
        lay.z_e[e.key] = lay._grow(e.aux_dim)
        lay.t_e[e.key] = lay._grow(edata[e.key].k)
    for v in graph.vertices:
        bv = yv(v.name)
        lay.binary_col[bv] = lay.n_continuous + len(lay.binaries)
        lay.binaries.append(bv)
    for e in graph.edges:
        bv = ye(e.key)
        lay.binary_col[bv] = lay.n_continuous + len(lay.binaries)
        lay.binaries.append(bv)

    n_total = lay.n_total
    blocks: list[ConicBlock] = []

    def vec_vertex(name):
        return np.concatenate([lay.z_v[name], lay.t_v[name], [lay.binary_col[yv(name)]]])

    def vec_incidence(name, ekey):
        return np.concatenate([lay.z_inc[(name, ekey)], lay.t_inc[(name, ekey)], [lay.binary_col[ye(ekey)]]])

    for v in graph.vertices:
        hom = vdata[v.name].hom
        incident = graph.incident(v.name)
        if not incident:
            blocks.append(_membership_block(hom, [(1.0, vec_vertex(v.name))], n_total, f"26c:{v.name}"))
            continue
        for ekey in incident:
            if plan.keep_27c.get((v.name, ekey), True):
                blocks.append(
                    _membership_block(hom, [(1.0, vec_incidence(v.name, ekey))], n_total, f"27c:{v.name}|{ekey}")
                )
            if plan.keep_27d.get((v.name, ekey), True):
                blocks.append(
                    _membership_block(
                        hom,
                        [(1.0, vec_vertex(v.name)), (-1.0, vec_incidence(v.name, ekey))],
                        n_total,
                        f"27d:{v.name}|{ekey}",
                    )
                )

    for i, lm in enumerate(plan.memberships):
        hom = vdata[lm.anchor].hom
        terms = [(lm.coef_v, vec_vertex(lm.anchor))]
        terms += [(coef, vec_incidence(lm.anchor, ekey)) for ekey, coef in lm.coef_e]
        blocks.append(_membership_block(hom, terms, n_total, f"lift:{lm.form()}:{lm.anchor}#{i}"))

    for i, le in enumerate(plan.equalities):
        dat = vdata[le.anchor]
        rows = dat.n + dat.k
        A = np.zeros((rows, n_total))
        zt_v = np.concatenate([lay.z_v[le.anchor], lay.t_v[le.anchor]])
        A[np.arange(rows), zt_v] += le.coef_v
        for ekey, coef in le.coef_e:
            zt_inc = np.concatenate([lay.z_inc[(le.anchor, ekey)], lay.t_inc[(le.anchor, ekey)]])
            A[np.arange(rows), zt_inc] += coef
        blocks.append(ConicBlock(A, np.zeros(rows), (Cone(ZERO, rows),), f"lifteq:{le.anchor}#{i}"))

    for e in graph.edges:
        dat = edata[e.key]
        idx = np.concatenate(
            [
                lay.z_inc[(e.tail, e.key)],
                lay.z_inc[(e.head, e.key)],
                lay.z_e[e.key],
                lay.t_e[e.key],
                [lay.binary_col[ye(e.key)]],
            ]
        )
        blocks.append(_membership_block(dat.hom, [(1.0, idx)], n_total, f"27e:{e.key}"))

    ilp_rows, user_fixed = _canonical_binary_side(graph, plan.ilp)
    blocks.extend(_binary_rows(ilp_rows, lay.binary_col, n_total, extra=plan.extra_binary))

    c = np.zeros(n_total)
    for v in graph.vertices:
        c[lay.t_v[v.name]] = 1.0
        c[lay.binary_col[yv(v.name)]] += vdata[v.name].constant_cost
    for e in graph.edges:
        c[lay.t_e[e.key]] = 1.0
        c[lay.binary_col[ye(e.key)]] += edata[e.key].constant_cost

    fixes = dict(user_fixed)
    fixes.update(plan.fixes)
    return MixedIntegerConicProgram(lay, c, blocks, fixes, list(plan.ilp.separators), graph, "tailored")


# -- box-envelope baseline ----------------------------------------------------


def bounding_box(v) -> tuple[np.ndarray, np.ndarray]:
    """Smallest axis-aligned box containing the vertex set, by support solves."""
    xset = v.constraint_set()
    if xset.m == 0:
        raise AssemblyError(f"vertex {v.name!r} has an unbounded set; the envelope formulation needs boxes")
    blocks = [ConicConstraint(xset.C, xset.d, xset.cones)]
    lo = np.zeros(v.dim)
    hi = np.zeros(v.dim)
    for i in range(v.dim):
        for sign, out in ((1.0, lo), (-1.0, hi)):
            c = np.zeros(v.dim)
            c[i] = sign
            sol = solve_conic(ConicProgram(c, list(blocks)))
            if sol.status == UNBOUNDED:
                raise AssemblyError(f"vertex {v.name!r} has an unbounded set; the envelope formulation needs boxes")
            if sol.status != OPTIMAL:
                raise AssemblyError(f"support problem failed on vertex {v.name!r} ({sol.status})")
            out[i] = sign * sol.value
    # Inflate so that roundoff never puts the set outside its box.
    return lo - 1e-7, hi + 1e-7


def _envelope_rows(z_cols, y_col, lo, hi, n_total, label, x_cols=None, complement=False):
    """Homogenized box rows ``z in y * [lo, hi]`` or, with ``x_cols`` and
    ``complement``, ``x - z in (1 - y) * [lo, hi]``."""
    n = len(lo)
    A = np.zeros((2 * n, n_total))
    b = np.zeros(2 * n)
    rows_lo = np.arange(n)
    rows_hi = np.arange(n, 2 * n)
    if x_cols is None:
        A[rows_lo, z_cols] = 1.0
        A[rows_lo, y_col] = -lo
        A[rows_hi, z_cols] = -1.0
        A[rows_hi, y_col] = hi
    else:
        A[rows_lo, x_cols] = 1.0
        A[rows_lo, z_cols] = -1.0
        A[rows_lo, y_col] = lo
        b[rows_lo] = -lo
        A[rows_hi, x_cols] = -1.0
        A[rows_hi, z_cols] = 1.0
        A[rows_hi, y_col] = -hi
        b[rows_hi] = hi
    return ConicBlock(A, b, (Cone(NONNEG, 2 * n),), label)


def assemble_mccormick(graph: GcsGraph, ilp: IlpDescription, recession: str = "warn") -> MixedIntegerConicProgram:
    """Baseline program using box envelopes of the binary-continuous products.

    Explicit ``x_v`` variables are kept and tied to the product copies by
    the four envelope families over each vertex's bounding box. Vertex and
    edge sets enter through their direct homogenized memberships; the
    binary side is the given description, untailored.
    """
    _check_recession(graph, recession)
    vdata, edata = _prepare(graph)
    boxes = {v.name: bounding_box(v) for v in graph.vertices}

    lay = MicpVariableLayout()
    for v in graph.vertices:
        dat = vdata[v.name]
        lay.z_v[v.name] = lay._grow(dat.n)
        lay.t_v[v.name] = lay._grow(dat.k)
        lay.x_v[v.name] = lay._grow(dat.n)
    for v in graph.vertices:
        for ekey in graph.incident(v.name):
            lay.z_inc[(v.name, ekey)] = lay._grow(vdata[v.name].n)
    for e in graph.edges:
        lay.z_e[e.key] = lay._grow(e.aux_dim)
        lay.t_e[e.key] = lay._grow(edata[e.key].k)
    for v in graph.vertices:
        bv = yv(v.name)
        lay.binary_col[bv] = lay.n_continuous + len(lay.binaries)
        lay.binaries.append(bv)
    for e in graph.edges:
        bv = ye(e.key)
        lay.binary_col[bv] = lay.n_continuous + len(lay.binaries)
        lay.binaries.append(bv)
    n_total = lay.n_total

    blocks: list[ConicBlock] = []
    for v in graph.vertices:
        dat = vdata[v.name]
        idx = np.concatenate([lay.z_v[v.name], lay.t_v[v.name], [lay.binary_col[yv(v.name)]]])
        blocks.append(_membership_block(dat.hom, [(1.0, idx)], n_total, f"26c:{v.name}"))
        lo, hi = boxes[v.name]
        y_col = lay.binary_col[yv(v.name)]
        blocks.append(_envelope_rows(lay.z_v[v.name], y_col, lo, hi, n_total, f"mc-box:{v.name}"))
        blocks.append(
            _envelope_rows(
                lay.z_v[v.name], y_col, lo, hi, n_total, f"mc-box-c:{v.name}", x_cols=lay.x_v[v.name]
            )
        )
        for ekey in graph.incident(v.name):
            ye_col = lay.binary_col[ye(ekey)]
            blocks.append(
                _envelope_rows(lay.z_inc[(v.name, ekey)], ye_col, lo, hi, n_total, f"mc-inc:{v.name}|{ekey}")
            )
            blocks.append(
                _envelope_rows(
                    lay.z_inc[(v.name, ekey)],
                    ye_col,
                    lo,
                    hi,
                    n_total,
                    f"mc-inc-c:{v.name}|{ekey}",
                    x_cols=lay.x_v[v.name],
                )
            )

    for e in graph.edges:
        dat = edata[e.key]
        idx = np.concatenate(
            [
                lay.z_inc[(e.tail, e.key)],
                lay.z_inc[(e.head, e.key)],
                lay.z_e[e.key],
                lay.t_e[e.key],
                [lay.binary_col[ye(e.key)]],
            ]
        )
        blocks.append(_membership_block(dat.hom, [(1.0, idx)], n_total, f"27e:{e.key}"))

    ilp_rows, user_fixed = _canonical_binary_side(graph, ilp)
    blocks.extend(_binary_rows(ilp_rows, lay.binary_col, n_total))

    c = np.zeros(n_total)
    for v in graph.vertices:
        c[lay.t_v[v.name]] = 1.0
        c[lay.binary_col[yv(v.name)]] += vdata[v.name].constant_cost
    for e in graph.edges:
        c[lay.t_e[e.key]] = 1.0
        c[lay.binary_col[ye(e.key)]] += edata[e.key].constant_cost

    return MixedIntegerConicProgram(lay, c, blocks, user_fixed, list(ilp.separators), graph, "mccormick")


# -- solution recovery --------------------------------------------------------


def extract_solution(program: MixedIntegerConicProgram, point: np.ndarray, binary_tol: float = 1e-6) -> SolveResult:
    """Recover the subgraph and continuous values from a binary-feasible point.

    Vertex values are the product copies at selected vertices; the
    objective is recomputed from the original cost atoms and reconciled
    against the program objective. A reconciliation breach above the
    relative tolerance flags the result instead of silently passing it on.
    """
    lay = program.layout
    point = np.asarray(point, dtype=float)
    graph = program.graph

    y = {}
    for bv in lay.binaries:
        val = point[lay.binary_col[bv]]
        if min(abs(val), abs(1.0 - val)) > binary_tol:
            raise AssemblyError(f"point is not binary-feasible at {bv!r} (value {val})")
        y[bv] = int(round(val))

    sel_v = [v.name for v in graph.vertices if y[yv(v.name)] == 1]
    sel_e = [e.key for e in graph.edges if y[ye(e.key)] == 1]
    x = {name: point[lay.z_v[name]].copy() for name in sel_v}
    x_aux = {key: point[lay.z_e[key]].copy() for key in sel_e if lay.z_e[key].size}

    recomputed = 0.0
    for name in sel_v:
        recomputed += graph.vertex(name).cost(x[name])
    for key in sel_e:
        e = graph.edge(key)
        recomputed += e.cost(x[e.tail], x[e.head], x_aux.get(key, np.zeros(e.aux_dim)))

    value = float(program.objective @ point)
    gap = abs(recomputed - value) / max(1.0, abs(value))
    return SolveResult(
        status=STATUS_OPTIMAL,
        value=value,
        subgraph_vertices=sel_v,
        subgraph_edges=sel_e,
        x=x,
        bound_trace=[],
        reconciled=bool(gap <= 1e-6),
        reconciliation_gap=float(gap),
    )
