"""Binary-side problem description and tailoring of the conic program.

An ``IlpDescription`` holds affine constraints over the vertex/edge binary
variables, lazy separation callbacks, and accumulated variable fixes. The
tailoring pass rewrites every constraint that is local to a vertex into a
linear form, generates the matching lifted conic constraint, and drops
base product constraints that the local system already implies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .graph import GcsGraph, GraphError

GE = "ge"  # terms + const >= 0
EQ = "eq"  # terms + const == 0

VERTEX = "v"
EDGE = "e"


@dataclass(frozen=True)
class BinaryVar:
    """Reference to the binary variable of a vertex or an edge."""

    kind: str
    key: object

    def __post_init__(self):
        if self.kind not in (VERTEX, EDGE):
            raise ValueError("binary variable kind must be 'v' or 'e'")
        if self.kind == EDGE:
            object.__setattr__(self, "key", tuple(self.key))

    def __repr__(self):
        return f"y[{self.kind}:{self.key}]"


def yv(name) -> BinaryVar:
    return BinaryVar(VERTEX, name)


def ye(key) -> BinaryVar:
    return BinaryVar(EDGE, tuple(key))


@dataclass
class AffineIlpConstraint:
    """``sum(coef * y) + const  >= 0  or  == 0``."""

    terms: dict[BinaryVar, float]
    const: float = 0.0
    sense: str = GE
    tag: str = ""

    def __post_init__(self):
        if not self.terms:
            raise ValueError("constraint needs at least one term")
        if self.sense not in (GE, EQ):
            raise ValueError("sense must be 'ge' or 'eq'")
        for coef in self.terms.values():
            if not math.isfinite(coef):
                raise ValueError("coefficients must be finite")
        if not math.isfinite(self.const):
            raise ValueError("constant must be finite")

    def support(self) -> set[BinaryVar]:
        return {v for v, c in self.terms.items() if c != 0.0}

    def evaluate(self, assignment: dict[BinaryVar, float]) -> float:
        return sum(c * assignment.get(v, 0.0) for v, c in self.terms.items()) + self.const

    def satisfied(self, assignment: dict[BinaryVar, float], tol: float = 1e-9) -> bool:
        val = self.evaluate(assignment)
        return val >= -tol if self.sense == GE else abs(val) <= tol


@dataclass
class IlpDescription:
    """Polytope description plus lazy separators and accumulated fixes."""

    constraints: list[AffineIlpConstraint] = field(default_factory=list)
    separators: list = field(default_factory=list)
    fixed: dict[BinaryVar, int] = field(default_factory=dict)

    def add(self, terms, const=0.0, sense=GE, tag=""):
        c = AffineIlpConstraint(dict(terms), float(const), sense, tag)
        self.constraints.append(c)
        return c


@dataclass
class LocalConstraint:
    """Linear form ``a y_v + sum b_e y_e`` local to an anchor vertex."""

    anchor: object
    a: float
    b: dict[tuple, float]
    sense: str = GE

    def is_zero(self) -> bool:
        return self.a == 0.0 and all(c == 0.0 for c in self.b.values())


@dataclass(frozen=True)
class LiftedMembership:
    """``coef_v (z_v, t_v, y_v) + sum coef_e (z_v^e, t_v^e, y_e)`` in the
    homogenized vertex set."""

    anchor: object
    coef_v: float
    coef_e: tuple[tuple[tuple, float], ...]

    def form(self) -> str:
        """Classify against the two base product-constraint shapes."""
        edges = [(k, c) for k, c in self.coef_e if c != 0.0]
        if self.coef_v == 0.0 and len(edges) == 1 and edges[0][1] > 0.0:
            return "27c"
        if self.coef_v > 0.0 and len(edges) == 1 and edges[0][1] == -self.coef_v:
            return "27d"
        return "general"


@dataclass(frozen=True)
class LiftedEquality:
    """``coef_v (z_v, t_v) + sum coef_e (z_v^e, t_v^e) = 0``.

    The slack coordinates ride along with the spatial ones: the scalar
    binary identity multiplied by the vertex variable gives the z rows,
    and multiplied by the vertex cost slack gives the t rows. Both are
    needed so that dropping implied base constraints stays sound in the
    epigraph formulation.
    """

    anchor: object
    coef_v: float
    coef_e: tuple[tuple[tuple, float], ...]


def canonical_bv(graph: GcsGraph, bv: BinaryVar) -> BinaryVar:
    """Resolve a binary-variable reference against the graph's stored keys."""
    if bv.kind == VERTEX:
        if not graph.has_vertex(bv.key):
            raise GraphError(f"constraint references unknown vertex {bv.key!r}")
        return bv
    return ye(graph.edge(bv.key).key)


def localize(constraint: AffineIlpConstraint, graph: GcsGraph) -> list:
    """Anchor vertices whose star covers the constraint support.

    Returns every vertex ``v`` with support inside ``{y_v} + {y_e : e
    incident to v}``; an empty list marks a global constraint that stays
    on the binary side only.
    """
    support = {canonical_bv(graph, bv) for bv in constraint.support()}
    anchors = []
    for name in graph.vertex_names:
        star = {ye(k) for k in graph.incident(name)}
        star.add(yv(name))
        if support and support <= star:
            anchors.append(name)
    return anchors


def linearize_affine(
    constraint: AffineIlpConstraint, anchor, graph: GcsGraph
) -> tuple[LocalConstraint | None, bool]:
    """Rewrite an anchored affine constraint as a linear one.

    The constant is absorbed into the anchor coefficient. A negative
    constant on an inequality, or any nonzero constant on an equality,
    additionally forces ``y_anchor = 1``; the boolean return says so.
    Degenerate all-zero results come back as ``None``.
    """
    incident = set(graph.incident(anchor))
    a = 0.0
    b: dict[tuple, float] = {}
    for bv, coef in constraint.terms.items():
        if coef == 0.0:
            continue
        if bv.kind == VERTEX:
            if bv.key != anchor:
                raise GraphError(f"constraint is not local to {anchor!r}")
            a += coef
        else:
            key = bv.key if bv.key in incident else (bv.key[1], bv.key[0])
            if key not in incident:
                raise GraphError(f"edge {bv.key!r} is not incident to {anchor!r}")
            b[key] = b.get(key, 0.0) + coef
    c = constraint.const
    if constraint.sense == GE:
        fix = c < 0.0
    else:
        fix = c != 0.0
    lc = LocalConstraint(anchor, a + c, b, constraint.sense)
    if lc.is_zero():
        return None, fix
    return lc, fix


def lift_inequality(lc: LocalConstraint) -> LiftedMembership:
    """Valid conic constraint generated from a local linear inequality."""
    return LiftedMembership(lc.anchor, lc.a, tuple(sorted(lc.b.items(), key=lambda kv: repr(kv[0]))))


def lift_equality(lc: LocalConstraint) -> LiftedEquality:
    """Valid linear equality generated from a local linear equality."""
    return LiftedEquality(lc.anchor, lc.a, tuple(sorted(lc.b.items(), key=lambda kv: repr(kv[0]))))


def check_redundancy(local: list[LocalConstraint], target: LocalConstraint, tol: float = 1e-9) -> bool:
    """Decide whether ``target >= 0`` is a nonnegative combination of the
    local system (equalities contribute with free sign).

    Solved as a small multiplier feasibility program; solver trouble is
    reported as ``False`` so the base constraint is conservatively kept.
    """
    if not local:
        return False
    coords = [None] + sorted({k for lc in local for k in lc.b} | set(target.b), key=repr)
    index = {c: i for i, c in enumerate(coords)}

    def column(lc: LocalConstraint) -> np.ndarray:
        col = np.zeros(len(coords))
        col[0] = lc.a
        for k, c in lc.b.items():
            col[index[k]] = c
        return col

    A_eq = np.column_stack([column(lc) for lc in local])
    b_eq = column(target)
    bounds = [(0.0, None) if lc.sense == GE else (None, None) for lc in local]
    try:
        res = linprog(
            np.zeros(len(local)),
            A_eq=A_eq,
            b_eq=b_eq,
            bounds=bounds,
            method="highs",
            options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol},
        )
    except ValueError:
        return False
    return bool(res.status == 0)


@dataclass
class TailoredPlan:
    """Per-vertex lifting output plus the untouched binary side."""

    ilp: IlpDescription
    fixes: dict[BinaryVar, int]
    memberships: list[LiftedMembership]
    equalities: list[LiftedEquality]
    keep_27c: dict[tuple, bool]  # (vertex, edge key) -> keep base constraint
    keep_27d: dict[tuple, bool]
    extra_binary: list[AffineIlpConstraint] = field(default_factory=list)
    audit: list[str] = field(default_factory=list)


def tailor(graph: GcsGraph, ilp: IlpDescription) -> TailoredPlan:
    """Generate the tailored constraint plan for a graph and polytope.

    Every constraint local to a vertex is linearized and lifted there (a
    constraint with several admissible anchors is lifted at each one).
    Base product constraints whose generating subgraph inequality is
    implied by the local system are marked dropped. Global constraints
    and separators participate only on the binary side.
    """
    fixes: dict[BinaryVar, int] = dict(ilp.fixed)
    extra_binary: list[AffineIlpConstraint] = []
    audit: list[str] = []
    memberships: list[LiftedMembership] = []
    equalities: list[LiftedEquality] = []
    seen_members: set = set()
    seen_eqs: set = set()
    local_by_vertex: dict[object, list[LocalConstraint]] = {name: [] for name in graph.vertex_names}

    def record_fix(name):
        bv = yv(name)
        prev = fixes.get(bv)
        if prev is None:
            fixes[bv] = 1
            audit.append(f"fixed y[{name!r}] = 1")
        elif prev != 1:
            # Conflicting fix: keep both conditions and let the solver
            # certify infeasibility instead of erroring here.
            extra_binary.append(AffineIlpConstraint({bv: 1.0}, -1.0, EQ, tag="conflicting-fix"))
            audit.append(f"conflicting fix for y[{name!r}]")

    for constraint in ilp.constraints:
        anchors = localize(constraint, graph)
        for anchor in anchors:
            lc, fix = linearize_affine(constraint, anchor, graph)
            if fix:
                record_fix(anchor)
            if lc is None:
                continue
            local_by_vertex[anchor].append(lc)
            if lc.sense == GE:
                lifted = lift_inequality(lc)
                key = (lifted.anchor, lifted.coef_v, lifted.coef_e)
                if key not in seen_members:
                    seen_members.add(key)
                    memberships.append(lifted)
            else:
                lifted_eq = lift_equality(lc)
                key = (lifted_eq.anchor, lifted_eq.coef_v, lifted_eq.coef_e)
                if key not in seen_eqs:
                    seen_eqs.add(key)
                    equalities.append(lifted_eq)

    keep_27c: dict[tuple, bool] = {}
    keep_27d: dict[tuple, bool] = {}
    for name in graph.vertex_names:
        local = local_by_vertex[name]
        for ekey in graph.incident(name):
            nonneg = LocalConstraint(name, 0.0, {ekey: 1.0}, GE)
            dominance = LocalConstraint(name, 1.0, {ekey: -1.0}, GE)
            keep_27c[(name, ekey)] = not check_redundancy(local, nonneg)
            keep_27d[(name, ekey)] = not check_redundancy(local, dominance)

    return TailoredPlan(ilp, fixes, memberships, equalities, keep_27c, keep_27d, extra_binary, audit)
