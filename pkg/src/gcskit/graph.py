"""Graph of convex sets: named vertices and edges carrying sets and costs.

Vertices hold a continuous variable, a list of conic constraint sets, and
cost atoms; edges couple the endpoint variables (plus optional auxiliary
edge variables) with their own sets and atoms. Construction is
single-writer; ``freeze`` makes a graph immutable and safe to share.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import cones
from .cones import ConicSet, CostAtom
from .conic_solver import OPTIMAL, ConicConstraint, ConicProgram, solve_conic


class GraphError(ValueError):
    """Structural problem in the graph definition."""


@dataclass
class Vertex:
    name: object
    dim: int
    constraints: list[ConicSet] = field(default_factory=list)
    costs: list[CostAtom] = field(default_factory=list)

    def __post_init__(self):
        if self.dim < 1:
            raise GraphError("vertex dimension must be at least 1")

    def constraint_set(self) -> ConicSet:
        """Intersection of all constraint sets (whole space if none)."""
        return cones.intersect(self.constraints, self.dim)

    def cost(self, x) -> float:
        return float(sum(a.evaluate(x) for a in self.costs))


@dataclass
class Edge:
    """Edge between stored endpoints ``tail -> head`` (canonical order when
    undirected). Sets and costs act on the stacked ``(x_tail, x_head, x_e)``."""

    tail: object
    head: object
    dim_tail: int
    dim_head: int
    aux_dim: int = 0
    constraints: list[ConicSet] = field(default_factory=list)
    costs: list[CostAtom] = field(default_factory=list)

    @property
    def key(self) -> tuple:
        return (self.tail, self.head)

    @property
    def var_dim(self) -> int:
        return self.dim_tail + self.dim_head + self.aux_dim

    def constraint_set(self) -> ConicSet:
        return cones.intersect(self.constraints, self.var_dim)

    def cost(self, x_tail, x_head, x_aux=()) -> float:
        u = np.concatenate([np.atleast_1d(x_tail), np.atleast_1d(x_head), np.atleast_1d(np.asarray(x_aux, dtype=float))])
        return float(sum(a.evaluate(u) for a in self.costs))


class GcsGraph:
    """Directed or undirected graph whose elements carry convex programs."""

    def __init__(self, directed: bool = True):
        self.directed = bool(directed)
        self._vertices: dict[object, Vertex] = {}
        self._edges: dict[tuple, Edge] = {}
        self._order: dict[object, int] = {}
        self._frozen = False

    # -- construction --------------------------------------------------------

    def _check_mutable(self):
        if self._frozen:
            raise GraphError("graph is frozen")

    def add_vertex(self, name, dim: int) -> Vertex:
        self._check_mutable()
        if name in self._vertices:
            raise GraphError(f"duplicate vertex name {name!r}")
        v = Vertex(name, dim)
        self._vertices[name] = v
        self._order[name] = len(self._order)
        return v

    def add_edge(self, tail, head, aux_dim: int = 0) -> Edge:
        self._check_mutable()
        if tail not in self._vertices or head not in self._vertices:
            raise GraphError(f"unknown endpoint in edge ({tail!r}, {head!r})")
        if tail == head:
            raise GraphError("self-loops are not allowed")
        if aux_dim < 0:
            raise GraphError("edge auxiliary dimension must be nonnegative")
        if not self.directed and self._order[tail] > self._order[head]:
            tail, head = head, tail
        key = (tail, head)
        if key in self._edges or (not self.directed and (head, tail) in self._edges):
            raise GraphError(f"duplicate edge {key!r}")
        e = Edge(tail, head, self._vertices[tail].dim, self._vertices[head].dim, aux_dim)
        self._edges[key] = e
        return e

    def freeze(self):
        self._frozen = True
        return self

    # -- access ---------------------------------------------------------------

    @property
    def vertices(self) -> list[Vertex]:
        return list(self._vertices.values())

    @property
    def edges(self) -> list[Edge]:
        return list(self._edges.values())

    @property
    def vertex_names(self) -> list:
        return list(self._vertices)

    @property
    def edge_keys(self) -> list[tuple]:
        return list(self._edges)

    def has_vertex(self, name) -> bool:
        return name in self._vertices

    def vertex(self, name) -> Vertex:
        try:
            return self._vertices[name]
        except KeyError:
            raise GraphError(f"unknown vertex {name!r}") from None

    def edge(self, key) -> Edge:
        key = tuple(key)
        if key in self._edges:
            return self._edges[key]
        if not self.directed and (key[1], key[0]) in self._edges:
            return self._edges[(key[1], key[0])]
        raise GraphError(f"unknown edge {key!r}")

    def incoming(self, name) -> list[tuple]:
        if not self.directed:
            raise GraphError("incoming edges are defined for directed graphs")
        return [k for k in self._edges if k[1] == name]

    def outgoing(self, name) -> list[tuple]:
        if not self.directed:
            raise GraphError("outgoing edges are defined for directed graphs")
        return [k for k in self._edges if k[0] == name]

    def incident(self, name) -> list[tuple]:
        return [k for k in self._edges if name in k]


def vertex_epigraph(v: Vertex) -> tuple[ConicSet, int, float]:
    """Vertex set intersected with lowered cost epigraphs over ``(x, slacks)``."""
    return cones.epigraph_set(v.constraints, v.costs, v.dim)


def edge_epigraph(e: Edge) -> tuple[ConicSet, int, float]:
    return cones.epigraph_set(e.constraints, e.costs, e.var_dim)


class RecessionCheck(enum.Enum):
    OK = "ok"
    VIOLATED = "violated"
    UNKNOWN = "unknown"

    def __bool__(self) -> bool:
        return self is RecessionCheck.OK


def validate_recession(graph: GcsGraph, v: Vertex, tol: float = 1e-6) -> RecessionCheck:
    """Probe whether costs grow superlinearly along the vertex set's recession
    directions.

    The check maximizes each signed coordinate of ``x`` over the recession
    cone of the vertex's epigraph set, intersected with the unit box. Any
    probe value above ``tol`` exhibits a recession direction with nonzero
    ``x``, which makes the homogenized program drift; solver trouble is
    reported as ``UNKNOWN`` rather than a verdict.
    """
    epi, _, _ = vertex_epigraph(v)
    cone = cones.recession_cone(epi)
    total = epi.n
    blocks = [ConicConstraint(cone.C, cone.d, cone.cones)] if cone.m else []
    lb = np.full(total, -1.0)
    ub = np.full(total, 1.0)
    for i in range(v.dim):
        for sign in (1.0, -1.0):
            c = np.zeros(total)
            c[i] = -sign  # maximize sign * x_i
            sol = solve_conic(ConicProgram(c, list(blocks), lb, ub))
            if sol.status != OPTIMAL:
                return RecessionCheck.UNKNOWN
            if -sol.value > tol:
                return RecessionCheck.VIOLATED
    return RecessionCheck.OK
