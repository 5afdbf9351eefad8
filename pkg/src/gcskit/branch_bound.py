"""Branch-and-bound over the mixed-integer conic program.

Binaries are relaxed to [0, 1] and branched most-fractional-first; nodes
are explored depth-first until the first incumbent, then by best bound.
Lazy separators run only at integral candidates, and their cuts go into a
global pool applied to every node from then on. Bounds are traced over
wall time, with the root value recorded before any lazy cut.
"""

from __future__ import annotations

import heapq
import math
import time
import warnings
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assemble import (
    STATUS_INFEASIBLE,
    STATUS_LIMIT,
    STATUS_OPTIMAL,
    STATUS_UNBOUNDED,
    MixedIntegerConicProgram,
    SolveResult,
    extract_solution,
)
from .conic_solver import INFEASIBLE, OPTIMAL, UNBOUNDED, ConicProgram, solve_conic
from .graph import GcsGraph
from .ilp import EQ, GE, AffineIlpConstraint, BinaryVar, canonical_bv, ye, yv


@dataclass
class BnbConfig:
    """Tolerances and search strategy for the embedded solver."""

    node_selection: str = "best-bound"  # or "depth-first"
    branching: str = "most-fractional"
    integrality_tol: float = 1e-6
    rel_gap: float = 1e-6
    time_limit: float | None = None
    workers: int = 1
    separator_mode: str = "integral"

    def __post_init__(self):
        if self.integrality_tol <= 0 or self.rel_gap <= 0:
            raise ValueError("tolerances must be positive")
        if self.node_selection not in ("best-bound", "depth-first"):
            raise ValueError("unknown node selection rule")
        if self.branching != "most-fractional":
            raise ValueError("unknown branching rule")
        if self.separator_mode != "integral":
            raise ValueError("separators run at integral candidates only")


@dataclass
class _Node:
    node_id: int
    depth: int
    fixes: dict[int, float]  # binary column -> value
    bound: float  # valid lower bound inherited from the parent


class _CutPool:
    """Violated binary-side constraints accumulated during the search."""

    def __init__(self, binary_col):
        self.binary_col = binary_col
        self.rows: list[tuple[np.ndarray, float, str]] = []
        self._seen: set = set()

    def add(self, graph: GcsGraph, cut: AffineIlpConstraint) -> bool:
        terms = {}
        for bv, coef in cut.terms.items():
            cbv = canonical_bv(graph, bv)
            terms[cbv] = terms.get(cbv, 0.0) + coef
        key = (tuple(sorted((repr(bv), coef) for bv, coef in terms.items())), cut.const, cut.sense)
        if key in self._seen:
            return False
        self._seen.add(key)
        coefs = np.zeros(len(self.binary_col))
        offset = min(self.binary_col.values())
        for bv, coef in terms.items():
            coefs[self.binary_col[bv] - offset] = coef
        self.rows.append((coefs, float(cut.const), cut.sense))
        return True

    @property
    def version(self) -> int:
        return len(self.rows)


def _node_program(program: MixedIntegerConicProgram, pool: _CutPool, fixes: dict[int, float]) -> ConicProgram:
    n = program.n_total
    n_cont = program.layout.n_continuous
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[n_cont:] = 0.0
    ub[n_cont:] = 1.0
    for col, val in fixes.items():
        lb[col] = ub[col] = val
    constraints = [blk.as_constraint() for blk in program.blocks]
    if pool.rows:
        A = np.zeros((len(pool.rows), n))
        b = np.zeros(len(pool.rows))
        from .cones import Cone, NONNEG, ZERO

        cones = []
        for i, (coefs, const, sense) in enumerate(pool.rows):
            A[i, n_cont:] = coefs
            b[i] = const
            cones.append(Cone(NONNEG if sense == GE else ZERO, 1))
        from .conic_solver import ConicConstraint

        constraints.append(ConicConstraint(A, b, tuple(cones)))
    return ConicProgram(program.objective.copy(), constraints, lb, ub)


def _candidate(program: MixedIntegerConicProgram, point: np.ndarray) -> dict[BinaryVar, int]:
    lay = program.layout
    return {bv: int(round(point[lay.binary_col[bv]])) for bv in lay.binaries}


def _fractionality(program, point, fixes, tol):
    """Most fractional free binary column, or None if integral."""
    lay = program.layout
    best_col, best_frac = None, tol
    for bv in lay.binaries:
        col = lay.binary_col[bv]
        if col in fixes:
            continue
        frac = abs(point[col] - round(point[col]))
        if frac > best_frac:
            best_col, best_frac = col, frac
    return best_col


def solve_micp(program: MixedIntegerConicProgram, config: BnbConfig | None = None) -> SolveResult:
    """Solve to global optimality within the configured relative gap.

    Deterministic for identical input in single-worker mode. The returned
    trace has nondecreasing lower and nonincreasing upper bounds; the
    relaxation value is the root bound before lazy cuts.
    """
    cfg = config or BnbConfig()
    t0 = time.monotonic()
    lay = program.layout
    pool = _CutPool(lay.binary_col)
    base_fixes = {lay.binary_col[bv]: float(val) for bv, val in program.fixes.items()}

    trace: list[tuple[float, float, float]] = []
    incumbent_point = None
    incumbent_value = math.inf
    nodes_processed = 0
    failures = 0

    def elapsed():
        return time.monotonic() - t0

    def record(lb, ub):
        if trace:
            lb = max(lb, trace[-1][1])
            ub = min(ub, trace[-1][2])
        trace.append((elapsed(), lb, ub))

    # Root relaxation, before any lazy cut.
    root_prog = _node_program(program, pool, base_fixes)
    root_sol = solve_conic(root_prog)
    if root_sol.status == INFEASIBLE:
        return SolveResult(STATUS_INFEASIBLE, math.inf, [], [], {}, [], None, wall_seconds=elapsed())
    if root_sol.status == UNBOUNDED:
        raise RuntimeError(
            "root relaxation is unbounded; a vertex cost likely fails to grow "
            "superlinearly along a recession direction of its set"
        )
    if root_sol.status != OPTIMAL:
        warnings.warn("root relaxation solved inaccurately; continuing with a safe bound")
    relaxation_value = root_sol.value if root_sol.x is not None else -math.inf
    record(relaxation_value, math.inf)

    open_nodes: dict[int, _Node] = {}
    heap: list[tuple[float, int]] = []
    stack: deque[int] = deque()
    next_id = 0

    def push(node: _Node):
        open_nodes[node.node_id] = node
        heapq.heappush(heap, (node.bound, node.node_id))
        stack.append(node.node_id)

    def pop() -> _Node:
        if cfg.node_selection == "depth-first" or incumbent_point is None:
            while stack:
                nid = stack.pop()
                if nid in open_nodes:
                    return open_nodes.pop(nid)
        while True:
            _, nid = heapq.heappop(heap)
            if nid in open_nodes:
                return open_nodes.pop(nid)

    def global_lb():
        bounds = [n.bound for n in open_nodes.values()]
        if incumbent_point is not None:
            bounds.append(incumbent_value)
        return min(bounds) if bounds else incumbent_value

    root = _Node(next_id, 0, dict(base_fixes), relaxation_value if math.isfinite(relaxation_value) else -math.inf)
    next_id += 1
    push(root)

    status = STATUS_OPTIMAL
    while open_nodes:
        ub_cut = incumbent_value - cfg.rel_gap * max(1.0, abs(incumbent_value))
        if global_lb() >= ub_cut and incumbent_point is not None:
            break
        if cfg.time_limit is not None and elapsed() > cfg.time_limit:
            status = STATUS_LIMIT
            break
        node = pop()
        if node.bound >= ub_cut and incumbent_point is not None:
            continue
        nodes_processed += 1

        # Lazy-constraint loop: re-solve this node until its optimum is either
        # fractional, pruned, or admissible for every separator.
        while True:
            sol = solve_conic(_node_program(program, pool, node.fixes))
            if sol.status == INFEASIBLE:
                break
            if sol.status == UNBOUNDED:
                raise RuntimeError("node relaxation unbounded; check recession directions")
            if sol.x is None:
                failures += 1
                break
            node.bound = max(node.bound, sol.value if sol.status == OPTIMAL else node.bound)
            if incumbent_point is not None and node.bound >= ub_cut:
                break
            branch_col = _fractionality(program, sol.x, node.fixes, cfg.integrality_tol)
            if branch_col is not None:
                frac_val = sol.x[branch_col]
                for first in (round(frac_val), 1 - round(frac_val)):
                    child_fixes = dict(node.fixes)
                    child_fixes[branch_col] = float(first)
                    push(_Node(next_id, node.depth + 1, child_fixes, node.bound))
                    next_id += 1
                break
            candidate = _candidate(program, sol.x)
            new_cut = False
            for separator in program.separators:
                for cut in separator(candidate):
                    # Only violated cuts are admitted; this keeps the loop finite
                    # even against a sloppy separator.
                    if not cut.satisfied({bv: float(v) for bv, v in candidate.items()}, tol=1e-6):
                        new_cut |= pool.add(program.graph, cut)
            if new_cut:
                continue
            if sol.value < incumbent_value:
                incumbent_point = sol.x.copy()
                incumbent_value = sol.value
                record(global_lb(), incumbent_value)
            break
        record(global_lb(), incumbent_value)

    if incumbent_point is None:
        if status == STATUS_LIMIT:
            return SolveResult(
                STATUS_LIMIT, math.inf, [], [], {}, trace, relaxation_value,
                wall_seconds=elapsed(), nodes=nodes_processed, cuts=pool.version,
            )
        if failures:
            raise RuntimeError("conic solver failed on a fully explored tree; no certified answer")
        return SolveResult(
            STATUS_INFEASIBLE, math.inf, [], [], {}, trace, relaxation_value,
            wall_seconds=elapsed(), nodes=nodes_processed, cuts=pool.version,
        )

    result = extract_solution(program, incumbent_point, binary_tol=10 * cfg.integrality_tol)
    result.status = status
    result.relaxation_value = relaxation_value
    record(incumbent_value if status == STATUS_OPTIMAL else global_lb(), incumbent_value)
    result.bound_trace = trace
    result.wall_seconds = elapsed()
    result.nodes = nodes_processed
    result.cuts = pool.version
    return result


# -- lazy separators -----------------------------------------------------------


def _selected(candidate, graph: GcsGraph):
    sel_v = [name for name in graph.vertex_names if candidate.get(yv(name), 0) == 1]
    sel_e = [key for key in graph.edge_keys if candidate.get(ye(key), 0) == 1]
    return sel_v, sel_e


def _components(vertices, edges):
    parent = {v: v for v in vertices}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, w in edges:
        ru, rw = find(u), find(w)
        if ru != rw:
            parent[ru] = rw
    comps: dict = {}
    for v in vertices:
        comps.setdefault(find(v), []).append(v)
    return list(comps.values())


def _edges_within(graph: GcsGraph, names) -> list[tuple]:
    inside = set(names)
    return [k for k in graph.edge_keys if k[0] in inside and k[1] in inside]


def _dfj_cut(graph, names) -> AffineIlpConstraint:
    # sum of edges inside U  <=  |U| - 1
    terms = {ye(k): -1.0 for k in _edges_within(graph, names)}
    return AffineIlpConstraint(terms, float(len(names) - 1), GE, tag="subtour")


def _gsec_cut(graph, names) -> AffineIlpConstraint:
    # sum of edges inside U  <=  sum of y_v over U minus one selected anchor
    anchor = min(names, key=repr)
    terms = {ye(k): -1.0 for k in _edges_within(graph, names)}
    for v in names:
        if v != anchor:
            terms[yv(v)] = terms.get(yv(v), 0.0) + 1.0
    return AffineIlpConstraint(terms, 0.0, GE, tag="subtour")


def _shortest_cycle(vertices, edges):
    """Vertex set of a shortest cycle in an undirected edge list, or None."""
    adj: dict = {v: [] for v in vertices}
    for u, w in edges:
        adj[u].append(w)
        adj[w].append(u)
    best = None
    for u, w in sorted(edges, key=repr):
        # BFS from u to w avoiding the direct edge.
        seen = {u: None}
        queue = deque([u])
        skipped = False
        while queue:
            a = queue.popleft()
            for b in adj[a]:
                if a == u and b == w and not skipped:
                    skipped = True
                    continue
                if b not in seen:
                    seen[b] = a
                    queue.append(b)
        if w in seen:
            path = [w]
            while path[-1] != u:
                path.append(seen[path[-1]])
            if best is None or len(path) < len(best):
                best = path
    return best


def separate_subtours(candidate, graph: GcsGraph, policy: str, required=None, root=None):
    """Violated lazy constraints for an integral candidate, or an empty list.

    Policies: ``tsp_subtour`` cuts one smallest subtour (subset form when
    every vertex is required, generalized form otherwise); ``mstp_subtour``
    cuts a shortest cycle; ``msap_cutset`` returns one incoming-cutset
    constraint for every minimum-length cycle.
    """
    sel_v, sel_e = _selected(candidate, graph)
    if policy in ("tsp_subtour", "mstp_subtour"):
        if policy == "mstp_subtour":
            cycle = _shortest_cycle(sel_v, sel_e)
            return [] if cycle is None else [_dfj_cut(graph, sorted(cycle, key=repr))]
        comps = _components(sel_v, sel_e)
        if len(comps) <= 1:
            return []
        need = set(graph.vertex_names if required is None else required)
        cuttable = [sorted(c, key=repr) for c in comps if not need <= set(c)]
        cuttable.sort(key=lambda c: (len(c), [repr(v) for v in c]))
        if not cuttable:
            return []
        U = cuttable[0]
        full = need == set(graph.vertex_names)
        return [_dfj_cut(graph, U) if full else _gsec_cut(graph, U)]

    if policy == "msap_cutset":
        pred = {}
        for tail, head in sel_e:
            pred[head] = tail
        cycles = []
        color = {}
        for start in sorted(pred, key=repr):
            if color.get(start):
                continue
            path, v = [], start
            local = {}
            while v in pred and v not in color and v not in local:
                local[v] = len(path)
                path.append(v)
                v = pred[v]
            if v in local:
                cycles.append(path[local[v] :])
            for u in path:
                color[u] = True
        if not cycles:
            return []
        min_len = min(len(c) for c in cycles)
        cuts = []
        for cycle in sorted((c for c in cycles if len(c) == min_len), key=repr):
            inside = set(cycle)
            terms = {ye(k): 1.0 for k in graph.edge_keys if k[1] in inside and k[0] not in inside}
            cuts.append(AffineIlpConstraint(terms, -1.0, GE, tag="cutset"))
        return cuts

    raise ValueError(f"unknown separation policy {policy!r}")
