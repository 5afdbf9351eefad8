"""Cones, conic-form convex sets, homogenization, and cost-atom lowering.

A set is stored as ``{x : C x + d in K}`` where ``K`` is a product of
zero cones, nonnegative orthants, and second-order cones. This fixed menu
is enough for every problem the package builds, and it keeps the embedded
relaxation solver simple. All objects are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-8

ZERO = "zero"
NONNEG = "nonneg"
SOC = "soc"

_CONE_KINDS = (ZERO, NONNEG, SOC)


def _frozen_array(a, shape=None) -> np.ndarray:
    out = np.array(a, dtype=float)
    if shape is not None:
        out = out.reshape(shape)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Cone:
    """One factor of a product cone.

    ``zero`` is the origin, ``nonneg`` the nonnegative orthant, and ``soc``
    the second-order cone whose first coordinate bounds the Euclidean norm
    of the rest.
    """

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in _CONE_KINDS:
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("cone dimension must be positive")

    def contains(self, u: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"expected vector of dim {self.dim}, got {u.shape}")
        if self.kind == ZERO:
            return bool(np.max(np.abs(u), initial=0.0) <= tol)
        if self.kind == NONNEG:
            return bool(np.min(u, initial=0.0) >= -tol)
        return bool(u[0] >= float(np.linalg.norm(u[1:])) - tol)

    def violation(self, u: np.ndarray) -> float:
        """Distance-like violation measure, zero inside the cone."""
        u = np.asarray(u, dtype=float)
        if self.kind == ZERO:
            return float(np.max(np.abs(u), initial=0.0))
        if self.kind == NONNEG:
            return float(max(0.0, -np.min(u, initial=0.0)))
        return float(max(0.0, np.linalg.norm(u[1:]) - u[0]))


@dataclass(frozen=True)
class ConicSet:
    """Closed convex set ``{x in R^n : C x + d in K}``.

    The rows of ``(C, d)`` are partitioned by ``cones`` in order; their
    dimensions must sum to the row count.
    """

    C: np.ndarray
    d: np.ndarray
    cones: tuple[Cone, ...]
    n: int

    def __post_init__(self):
        C = _frozen_array(self.C, shape=(-1, self.n) if self.n else (-1, 0))
        d = _frozen_array(self.d, shape=(-1,))
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "cones", tuple(self.cones))
        if C.shape[0] != d.shape[0]:
            raise ValueError("C and d row counts differ")
        if sum(c.dim for c in self.cones) != C.shape[0]:
            raise ValueError("cone dims do not match row count")
        if not np.all(np.isfinite(C)) or not np.all(np.isfinite(d)):
            raise ValueError("set data must be finite")

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def residual(self, x: np.ndarray) -> float:
        """Worst cone violation of ``C x + d`` across all blocks."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"point has dim {x.shape}, set is over R^{self.n}")
        u = self.C @ x + self.d
        worst = 0.0
        at = 0
        for cone in self.cones:
            worst = max(worst, cone.violation(u[at : at + cone.dim]))
            at += cone.dim
        return worst

    def contains(self, x: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
        return self.residual(x) <= tol


@dataclass(frozen=True)
class HomogenizedSet:
    """Cone ``{(x, y) : y >= 0, C x + d y in K}`` built from a conic set.

    Slicing at ``y = 1`` recovers the base set; the slice at ``y = 0`` is
    the recession cone of a well-posed representation. No closure beyond
    the conic formula is taken.
    """

    base: ConicSet

    @property
    def n(self) -> int:
        return self.base.n + 1

    def contains(self, point: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
        point = np.asarray(point, dtype=float)
        if point.shape != (self.n,):
            raise ValueError(f"point has dim {point.shape}, cone is over R^{self.n}")
        x, y = point[:-1], point[-1]
        if y < -tol:
            return False
        u = self.base.C @ x + self.base.d * y
        at = 0
        for cone in self.base.cones:
            if not cone.contains(u[at : at + cone.dim], tol):
                return False
            at += cone.dim
        return True

    def as_conic_set(self) -> ConicSet:
        """Equivalent plain conic set over ``(x, y)``, with the ``y >= 0`` row last."""
        base = self.base
        C = np.zeros((base.m + 1, base.n + 1))
        C[: base.m, : base.n] = base.C
        C[: base.m, base.n] = base.d
        C[base.m, base.n] = 1.0
        return ConicSet(C, np.zeros(base.m + 1), base.cones + (Cone(NONNEG, 1),), base.n + 1)


def homogenize(s: ConicSet) -> HomogenizedSet:
    """Homogenization of a conic-form set via the conic formula.

    For well-posed representations this coincides with the closed conic
    hull of the set lifted to height one; pathological representations
    where ``{x : C x in K}`` strictly exceeds the recession cone are the
    caller's responsibility.
    """
    return HomogenizedSet(s)


def recession_cone(s: ConicSet) -> ConicSet:
    """Directions of unbounded extension, ``{x : C x in K}``."""
    return ConicSet(s.C, np.zeros(s.m), s.cones, s.n)


def contains(s: ConicSet | HomogenizedSet, point, tol: float = DEFAULT_TOL) -> bool:
    """Membership test for either representation, within absolute tolerance."""
    return s.contains(np.asarray(point, dtype=float), tol)


# -- constructors -----------------------------------------------------------


def whole_space(n: int) -> ConicSet:
    return ConicSet(np.zeros((0, n)), np.zeros(0), (), n)


def from_point(p) -> ConicSet:
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    return ConicSet(np.eye(n), -p, (Cone(ZERO, n),), n)


def from_box(lower, upper) -> ConicSet:
    """Axis-aligned box ``lower <= x <= upper``."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or lower.ndim != 1:
        raise ValueError("box bounds must be equal-length vectors")
    if np.any(lower > upper):
        raise ValueError("box has empty interior ordering")
    n = lower.shape[0]
    C = np.vstack([np.eye(n), -np.eye(n)])
    d = np.concatenate([-lower, upper])
    return ConicSet(C, d, (Cone(NONNEG, 2 * n),), n)


def from_ball(center, radius: float) -> ConicSet:
    """Euclidean ball ``||x - center|| <= radius``."""
    center = np.asarray(center, dtype=float)
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    n = center.shape[0]
    C = np.vstack([np.zeros(n), np.eye(n)])
    d = np.concatenate([[radius], -center])
    return ConicSet(C, d, (Cone(SOC, n + 1),), n)


def from_halfspaces(A, b) -> ConicSet:
    """Polyhedron ``A x <= b``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or b.shape != (A.shape[0],):
        raise ValueError("need A (k x n) and b (k,)")
    return ConicSet(-A, b, (Cone(NONNEG, A.shape[0]),), A.shape[1])


def intersect(sets: list[ConicSet], n: int) -> ConicSet:
    """Intersection by stacking rows; all sets must share ambient dimension."""
    for s in sets:
        if s.n != n:
            raise ValueError("ambient dimension mismatch in intersection")
    if not sets:
        return whole_space(n)
    C = np.vstack([s.C for s in sets])
    d = np.concatenate([s.d for s in sets])
    cones = tuple(c for s in sets for c in s.cones)
    return ConicSet(C, d, cones, n)


def embed(s: ConicSet, total_n: int, offset: int) -> ConicSet:
    """Same set read over a larger ambient space, acting on a coordinate block."""
    if offset < 0 or offset + s.n > total_n:
        raise ValueError("embedding block out of range")
    C = np.zeros((s.m, total_n))
    C[:, offset : offset + s.n] = s.C
    return ConicSet(C, s.d, s.cones, total_n)


def embed_coords(s: ConicSet, total_n: int, coords) -> ConicSet:
    """Embedding onto an arbitrary coordinate selection."""
    coords = list(coords)
    if len(coords) != s.n:
        raise ValueError("coordinate selection does not match set dimension")
    if any(c < 0 or c >= total_n for c in coords):
        raise ValueError("coordinate index out of range")
    C = np.zeros((s.m, total_n))
    C[:, coords] = s.C
    return ConicSet(C, s.d, s.cones, total_n)


# -- cost atoms --------------------------------------------------------------

LINEAR = "linear"
L1 = "l1"
L2 = "l2"
LINF = "linf"
SQUARED_L2 = "squared_l2"
CONSTANT = "constant"

_ATOM_KINDS = (LINEAR, L1, L2, LINF, SQUARED_L2, CONSTANT)

# l1 lowering enumerates sign patterns; beyond this width the epigraph blows up.
_L1_MAX_DIM = 16


@dataclass(frozen=True)
class CostAtom:
    """Convex cost term ``weight * g(A x + b)`` on a vertex or edge variable.

    ``g`` is fixed by ``kind``: the coordinate sum for ``linear``, a norm
    for ``l1``/``l2``/``linf``, the squared Euclidean norm for
    ``squared_l2``, and the constant one for ``constant``. Every kind is
    conic-representable with the supported cones only.
    """

    kind: str
    A: np.ndarray
    b: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in _ATOM_KINDS:
            raise ValueError(f"unknown atom kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("atom weight must be nonnegative")
        A = _frozen_array(self.A) if np.ndim(self.A) else _frozen_array([[self.A]])
        if A.ndim != 2:
            raise ValueError("atom map A must be a matrix")
        b = _frozen_array(self.b, shape=(-1,))
        if b.shape[0] != A.shape[0]:
            raise ValueError("atom map A and b row counts differ")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def input_dim(self) -> int:
        return self.A.shape[1]

    def evaluate(self, x) -> float:
        if self.kind == CONSTANT:
            return float(self.weight)
        u = self.A @ np.asarray(x, dtype=float) + self.b
        if self.kind == LINEAR:
            return float(self.weight * np.sum(u))
        if self.kind == L1:
            return float(self.weight * np.sum(np.abs(u)))
        if self.kind == L2:
            return float(self.weight * np.linalg.norm(u))
        if self.kind == LINF:
            return float(self.weight * np.max(np.abs(u), initial=0.0))
        return float(self.weight * np.dot(u, u))


def atom(kind: str, A=None, b=None, weight: float = 1.0, n: int | None = None) -> CostAtom:
    """Convenience constructor; identity map of dimension ``n`` by default."""
    if kind == CONSTANT:
        return CostAtom(CONSTANT, np.zeros((0, n or 0)), np.zeros(0), weight)
    if A is None:
        if n is None:
            raise ValueError("need A or n")
        A = np.eye(n)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if b is None:
        b = np.zeros(A.shape[0])
    return CostAtom(kind, A, b, weight)


def lower_atom(a: CostAtom, n: int) -> tuple[ConicSet, int]:
    """Epigraph ``{(x, s) : s >= f(x)}`` of an atom as a conic set over R^{n+1}.

    The slack is the last coordinate; its index is returned alongside. The
    squared norm uses the standard second-order-cone embedding
    ``(s + 1, 2u, s - 1)``.
    """
    if a.kind != CONSTANT and a.input_dim != n:
        raise ValueError(f"atom expects input dim {a.input_dim}, got {n}")
    w = a.weight
    s_col = np.zeros(n + 1)
    s_col[n] = 1.0

    if a.kind == CONSTANT:
        C = s_col.reshape(1, -1)
        return ConicSet(C, np.array([-w]), (Cone(NONNEG, 1),), n + 1), n

    Ax = np.hstack([a.A, np.zeros((a.A.shape[0], 1))])
    m = a.A.shape[0]

    if a.kind == LINEAR:
        # s - w * sum(A x + b) >= 0
        row = s_col - w * Ax.sum(axis=0)
        return ConicSet(row.reshape(1, -1), np.array([-w * a.b.sum()]), (Cone(NONNEG, 1),), n + 1), n

    if a.kind == LINF:
        # s >= +-w u_i, coordinatewise
        C = np.vstack([s_col - w * Ax, s_col + w * Ax])
        d = np.concatenate([-w * a.b, w * a.b])
        return ConicSet(C, d, (Cone(NONNEG, 2 * m),), n + 1), n

    if a.kind == L1:
        if m > _L1_MAX_DIM:
            raise ValueError(f"l1 atom dimension {m} exceeds lowering limit {_L1_MAX_DIM}")
        # s >= w * max over sign patterns of eps . u
        rows, consts = [], []
        for bits in range(2**m):
            eps = np.array([1.0 if bits >> i & 1 else -1.0 for i in range(m)])
            rows.append(s_col - w * eps @ Ax)
            consts.append(-w * eps @ a.b)
        return ConicSet(np.array(rows), np.array(consts), (Cone(NONNEG, 2**m),), n + 1), n

    if a.kind == L2:
        # (s, w u) in SOC
        C = np.vstack([s_col, w * Ax])
        d = np.concatenate([[0.0], w * a.b])
        return ConicSet(C, d, (Cone(SOC, m + 1),), n + 1), n

    # squared_l2: s >= ||sqrt(w) u||^2  <=>  (s + 1, 2 sqrt(w) u, s - 1) in SOC
    r = math.sqrt(w)
    C = np.vstack([s_col, 2.0 * r * Ax, s_col])
    d = np.concatenate([[1.0], 2.0 * r * a.b, [-1.0]])
    return ConicSet(C, d, (Cone(SOC, m + 2),), n + 1), n


def epigraph_set(constraints: list[ConicSet], atoms: list[CostAtom], n: int) -> tuple[ConicSet, int, float]:
    """Constraint sets intersected with lowered cost epigraphs.

    Returns the joint set over ``(x, slacks)``, the slack count, and the
    total of constant atoms (routed to the objective, not to a slack).
    An element with no non-constant atoms still gets one slack, pinned to
    ``s >= 0``, so that every vertex and edge owns a cost coordinate.
    """
    live = [a for a in atoms if a.kind != CONSTANT]
    constant_total = float(sum(a.weight for a in atoms if a.kind == CONSTANT))
    k = max(1, len(live))
    total = n + k
    parts = [embed(s, total, 0) for s in constraints]
    if live:
        for i, a in enumerate(live):
            epi, _ = lower_atom(a, n)
            parts.append(embed_coords(epi, total, list(range(n)) + [n + i]))
    else:
        row = np.zeros((1, total))
        row[0, n] = 1.0
        parts.append(ConicSet(row, np.zeros(1), (Cone(NONNEG, 1),), total))
    return intersect(parts, total), k, constant_total
