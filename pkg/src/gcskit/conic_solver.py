"""Continuous conic solver for linear and second-order cone programs.

The heavy lifting is done by cvxopt's cone LP solver. This wrapper adds
the presolve that our generated programs need in practice: variables that
appear in no constraint are fixed or declared unbounded, linearly dependent
equality rows are removed (with an inconsistency check), and bounds are
folded into the cone data. Results are verified against the status
contract before being reported optimal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix, solvers
from scipy.linalg import qr

from .cones import NONNEG, SOC, ZERO, Cone

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
INACCURATE = "inaccurate"

_CVXOPT_OPTIONS = {
    "show_progress": False,
    "abstol": 1e-9,
    "reltol": 1e-9,
    "feastol": 1e-9,
    "maxiters": 200,
}

# Residuals an "optimal" answer must meet.
_PRIMAL_RES_TOL = 1e-7
_GAP_TOL = 1e-7


@dataclass(frozen=True)
class ConicConstraint:
    """Rows ``A x + b in K`` for a product cone ``K``."""

    A: np.ndarray
    b: np.ndarray
    cones: tuple[Cone, ...]

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "cones", tuple(self.cones))
        if A.shape[0] != b.shape[0] or sum(c.dim for c in self.cones) != A.shape[0]:
            raise ValueError("constraint block shape mismatch")


@dataclass
class ConicProgram:
    """minimize ``c^T x`` subject to conic constraints and variable bounds."""

    c: np.ndarray
    constraints: list[ConicConstraint] = field(default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.shape[0]
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bounds must match variable count")
        for blk in self.constraints:
            if blk.A.shape[1] != n:
                raise ValueError("constraint block has wrong column count")

    @property
    def n(self) -> int:
        return self.c.shape[0]


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray | None
    value: float
    primal_residual: float
    gap: float

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _split_rows(program: ConicProgram):
    """Regroup constraint rows by cone family: equalities, linear, SOC blocks."""
    eq_A, eq_b = [], []
    lin_A, lin_b = [], []
    soc = []
    for blk in program.constraints:
        at = 0
        for cone in blk.cones:
            A = blk.A[at : at + cone.dim]
            b = blk.b[at : at + cone.dim]
            at += cone.dim
            if cone.kind == ZERO:
                eq_A.append(A)
                eq_b.append(b)
            elif cone.kind == NONNEG:
                lin_A.append(A)
                lin_b.append(b)
            else:
                soc.append((A, b))
    n = program.n
    for i in range(n):
        e = np.zeros((1, n))
        e[0, i] = 1.0
        if program.lb[i] == program.ub[i] and math.isfinite(program.lb[i]):
            eq_A.append(e)
            eq_b.append(np.array([-program.lb[i]]))
            continue
        if math.isfinite(program.lb[i]):
            lin_A.append(e)
            lin_b.append(np.array([-program.lb[i]]))
        if math.isfinite(program.ub[i]):
            lin_A.append(-e)
            lin_b.append(np.array([program.ub[i]]))
    stack = lambda blocks, w: (np.vstack(blocks) if blocks else np.zeros((0, w)))
    cat = lambda blocks: (np.concatenate(blocks) if blocks else np.zeros(0))
    return stack(eq_A, n), cat(eq_b), stack(lin_A, n), cat(lin_b), soc


def _independent_rows(M: np.ndarray, tol_scale: float = 1e-11) -> list[int]:
    """Indices of a maximal linearly independent row subset, in original order."""
    if M.shape[0] == 0:
        return []
    _, R, piv = qr(M.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R)) if R.size else np.zeros(0)
    thresh = tol_scale * max(1.0, diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > thresh))
    return sorted(piv[:rank].tolist())


def _residuals(program: ConicProgram, x: np.ndarray) -> float:
    worst = 0.0
    for blk in program.constraints:
        u = blk.A @ x + blk.b
        at = 0
        for cone in blk.cones:
            worst = max(worst, cone.violation(u[at : at + cone.dim]))
            at += cone.dim
    worst = max(worst, float(np.max(program.lb - x, initial=0.0)))
    worst = max(worst, float(np.max(x - program.ub, initial=0.0)))
    return worst


def solve_conic(program: ConicProgram) -> ConicSolution:
    """Solve a cone program; deterministic for identical input.

    Status is ``optimal`` only when the recovered point meets the residual
    and gap contract; numerical failures surface as ``inaccurate`` with
    the achieved residuals attached.
    """
    n = program.n
    eq_A, eq_b, lin_A, lin_b, soc = _split_rows(program)

    # Columns absent from every row are unconstrained: fix them at zero, or
    # declare the program unbounded if they carry a cost.
    used = np.zeros(n, dtype=bool)
    for A in (eq_A, lin_A, *(a for a, _ in soc)):
        if A.shape[0]:
            used |= np.any(A != 0.0, axis=0)
    free = ~used
    if np.any(free & (program.c != 0.0)):
        return ConicSolution(UNBOUNDED, None, -math.inf, math.inf, math.inf)
    keep = np.flatnonzero(used)
    if keep.size == 0:
        x = np.zeros(n)
        return ConicSolution(OPTIMAL, x, 0.0, _residuals(program, x), 0.0)

    def cols(A):
        return A[:, keep] if A.shape[0] else np.zeros((0, keep.size))

    eq_A_r = cols(eq_A)
    # Drop dependent equality rows; detect inconsistent systems first.
    if eq_A_r.shape[0]:
        aug = np.hstack([eq_A_r, eq_b.reshape(-1, 1)])
        rows_a = _independent_rows(eq_A_r)
        rows_aug = _independent_rows(aug)
        if len(rows_aug) > len(rows_a):
            return ConicSolution(INFEASIBLE, None, math.inf, math.inf, math.inf)
        eq_A_r = eq_A_r[rows_a]
        eq_b_r = eq_b[rows_a]
    else:
        eq_b_r = eq_b

    G_blocks = [-cols(lin_A)]
    h_blocks = [lin_b]
    dims = {"l": int(lin_A.shape[0]), "q": [], "s": []}
    for A, b in soc:
        G_blocks.append(-cols(A))
        h_blocks.append(b)
        dims["q"].append(A.shape[0])
    G = np.vstack(G_blocks)
    h = np.concatenate(h_blocks)
    if G.shape[0] == 0:
        # cvxopt needs at least one inequality row; add a vacuous one.
        G = np.zeros((1, keep.size))
        h = np.array([1.0])
        dims["l"] = 1

    kwargs = {}
    if eq_A_r.shape[0]:
        kwargs["A"] = matrix(eq_A_r)
        kwargs["b"] = matrix(-eq_b_r)
    try:
        sol = solvers.conelp(
            matrix(program.c[keep]),
            matrix(G),
            matrix(h),
            dims,
            options=dict(_CVXOPT_OPTIONS),
            **kwargs,
        )
    except (ValueError, ZeroDivisionError, ArithmeticError):
        return ConicSolution(INACCURATE, None, math.nan, math.inf, math.inf)

    status = sol["status"]
    if status == "primal infeasible":
        return ConicSolution(INFEASIBLE, None, math.inf, math.inf, math.inf)
    if status == "dual infeasible":
        return ConicSolution(UNBOUNDED, None, -math.inf, math.inf, math.inf)
    if sol["x"] is None:
        return ConicSolution(INACCURATE, None, math.nan, math.inf, math.inf)

    x = np.zeros(n)
    x[keep] = np.asarray(sol["x"]).reshape(-1)
    res = _residuals(program, x)
    value = float(program.c @ x)
    gap = sol["gap"] if sol["gap"] is not None else math.inf
    rel_gap = gap / max(1.0, abs(value))
    if res <= _PRIMAL_RES_TOL and rel_gap <= _GAP_TOL:
        return ConicSolution(OPTIMAL, x, value, res, rel_gap)
    return ConicSolution(INACCURATE, x, value, res, rel_gap)
