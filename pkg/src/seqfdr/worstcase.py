"""LP verification that the step-value bound is the exact worst-case FDR.

For small J the maximal FDR over all joint distributions of rejection
events is a finite linear program: variables are probabilities of the
elementary outcomes "k rejections total, the false ones are the null
streams i_vec rejected at levels j_vec", the objective is the expected
false discovery proportion, and the step-value contracts give the
constraints.  Solving it and comparing with d_bound_at shows the bound is
attained, not merely valid.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .core import StepVector, d_bound_at
from .errors import ConfigError, SolverError

__all__ = [
    "VariableIndex",
    "LpProblem",
    "VerifyReport",
    "enumerate_variables",
    "build_problem",
    "solve_max",
    "verify_bound",
]

SIZE_GUARD = 5
_PIVOT_TOL = 1e-10
_FEAS_TOL = 1e-9


@dataclass(frozen=True)
class VariableIndex:
    """One elementary outcome: k rejections, false ones listed explicitly.

    ``i_vec`` holds the 1-based null-stream indices falsely rejected,
    strictly increasing; ``j_vec[d]`` is the step-down level at which
    ``i_vec[d]`` was rejected, each in [1, k].
    """

    ell: int
    k: int
    i_vec: tuple[int, ...]
    j_vec: tuple[int, ...]

    def __post_init__(self):
        if not 1 <= self.ell <= self.k:
            raise ValueError(f"need 1 <= ell <= k, got ell={self.ell}, k={self.k}")
        if len(self.i_vec) != self.ell or len(self.j_vec) != self.ell:
            raise ValueError("i_vec and j_vec must have length ell")
        if any(a >= b for a, b in zip(self.i_vec, self.i_vec[1:])) or self.i_vec[0] < 1:
            raise ValueError("i_vec must be strictly increasing and positive")
        if any(not 1 <= j <= self.k for j in self.j_vec):
            raise ValueError("j_vec entries must lie in [1, k]")


@dataclass(frozen=True)
class LpProblem:
    """max objective . x  subject to  rows . x <= rhs,  x >= 0."""

    variables: tuple[VariableIndex, ...]
    objective: np.ndarray
    rows: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        obj = np.asarray(self.objective, dtype=float)
        rows = np.asarray(self.rows, dtype=float)
        rhs = np.asarray(self.rhs, dtype=float)
        if rows.shape != (rhs.size, obj.size):
            raise ValueError("constraint matrix shape mismatch")
        for arr in (obj, rows, rhs):
            arr.setflags(write=False)
        object.__setattr__(self, "objective", obj)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "rhs", rhs)


@dataclass(frozen=True)
class VerifyReport:
    """Comparison of the LP optimum against the closed-form bound."""

    j: int
    m0: int
    lp_optimum: float
    d_value: float
    gap: float
    passed: bool
    tolerance: float = 1e-7


def enumerate_variables(j: int, m0: int) -> tuple[VariableIndex, ...]:
    """All elementary outcomes not forced to zero probability.

    An outcome needs k - ell true rejections, impossible when
    k - ell > j - m0.  And a step-down run of k rejections must fill the
    levels 1..k, so the sorted false-rejection levels satisfy
    j_(d) <= k - ell + d; otherwise some level below j_(d) has no
    hypothesis left to occupy it.
    """
    if not 2 <= j <= SIZE_GUARD:
        raise ConfigError(f"j={j} outside the supported range [2, {SIZE_GUARD}]")
    if not 1 <= m0 <= j:
        raise ConfigError(f"m0={m0} outside [1, j]")
    out = []
    for k in range(1, j + 1):
        for ell in range(1, min(k, m0) + 1):
            if k - ell > j - m0:
                continue
            for i_vec in combinations(range(1, m0 + 1), ell):
                for j_vec in product(range(1, k + 1), repeat=ell):
                    ranked = sorted(j_vec)
                    if all(ranked[d] <= k - ell + d + 1 for d in range(ell)):
                        out.append(VariableIndex(ell, k, i_vec, j_vec))
    return tuple(out)


def build_problem(alpha: StepVector, m0: int) -> LpProblem:
    """Assemble the worst-case-FDR program for the given step values.

    Objective: E[V/R] = sum over outcomes of (ell/k) p.  For each null
    stream i and level s, the step-down contract bounds the probability
    that i is rejected at a level <= s by alpha_s; one extra row per i
    keeps its total rejection probability at most 1.
    """
    j = alpha.j
    variables = enumerate_variables(j, m0)
    n = len(variables)
    objective = np.array([v.ell / v.k for v in variables])
    rows = np.zeros((m0 * j + m0, n))
    rhs = np.empty(m0 * j + m0)
    for i in range(1, m0 + 1):
        for s in range(1, j + 1):
            r = (i - 1) * j + (s - 1)
            rhs[r] = alpha.values[s - 1]
            for col, var in enumerate(variables):
                if any(iv == i and jv <= s for iv, jv in zip(var.i_vec, var.j_vec)):
                    rows[r, col] = 1.0
        r = m0 * j + (i - 1)
        rhs[r] = 1.0
        for col, var in enumerate(variables):
            if i in var.i_vec:
                rows[r, col] = 1.0
    return LpProblem(variables=variables, objective=objective, rows=rows, rhs=rhs)


def solve_max(problem: LpProblem) -> tuple[float, np.ndarray]:
    """Dense primal simplex with Bland's rule.

    The constraints have nonnegative right-hand sides, so the slack basis
    is feasible and no phase-1 is needed.  Bland's rule (lowest-index
    entering and leaving variables) guarantees termination; the iteration
    guard only catches numerical degeneracy.
    """
    c = problem.objective
    a = problem.rows
    b = problem.rhs
    if np.any(b < 0.0):
        raise SolverError("slack basis infeasible: negative right-hand side")
    m, n = a.shape
    tableau = np.zeros((m + 1, n + m + 1))
    tableau[:m, :n] = a
    tableau[:m, n : n + m] = np.eye(m)
    tableau[:m, -1] = b
    tableau[m, :n] = -c
    basis = list(range(n, n + m))
    max_iter = 200 * (n + m) + 1000
    for _ in range(max_iter):
        reduced = tableau[m, : n + m]
        entering = -1
        for col in range(n + m):
            if reduced[col] < -_PIVOT_TOL:
                entering = col
                break
        if entering < 0:
            break
        col_vals = tableau[:m, entering]
        best = None
        for row in range(m):
            if col_vals[row] > _PIVOT_TOL:
                ratio = tableau[row, -1] / col_vals[row]
                key = (ratio, basis[row])
                if best is None or key < best[0]:
                    best = (key, row)
        if best is None:
            raise SolverError("objective unbounded above (no valid pivot row)")
        piv = best[1]
        tableau[piv] /= tableau[piv, entering]
        for row in range(m + 1):
            if row != piv and tableau[row, entering] != 0.0:
                tableau[row] -= tableau[row, entering] * tableau[piv]
        basis[piv] = entering
    else:
        raise SolverError(f"simplex did not converge within {max_iter} iterations")
    x = np.zeros(n)
    for row, var in enumerate(basis):
        if var < n:
            x[var] = tableau[row, -1]
    value = float(tableau[m, -1])
    # self-check: returned point must satisfy every row
    if np.any(x < -_FEAS_TOL) or np.any(a @ x > b + _FEAS_TOL):
        raise SolverError("solution fails feasibility self-check")
    if abs(float(c @ x) - value) > 1e-8 * max(1.0, abs(value)):
        raise SolverError("objective value inconsistent with solution vector")
    return value, x


def verify_bound(alpha: StepVector, m0: int, tolerance: float = 1e-7) -> VerifyReport:
    """Check that the LP optimum coincides with d_bound_at(alpha, m0)."""
    if m0 == 0:
        return VerifyReport(
            j=alpha.j, m0=0, lp_optimum=0.0, d_value=d_bound_at(alpha, 0),
            gap=0.0, passed=True, tolerance=tolerance,
        )
    value, _ = solve_max(build_problem(alpha, m0))
    d_val = d_bound_at(alpha, m0)
    gap = abs(value - d_val)
    return VerifyReport(
        j=alpha.j, m0=m0, lp_optimum=value, d_value=d_val,
        gap=gap, passed=bool(gap <= tolerance), tolerance=tolerance,
    )
