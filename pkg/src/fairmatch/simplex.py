"""Exact-rational linear programming and max-flow.

A small dense two-phase simplex over fractions.Fraction, with Bland's rule
so pivoting never cycles and the result is deterministic.  Problem sizes in
this package are tiny (tens of variables), so no sparsity or revised-form
tricks are needed; what matters is that feasibility and optimality are
decided exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

ZERO = Fraction(0)
ONE = Fraction(1)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class LpResult:
    status: str
    objective: Fraction | None
    solution: list[Fraction] | None


def solve_lp(
    objective: Sequence[Fraction],
    a_ub: Sequence[Sequence[Fraction]] = (),
    b_ub: Sequence[Fraction] = (),
    a_eq: Sequence[Sequence[Fraction]] = (),
    b_eq: Sequence[Fraction] = (),
) -> LpResult:
    """Maximize objective . x subject to a_ub x <= b_ub, a_eq x = b_eq, x >= 0."""
    n = len(objective)
    rows: list[list[Fraction]] = []
    rhs: list[Fraction] = []
    kinds: list[str] = []
    for row, b in zip(a_ub, b_ub):
        rows.append([Fraction(v) for v in row])
        rhs.append(Fraction(b))
        kinds.append("ub")
    for row, b in zip(a_eq, b_eq):
        rows.append([Fraction(v) for v in row])
        rhs.append(Fraction(b))
        kinds.append("eq")

    m = len(rows)
    # Normalize to nonnegative right-hand sides.
    for i in range(m):
        if rhs[i] < 0:
            rows[i] = [-v for v in rows[i]]
            rhs[i] = -rhs[i]
            if kinds[i] == "ub":
                kinds[i] = "lb"  # flipped <= becomes >=

    # Column layout: structural | slack/surplus | artificial.
    slack_cols: dict[int, int] = {}
    art_cols: dict[int, int] = {}
    col = n
    for i in range(m):
        if kinds[i] in ("ub", "lb"):
            slack_cols[i] = col
            col += 1
    for i in range(m):
        if kinds[i] in ("eq", "lb"):
            art_cols[i] = col
            col += 1
    width = col

    tableau = [[ZERO] * width + [rhs[i]] for i in range(m)]
    basis = [0] * m
    for i in range(m):
        for j in range(n):
            tableau[i][j] = rows[i][j]
        if kinds[i] == "ub":
            tableau[i][slack_cols[i]] = ONE
            basis[i] = slack_cols[i]
        elif kinds[i] == "lb":
            tableau[i][slack_cols[i]] = -ONE
            tableau[i][art_cols[i]] = ONE
            basis[i] = art_cols[i]
        else:
            tableau[i][art_cols[i]] = ONE
            basis[i] = art_cols[i]

    def pivot(row: int, col_: int) -> None:
        piv = tableau[row][col_]
        tableau[row] = [v / piv for v in tableau[row]]
        for r in range(m):
            if r != row and tableau[r][col_] != 0:
                factor = tableau[r][col_]
                tableau[r] = [v - factor * p for v, p in zip(tableau[r], tableau[row])]
        basis[row] = col_

    def run_simplex(costs: list[Fraction], allowed: int) -> str:
        # Maximize costs . x over columns [0, allowed); Bland's rule.
        while True:
            reduced = list(costs[:allowed])
            shift = ZERO
            for i in range(m):
                c = costs[basis[i]]
                if c != 0:
                    for j in range(allowed):
                        reduced[j] -= c * tableau[i][j]
                    shift += c * tableau[i][-1]
            entering = -1
            for j in range(allowed):
                if reduced[j] > 0:
                    entering = j
                    break
            if entering < 0:
                return OPTIMAL
            leaving = -1
            best: Fraction | None = None
            for i in range(m):
                if tableau[i][entering] > 0:
                    ratio = tableau[i][-1] / tableau[i][entering]
                    if best is None or ratio < best or (ratio == best and basis[i] < basis[leaving]):
                        best = ratio
                        leaving = i
            if leaving < 0:
                return UNBOUNDED
            pivot(leaving, entering)

    if art_cols:
        phase1 = [ZERO] * width
        for c in art_cols.values():
            phase1[c] = -ONE
        run_simplex(phase1, width)
        infeas = sum((tableau[i][-1] for i in range(m) if basis[i] in art_cols.values()), ZERO)
        if infeas != 0:
            return LpResult(INFEASIBLE, None, None)
        # Drive leftover artificial variables out of the basis.
        art_set = set(art_cols.values())
        for i in range(m):
            if basis[i] in art_set:
                for j in range(n + len(slack_cols)):
                    if tableau[i][j] != 0:
                        pivot(i, j)
                        break

    phase2 = [Fraction(c) for c in objective] + [ZERO] * (width - n)
    status = run_simplex(phase2, n + len(slack_cols))
    if status == UNBOUNDED:
        return LpResult(UNBOUNDED, None, None)
    x = [ZERO] * n
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = tableau[i][-1]
    value = sum((c * v for c, v in zip(objective, x)), ZERO)
    return LpResult(OPTIMAL, value, x)


def max_flow(
    n_nodes: int,
    source: int,
    sink: int,
    edges: Sequence[tuple[int, int, Fraction]],
) -> Fraction:
    """Edmonds-Karp max flow with exact rational capacities."""
    cap: list[dict[int, Fraction]] = [dict() for _ in range(n_nodes)]
    for u, v, c in edges:
        cap[u][v] = cap[u].get(v, ZERO) + Fraction(c)
        cap[v].setdefault(u, ZERO)
    total = ZERO
    while True:
        parent = [-1] * n_nodes
        parent[source] = source
        queue = [source]
        while queue and parent[sink] < 0:
            nxt = []
            for u in queue:
                for v, c in cap[u].items():
                    if c > 0 and parent[v] < 0:
                        parent[v] = u
                        nxt.append(v)
            queue = nxt
        if parent[sink] < 0:
            return total
        bottleneck = None
        v = sink
        while v != source:
            u = parent[v]
            c = cap[u][v]
            bottleneck = c if bottleneck is None else min(bottleneck, c)
            v = u
        v = sink
        while v != source:
            u = parent[v]
            cap[u][v] -= bottleneck
            cap[v][u] += bottleneck
            v = u
        total += bottleneck
