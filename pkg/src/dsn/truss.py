"""Sequential truss-design environment.

States are immutable; every transition returns a new :class:`TrussState`.
Coordinates live in the normalized design space ``[-1, 1]^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .config import ProblemConfig

COORD_TOL = 1e-6
SINGULAR_COND = 1e10


class Label(str, Enum):
    ADD_NODE = "AddNode"
    ADD_MEMBER = "AddMember"
    INCREASE_THICKNESS = "IncreaseThickness"

    @property
    def index(self) -> int:
        return _LABEL_ORDER[self]


LABELS = (Label.ADD_NODE, Label.ADD_MEMBER, Label.INCREASE_THICKNESS)
_LABEL_ORDER = {lab: i for i, lab in enumerate(LABELS)}


class InfeasibleAction(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Node:
    id: int
    x: float
    y: float

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True, order=True)
class Member:
    a: int
    b: int
    size_level: int = 1


def _canonical_points(p, q) -> tuple[float, float, float, float]:
    p = (float(p[0]), float(p[1]))
    q = (float(q[0]), float(q[1]))
    if q < p:
        p, q = q, p
    return (*p, *q)


@dataclass(frozen=True)
class DesignAction:
    """Discrete label plus four spatial parameters.

    Member-type actions store their endpoints in lexicographic (x, y) order so
    that equal actions compare equal regardless of how they were built.
    """

    label: Label
    params: tuple[float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))
        params = tuple(float(v) for v in self.params)
        if len(params) == 2:
            params = params * 2
        if len(params) != 4:
            raise ValueError("params must have 2 or 4 entries")
        if self.label is not Label.ADD_NODE:
            params = _canonical_points(params[:2], params[2:])
        object.__setattr__(self, "params", params)

    @property
    def points(self) -> tuple[tuple[float, float], tuple[float, float]]:
        x1, y1, x2, y2 = self.params
        return (x1, y1), (x2, y2)

    def sort_key(self):
        return (self.label.index, self.params)

    def __str__(self):
        if self.label is Label.ADD_NODE:
            return f"AddNode({self.params[0]:.4f}, {self.params[1]:.4f})"
        x1, y1, x2, y2 = self.params
        return f"{self.label.value}(({x1:.4f}, {y1:.4f}), ({x2:.4f}, {y2:.4f}))"


def add_node(x: float, y: float) -> DesignAction:
    return DesignAction(Label.ADD_NODE, (x, y, x, y))


def add_member(p, q) -> DesignAction:
    return DesignAction(Label.ADD_MEMBER, (*p, *q))


def increase_thickness(p, q) -> DesignAction:
    return DesignAction(Label.INCREASE_THICKNESS, (*p, *q))


def pad_params(params: Sequence[float]) -> tuple[float, float, float, float]:
    """Pad a single control point to (x, y, x, y); 4-vectors pass through."""
    params = tuple(float(v) for v in params)
    return params * 2 if len(params) == 2 else params


@dataclass(frozen=True)
class TrussState:
    nodes: tuple[Node, ...]
    members: tuple[Member, ...]
    problem: ProblemConfig = field(compare=True)

    def node(self, node_id: int) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def node_at(self, x: float, y: float, tol: float = COORD_TOL) -> Node | None:
        for n in self.nodes:
            if abs(n.x - x) <= tol and abs(n.y - y) <= tol:
                return n
        return None

    def member_between(self, a: int, b: int) -> Member | None:
        a, b = min(a, b), max(a, b)
        for m in self.members:
            if m.a == a and m.b == b:
                return m
        return None

    def fixed_node_ids(self) -> set[int]:
        pts = [(s.x, s.y) for s in self.problem.supports] + [(ld.x, ld.y) for ld in self.problem.loads]
        return {n.id for n in (self.node_at(x, y) for x, y in pts) if n is not None}

    def coords(self) -> np.ndarray:
        return np.array([n.xy for n in self.nodes], dtype=float).reshape(-1, 2)


def initial_state(problem: ProblemConfig) -> TrussState:
    """Support and load points become the first nodes (coincident points merge)."""
    nodes: list[Node] = []
    for x, y in [(s.x, s.y) for s in problem.supports] + [(ld.x, ld.y) for ld in problem.loads]:
        if not any(abs(n.x - x) <= COORD_TOL and abs(n.y - y) <= COORD_TOL for n in nodes):
            nodes.append(Node(len(nodes), float(x), float(y)))
    return TrussState(tuple(nodes), (), problem)


def empty_state(problem: ProblemConfig) -> TrussState:
    """A state with no nodes at all; useful for probing degenerate cases."""
    return TrussState((), (), problem)


def _endpoints(state: TrussState, action: DesignAction) -> tuple[Node | None, Node | None]:
    (x1, y1), (x2, y2) = action.points
    return state.node_at(x1, y1), state.node_at(x2, y2)


def infeasibility_reason(state: TrussState, action: DesignAction) -> str | None:
    """Why ``action`` cannot be applied to ``state``; ``None`` when it can."""
    if any(not math.isfinite(v) for v in action.params):
        return "non-finite parameters"
    if action.label is Label.ADD_NODE:
        x, y = action.params[:2]
        if action.params[2:] != (x, y):
            return "AddNode parameters must repeat the point as (x, y, x, y)"
        if not (-1.0 <= x <= 1.0 and -1.0 <= y <= 1.0):
            return "node outside the design space"
        spacing = state.problem.min_node_spacing
        for n in state.nodes:
            if math.hypot(n.x - x, n.y - y) < spacing:
                return f"node closer than {spacing} to node {n.id}"
        return None
    a, b = _endpoints(state, action)
    if a is None or b is None:
        return "endpoint does not match an existing node"
    if a.id == b.id:
        return "both endpoints are the same node"
    existing = state.member_between(a.id, b.id)
    if action.label is Label.ADD_MEMBER:
        return "member already exists" if existing is not None else None
    if existing is None:
        return "no member between these nodes"
    if existing.size_level >= state.problem.material.max_level:
        return "member already at the top of the area ladder"
    return None


def is_feasible(state: TrussState, action: DesignAction) -> bool:
    return infeasibility_reason(state, action) is None


def apply_action(state: TrussState, action: DesignAction) -> TrussState:
    reason = infeasibility_reason(state, action)
    if reason is not None:
        raise InfeasibleAction(f"{action}: {reason}")
    if action.label is Label.ADD_NODE:
        new_id = max((n.id for n in state.nodes), default=-1) + 1
        x, y = action.params[:2]
        return TrussState(state.nodes + (Node(new_id, x, y),), state.members, state.problem)
    a, b = _endpoints(state, action)
    lo, hi = min(a.id, b.id), max(a.id, b.id)
    if action.label is Label.ADD_MEMBER:
        members = tuple(sorted(state.members + (Member(lo, hi, 1),)))
    else:
        members = tuple(
            Member(m.a, m.b, m.size_level + 1) if (m.a, m.b) == (lo, hi) else m for m in state.members
        )
    return TrussState(state.nodes, members, state.problem)


def apply_all(state: TrussState, actions: Iterable[DesignAction]) -> TrussState:
    for act in actions:
        state = apply_action(state, act)
    return state


def member_action(state: TrussState, member: Member, label: Label = Label.INCREASE_THICKNESS) -> DesignAction:
    return DesignAction(label, (*state.node(member.a).xy, *state.node(member.b).xy))


def enumerate_discrete_actions(state: TrussState) -> list[DesignAction]:
    """Every feasible AddMember and IncreaseThickness action in ``state``."""
    top = state.problem.material.max_level
    built = {(m.a, m.b) for m in state.members}
    actions = [
        add_member(p.xy, q.xy)
        for p, q in combinations(state.nodes, 2)
        if (min(p.id, q.id), max(p.id, q.id)) not in built
    ]
    actions.extend(member_action(state, m) for m in state.members if m.size_level < top)
    return actions


@dataclass(frozen=True)
class StructuralResult:
    fos: float
    mass: float
    solvable: bool
    member_forces: tuple[float, ...] = ()  # aligned with state.members; tension positive


def truss_mass(state: TrussState) -> float:
    mat = state.problem.material
    total = 0.0
    for m in state.members:
        a, b = state.node(m.a), state.node(m.b)
        total += math.hypot(b.x - a.x, b.y - a.y) * mat.area(m.size_level) * mat.density
    return total


def _loaded_components(state: TrussState) -> tuple[set[int], set[int]]:
    """Node ids and member indices of the member-connected components that carry a load."""
    parent = {n.id: n.id for n in state.nodes}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for m in state.members:
        parent[find(m.a)] = find(m.b)
    load_nodes = [state.node_at(ld.x, ld.y) for ld in state.problem.loads]
    load_roots = {find(n.id) for n in load_nodes if n is not None}
    nodes = {n.id for n in state.nodes if find(n.id) in load_roots}
    members = {i for i, m in enumerate(state.members) if find(m.a) in load_roots}
    return nodes, members


def evaluate_structure(state: TrussState) -> StructuralResult:
    """Direct-stiffness solve of the pin-jointed truss under the problem loads.

    Only members in components that carry a load take part; a singular
    reduced stiffness matrix (mechanism, missing load path) gives
    ``solvable=False`` and ``fos=0``.
    """
    problem = state.problem
    mat = problem.material
    mass = truss_mass(state)
    forces = [0.0] * len(state.members)
    unsolvable = StructuralResult(0.0, mass, False, tuple(forces))

    load_nodes = [state.node_at(ld.x, ld.y) for ld in problem.loads]
    if any(n is None for n in load_nodes):
        return unsolvable
    _, active_members = _loaded_components(state)
    if not active_members:
        return unsolvable
    loaded_ids = {n.id for n in load_nodes}
    touched = {state.members[i].a for i in active_members} | {state.members[i].b for i in active_members}
    if not loaded_ids <= touched:
        return unsolvable

    ids = sorted(touched)
    dof = {nid: 2 * k for k, nid in enumerate(ids)}
    ndof = 2 * len(ids)
    K = np.zeros((ndof, ndof))
    F = np.zeros(ndof)
    geom = {}
    for i in sorted(active_members):
        m = state.members[i]
        a, b = state.node(m.a), state.node(m.b)
        dx, dy = b.x - a.x, b.y - a.y
        L = math.hypot(dx, dy)
        c, s = dx / L, dy / L
        A = mat.area(m.size_level)
        k = mat.elastic_modulus * A / L
        t = np.array([-c, -s, c, s])
        idx = [dof[m.a], dof[m.a] + 1, dof[m.b], dof[m.b] + 1]
        K[np.ix_(idx, idx)] += k * np.outer(t, t)
        geom[i] = (idx, t, k, A)
    for ld in problem.loads:
        nid = state.node_at(ld.x, ld.y).id
        F[dof[nid]] += ld.fx
        F[dof[nid] + 1] += ld.fy

    fixed = set()
    for sup in problem.supports:
        node = state.node_at(sup.x, sup.y)
        if node is not None and node.id in dof:
            rx, ry = sup.restrains()
            if rx:
                fixed.add(dof[node.id])
            if ry:
                fixed.add(dof[node.id] + 1)
    free = [d for d in range(ndof) if d not in fixed]
    u = np.zeros(ndof)
    if free:
        Kff = K[np.ix_(free, free)]
        if not np.all(np.isfinite(Kff)) or np.linalg.cond(Kff) > SINGULAR_COND:
            return unsolvable
        u[free] = np.linalg.solve(Kff, F[free])

    max_stress = 0.0
    for i, (idx, t, k, A) in geom.items():
        forces[i] = float(k * (t @ u[idx]))
        max_stress = max(max_stress, abs(forces[i]) / A)
    fos = mat.yield_stress / max_stress if max_stress > 0 else math.inf
    return StructuralResult(fos, mass, True, tuple(forces))


def member_stresses(state: TrussState, result: StructuralResult) -> np.ndarray:
    mat = state.problem.material
    areas = np.array([mat.area(m.size_level) for m in state.members], dtype=float)
    return np.abs(np.asarray(result.member_forces, dtype=float)) / areas if len(areas) else np.zeros(0)
