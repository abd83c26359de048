"""Scripted designers that produce synthetic demonstration trajectories.

The heuristics are deliberately simple.  They are not models of how people
design trusses; they only give the learning pipeline a state-dependent
behavior to imitate.

Every rollout first draws a plan: a truss template (king post, two-panel
Warren, three-panel Pratt) stretched over the support/load span at one of a
few heights.  The triangulator then repeats three rules: build the shortest
planned member whose end nodes exist, otherwise place the next planned node
(center first, bottom row before top, Gaussian position noise), otherwise
stop.  The reinforcer thickens the most stressed member until the factor of
safety reaches its target.  ``mixed`` triangulates and then reinforces.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ProblemConfig
from .datasets import TrajectoryRecord, record_for, records_to_steps, write_trajectories
from .truss import (
    DesignAction,
    TrussState,
    add_member,
    add_node,
    apply_action,
    evaluate_structure,
    infeasibility_reason,
    initial_state,
    member_action,
    member_stresses,
)

POLICY_KINDS = ("triangulator", "reinforcer", "mixed")

# top-row and extra bottom-row positions as fractions of the span
TEMPLATES: dict[str, tuple[tuple[float, ...], tuple[float, ...]]] = {
    "king": ((0.5,), ()),
    "warren2": ((0.25, 0.75), ()),
    "pratt3": ((0.25, 0.5, 0.75), (0.25, 0.75)),
}
HEIGHTS = (0.4, 0.6, 0.8)
TIE_TOL = 1e-9


class StuckPolicy(RuntimeError):
    pass


@dataclass(frozen=True)
class HeuristicPolicy:
    kind: str = "mixed"
    noise: float = 0.02
    seed: int = 0
    target_fos: float = 1.0
    max_steps: int = 40
    templates: tuple[str, ...] = tuple(TEMPLATES)
    heights: tuple[float, ...] = HEIGHTS

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"policy kind must be one of {POLICY_KINDS}")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        unknown = set(self.templates) - set(TEMPLATES)
        if unknown or not self.templates:
            raise ValueError(f"unknown templates {sorted(unknown)}")

    @property
    def builds(self) -> bool:
        return self.kind in ("triangulator", "mixed")

    @property
    def reinforces(self) -> bool:
        return self.kind in ("reinforcer", "mixed")


@dataclass
class Plan:
    """Noise-free target layout.  ``points[i]`` is a planned node; the first
    entries are the existing nodes of the initial state."""

    template: str
    height: float
    points: list[tuple[float, float]]
    rows: list[int]  # 0 bottom, 1 top
    fractions: list[float]
    members: list[tuple[int, int]]
    placed: dict[int, tuple[float, float]] = field(default_factory=dict)


def _interp_y(bottom: list[tuple[float, float]], x: float) -> float:
    xs = [p[0] for p in bottom]
    ys = [p[1] for p in bottom]
    return float(np.interp(x, xs, ys))


def _zipper(bottom: list[int], top: list[int], u: list[float]) -> list[tuple[int, int]]:
    """Chords plus a strip triangulation between two rows ordered by span fraction."""
    edges = list(zip(bottom, bottom[1:])) + list(zip(top, top[1:]))
    i = j = 0
    edges.append((bottom[0], top[0]))
    while i < len(bottom) - 1 or j < len(top) - 1:
        if j == len(top) - 1 or (i < len(bottom) - 1 and u[bottom[i + 1]] <= u[top[j + 1]]):
            i += 1
        else:
            j += 1
        edges.append((bottom[i], top[j]))
    return edges


def make_plan(state: TrussState, template: str, height: float) -> Plan:
    existing = sorted(state.nodes, key=lambda n: (n.x, n.y))
    if len(existing) < 2:
        raise StuckPolicy("need at least two initial nodes to span")
    x0, x1 = existing[0].x, existing[-1].x
    base = [n.xy for n in existing]
    top_u, extra_u = TEMPLATES[template]
    points = list(base)
    rows = [0] * len(base)
    fractions = [(p[0] - x0) / (x1 - x0) for p in base]
    for f in extra_u:
        x = x0 + f * (x1 - x0)
        if all(abs(p[0] - x) > 1e-6 for p in base):
            points.append((x, _interp_y(base, x)))
            rows.append(0)
            fractions.append(f)
    top_y = max(p[1] for p in base) + height
    for f in top_u:
        points.append((x0 + f * (x1 - x0), top_y))
        rows.append(1)
        fractions.append(f)
    bottom = sorted((i for i in range(len(points)) if rows[i] == 0), key=lambda i: fractions[i])
    top = sorted((i for i in range(len(points)) if rows[i] == 1), key=lambda i: fractions[i])
    plan = Plan(template, height, points, rows, fractions, _zipper(bottom, top, fractions))
    for i, n in enumerate(existing):
        plan.placed[i] = n.xy
    return plan


def _pending_members(state: TrussState, plan: Plan) -> list[tuple[float, tuple[float, float], DesignAction]]:
    out = []
    for a, b in plan.members:
        if a in plan.placed and b in plan.placed:
            act = add_member(plan.placed[a], plan.placed[b])
            if infeasibility_reason(state, act) is None:
                (xa, ya), (xb, yb) = plan.points[a], plan.points[b]
                mid_x = (xa + xb) / 2
                out.append((math.hypot(xb - xa, yb - ya), (mid_x, min(ya, yb)), act))
    return out


def _member_choice(state: TrussState, plan: Plan) -> DesignAction | None:
    """Shortest buildable planned member; equal lengths go left to right, low to high."""
    pending = _pending_members(state, plan)
    if not pending:
        return None
    shortest = min(p[0] for p in pending)
    return min((p for p in pending if p[0] - shortest <= TIE_TOL), key=lambda p: p[1])[2]


def _next_nodes(plan: Plan) -> list[int]:
    """Unplaced nodes of highest priority: closest to mid-span, bottom row first, then left."""
    todo = [i for i in range(len(plan.points)) if i not in plan.placed]
    if not todo:
        return []
    key = {i: (round(abs(plan.fractions[i] - 0.5), 9), plan.rows[i]) for i in todo}
    best = min(key.values())
    return sorted((i for i in todo if key[i] == best), key=lambda i: plan.points[i][0])


def _reinforce(state: TrussState, policy: HeuristicPolicy) -> DesignAction | None:
    result = evaluate_structure(state)
    if not result.solvable:
        raise StuckPolicy("structure is not solvable, nothing to reinforce")
    if result.fos >= policy.target_fos:
        return None
    stress = member_stresses(state, result)
    top = state.problem.material.max_level
    candidates = [i for i, m in enumerate(state.members) if m.size_level < top]
    if not candidates:
        return None
    i = max(candidates, key=lambda i: (stress[i], -i))
    return member_action(state, state.members[i])


def intents(state: TrussState, plan: Plan, policy: HeuristicPolicy) -> list[tuple[DesignAction, float]]:
    """Distribution over the policy's next noise-free action given its plan.

    Empty when the policy would stop.
    """
    if policy.builds:
        member = _member_choice(state, plan)
        if member is not None:
            return [(member, 1.0)]
        nxt = _next_nodes(plan)
        if nxt:
            return [(add_node(*plan.points[i]), 1.0 / len(nxt)) for i in nxt]
    if policy.reinforces:
        act = _reinforce(state, policy)
        return [] if act is None else [(act, 1.0)]
    return []


def _place(state: TrussState, plan: Plan, i: int, policy: HeuristicPolicy, rng) -> DesignAction:
    x, y = plan.points[i]
    for _ in range(50):
        dx, dy = policy.noise * rng.standard_normal(2) if policy.noise > 0 else (0.0, 0.0)
        act = add_node(float(np.clip(x + dx, -1, 1)), float(np.clip(y + dy, -1, 1)))
        if infeasibility_reason(state, act) is None:
            plan.placed[i] = act.points[0]
            return act
    raise StuckPolicy(f"could not place planned node near ({x:.3f}, {y:.3f})")


def next_action(state: TrussState, plan: Plan, policy: HeuristicPolicy, rng) -> DesignAction | None:
    """The policy's next action, or None when it is done."""
    if policy.builds:
        member = _member_choice(state, plan)
        if member is not None:
            return member
        nxt = _next_nodes(plan)
        if nxt:
            return _place(state, plan, nxt[int(rng.integers(len(nxt)))], policy, rng)
    if policy.reinforces:
        return _reinforce(state, policy)
    return None


def generate_trajectory(
    problem: ProblemConfig,
    policy: HeuristicPolicy,
    initial: TrussState | None = None,
    rng: np.random.Generator | None = None,
    trajectory_id: str = "t0",
    render: bool = True,
) -> list[TrajectoryRecord]:
    """Roll the policy out from ``initial`` (the problem's initial state by default)."""
    rng = np.random.default_rng(policy.seed) if rng is None else rng
    state = initial_state(problem) if initial is None else initial
    template = policy.templates[int(rng.integers(len(policy.templates)))]
    height = policy.heights[int(rng.integers(len(policy.heights)))]
    plan = make_plan(state, template, height) if policy.builds else None
    records = []
    for step in range(policy.max_steps):
        act = next_action(state, plan, policy, rng)
        if act is None:
            break
        records.append(record_for(trajectory_id, step, state, act, render))
        state = apply_action(state, act)
    if not records:
        raise StuckPolicy(f"{policy.kind} policy found no move from the initial state")
    return records


def _as_policy(p) -> HeuristicPolicy:
    return p if isinstance(p, HeuristicPolicy) else HeuristicPolicy(kind=str(p))


def generate_corpus(
    n_trajectories: int,
    policies: Sequence[HeuristicPolicy | str] = ("mixed",),
    out_path: str | Path | None = None,
    seed: int = 0,
    problem: ProblemConfig | None = None,
    render: bool = False,
) -> list[TrajectoryRecord]:
    """Trajectory ``i`` uses ``policies[i % len(policies)]`` and its own rng stream
    seeded by ``(seed, i)``.  With ``out_path`` the trajectory file and a
    ``<out_path>.manifest.json`` are written."""
    problem = problem or ProblemConfig()
    pols = [_as_policy(p) for p in policies]
    width = max(4, len(str(max(n_trajectories - 1, 0))))
    records: list[TrajectoryRecord] = []
    for i in range(n_trajectories):
        rng = np.random.default_rng([seed, i])
        records.extend(
            generate_trajectory(problem, pols[i % len(pols)], rng=rng, trajectory_id=f"t{i:0{width}d}", render=render)
        )
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_trajectories(out_path, problem, records_to_steps(records))
        manifest = {
            "seed": seed,
            "n_trajectories": n_trajectories,
            "policies": [asdict(p) for p in pols],
            "n_records": len(records),
            "label_counts": dict(sorted(Counter(r.label for r in records).items())),
        }
        manifest_path(out_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return records


def manifest_path(out_path: str | Path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.name + ".manifest.json")
