"""Trajectory files, replay/validation, and the D1/D2 training sets.

Trajectory file format (UTF-8, one JSON object per line)::

    {"format": "dsn-trajectories", "version": 1, "problem": {...}}
    {"trajectory_id": "t0000", "step_index": 0, "label": "AddMember",
     "x1": -0.8, "y1": -0.8, "x2": 0.0, "y2": -0.8}
    ...

The first line is the header and embeds the problem definition.  Step lines
for one trajectory must have increasing ``step_index``.  Floats are written
with shortest round-trip repr, so write -> read is exact.  Besides the
three generative labels the reader accepts the subtractive labels
``RemoveNode``, ``RemoveMember`` and ``DecreaseThickness`` so that external
exports replay correctly; :func:`filter_generative` drops them afterwards.
"""

from __future__ import annotations

import csv
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .config import ProblemConfig, SamplerConfig
from .render import render_uint8
from .sampler import EmptyActionSet, log_densities, region_around_action, sample_feasible
from .truss import (
    LABELS,
    DesignAction,
    Label,
    Member,
    Node,
    TrussState,
    apply_action,
    infeasibility_reason,
    initial_state,
)

FORMAT_NAME = "dsn-trajectories"
FORMAT_VERSION = 1
GENERATIVE_LABELS = frozenset(lab.value for lab in LABELS)
SUBTRACTIVE_LABELS = frozenset({"RemoveNode", "RemoveMember", "DecreaseThickness"})
PARAM_KEYS = ("x1", "y1", "x2", "y2")


class ParseError(ValueError):
    pass


class InfeasibleTrajectory(ValueError):
    def __init__(self, trajectory_id: str, step_index: int, reason: str):
        super().__init__(f"trajectory {trajectory_id} step {step_index}: {reason}")
        self.trajectory_id = trajectory_id
        self.step_index = step_index
        self.reason = reason


@dataclass(frozen=True)
class Step:
    trajectory_id: str
    step_index: int
    label: str
    params: tuple[float, float, float, float]

    def to_json(self) -> str:
        d: dict[str, Any] = {"trajectory_id": self.trajectory_id, "step_index": self.step_index, "label": self.label}
        d.update(zip(PARAM_KEYS, self.params))
        return json.dumps(d)


@dataclass(frozen=True)
class TrajectoryRecord:
    """One demonstration step: the state before the action and the action taken."""

    trajectory_id: str
    step_index: int
    label: str
    params: tuple[float, float, float, float]
    state: TrussState
    image: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def is_generative(self) -> bool:
        return self.label in GENERATIVE_LABELS

    @property
    def action(self) -> DesignAction:
        return DesignAction(Label(self.label), self.params)

    def with_image(self) -> "TrajectoryRecord":
        if self.image is not None:
            return self
        return TrajectoryRecord(
            self.trajectory_id, self.step_index, self.label, self.params, self.state, render_uint8(self.state)
        )


def record_for(trajectory_id: str, step_index: int, state: TrussState, action: DesignAction, render=True):
    image = render_uint8(state) if render else None
    return TrajectoryRecord(trajectory_id, step_index, action.label.value, action.params, state, image)


# ---------------------------------------------------------------------------
# file IO


def write_trajectories(path: str | Path, problem: ProblemConfig, steps: Iterable[Step]) -> None:
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "problem": problem.to_dict()}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for step in steps:
            fh.write(step.to_json() + "\n")


def records_to_steps(records: Iterable[TrajectoryRecord]) -> list[Step]:
    return [Step(r.trajectory_id, r.step_index, r.label, r.params) for r in records]


def _parse_step(obj: Mapping[str, Any], lineno: int) -> Step:
    try:
        label = str(obj["label"])
        params = tuple(float(obj[k]) for k in PARAM_KEYS)
        step = Step(str(obj["trajectory_id"]), int(obj["step_index"]), label, params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"line {lineno}: malformed step ({exc})") from exc
    if label not in GENERATIVE_LABELS | SUBTRACTIVE_LABELS:
        raise ParseError(f"line {lineno}: unknown action label {label!r}")
    return step


def read_trajectories(path: str | Path) -> tuple[ProblemConfig, list[Step]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise ParseError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: bad header ({exc})") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise ParseError(f"{path}: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported version {header.get('version')}")
    problem = ProblemConfig.from_dict(header.get("problem", {}))
    steps = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
        steps.append(_parse_step(obj, lineno))
    return problem, steps


# ---------------------------------------------------------------------------
# replay


def _apply_subtractive(state: TrussState, label: str, params) -> TrussState:
    (x1, y1, x2, y2) = params
    if label == "RemoveNode":
        node = state.node_at(x1, y1)
        if node is None:
            raise ValueError("no node at the given point")
        if node.id in state.fixed_node_ids():
            raise ValueError("support and load nodes cannot be removed")
        nodes = tuple(n for n in state.nodes if n.id != node.id)
        members = tuple(m for m in state.members if node.id not in (m.a, m.b))
        return TrussState(nodes, members, state.problem)
    a, b = state.node_at(x1, y1), state.node_at(x2, y2)
    member = state.member_between(a.id, b.id) if a is not None and b is not None else None
    if member is None:
        raise ValueError("no member between the given points")
    if label == "RemoveMember":
        return TrussState(state.nodes, tuple(m for m in state.members if m != member), state.problem)
    if member.size_level <= 1:
        raise ValueError("member already at the bottom of the area ladder")
    members = tuple(Member(m.a, m.b, m.size_level - 1) if m == member else m for m in state.members)
    return TrussState(state.nodes, members, state.problem)


def group_steps(steps: Sequence[Step]) -> "OrderedDict[str, list[Step]]":
    groups: OrderedDict[str, list[Step]] = OrderedDict()
    for s in steps:
        groups.setdefault(s.trajectory_id, []).append(s)
    for tid, group in groups.items():
        idx = [s.step_index for s in group]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ParseError(f"trajectory {tid}: step indices must be strictly increasing")
    return groups


def replay(problem: ProblemConfig, steps: Sequence[Step], render: bool = True) -> list[TrajectoryRecord]:
    """Replay every trajectory from the problem's initial state, validating each step."""
    records = []
    for tid, group in group_steps(steps).items():
        state = initial_state(problem)
        for s in group:
            if s.label in GENERATIVE_LABELS:
                action = DesignAction(Label(s.label), s.params)
                reason = infeasibility_reason(state, action)
                if reason is not None:
                    raise InfeasibleTrajectory(tid, s.step_index, reason)
                records.append(record_for(tid, s.step_index, state, action, render))
                state = apply_action(state, action)
            else:
                image = render_uint8(state) if render else None
                records.append(TrajectoryRecord(tid, s.step_index, s.label, s.params, state, image))
                try:
                    state = _apply_subtractive(state, s.label, s.params)
                except ValueError as exc:
                    raise InfeasibleTrajectory(tid, s.step_index, str(exc)) from exc
    return records


def ingest(path: str | Path, render: bool = True) -> list[TrajectoryRecord]:
    problem, steps = read_trajectories(path)
    return replay(problem, steps, render)


def write_records(path: str | Path, problem: ProblemConfig, records: Iterable[TrajectoryRecord]) -> None:
    write_trajectories(path, problem, records_to_steps(records))


# ---------------------------------------------------------------------------
# single-state files

STATE_FORMAT = "dsn-state"


def state_to_dict(state: TrussState) -> dict[str, Any]:
    return {
        "format": STATE_FORMAT,
        "problem": state.problem.to_dict(),
        "nodes": [[n.id, n.x, n.y] for n in state.nodes],
        "members": [[m.a, m.b, m.size_level] for m in state.members],
    }


def state_from_dict(d: Mapping[str, Any]) -> TrussState:
    problem = ProblemConfig.from_dict(d.get("problem", {}))
    nodes = tuple(Node(int(i), float(x), float(y)) for i, x, y in d.get("nodes", []))
    ids = {n.id for n in nodes}
    members = []
    for a, b, level in d.get("members", []):
        a, b = sorted((int(a), int(b)))
        if a not in ids or b not in ids or a == b:
            raise ParseError(f"member ({a}, {b}) does not join two existing nodes")
        members.append(Member(a, b, int(level)))
    return TrussState(nodes, tuple(sorted(members)), problem)


def read_state(path: str | Path, trajectory: str | None = None, step: int | None = None) -> TrussState:
    """Load a state from a state file or from a trajectory file.

    For a trajectory file the state is the one just before ``step`` of
    ``trajectory`` (first trajectory by default), or the final state when
    ``step`` is None.
    """
    try:
        first = json.loads(Path(path).read_text(encoding="utf-8").splitlines()[0])
    except (OSError, IndexError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read state from {path}: {exc}") from exc
    if isinstance(first, dict) and first.get("format") == STATE_FORMAT:
        return state_from_dict(first)
    problem, steps = read_trajectories(path)
    groups = group_steps(steps)
    if not groups:
        return initial_state(problem)
    tid = trajectory if trajectory is not None else next(iter(groups))
    if tid not in groups:
        raise ParseError(f"no trajectory {tid!r} in {path}")
    records = replay(problem, groups[tid], render=False)
    if step is None:
        last = records[-1]
        if last.is_generative:
            return apply_action(last.state, last.action)
        return _apply_subtractive(last.state, last.label, last.params)
    for r in records:
        if r.step_index == step:
            return r.state
    raise ParseError(f"trajectory {tid!r} has no step {step}")


def write_state(path: str | Path, state: TrussState) -> None:
    Path(path).write_text(json.dumps(state_to_dict(state)) + "\n", encoding="utf-8")


EXTERNAL_LABELS = {
    "addnode": "AddNode",
    "add_node": "AddNode",
    "add node": "AddNode",
    "addmember": "AddMember",
    "add_member": "AddMember",
    "add member": "AddMember",
    "increasethickness": "IncreaseThickness",
    "increase_thickness": "IncreaseThickness",
    "increase thickness": "IncreaseThickness",
    "thicken": "IncreaseThickness",
    "removenode": "RemoveNode",
    "remove_node": "RemoveNode",
    "remove node": "RemoveNode",
    "delete node": "RemoveNode",
    "removemember": "RemoveMember",
    "remove_member": "RemoveMember",
    "remove member": "RemoveMember",
    "delete member": "RemoveMember",
    "decreasethickness": "DecreaseThickness",
    "decrease_thickness": "DecreaseThickness",
    "decrease thickness": "DecreaseThickness",
}

_COLUMN_ALIASES = {
    "trajectory_id": ("trajectory_id", "trajectory", "team", "session", "design_id"),
    "step_index": ("step_index", "step", "iteration", "t"),
    "label": ("label", "action", "action_label", "type"),
    "x1": ("x1", "x"),
    "y1": ("y1", "y"),
    "x2": ("x2",),
    "y2": ("y2",),
}


def import_external(
    csv_path: str | Path,
    problem: ProblemConfig,
    out_path: str | Path | None = None,
    bounds: tuple[float, float, float, float] | None = None,
) -> list[Step]:
    """Best-effort adapter from a CSV export of a human design study.

    Column names are matched case-insensitively against common aliases; a
    missing second point pads the first.  ``bounds=(xmin, xmax, ymin, ymax)``
    rescales raw coordinates into [-1, 1].  Unknown labels raise ParseError.
    """
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ParseError(f"{csv_path}: no rows")
    lower = {k.lower().strip(): k for k in rows[0]}
    cols = {}
    for key, aliases in _COLUMN_ALIASES.items():
        cols[key] = next((lower[a] for a in aliases if a in lower), None)
    for key in ("trajectory_id", "step_index", "label", "x1", "y1"):
        if cols[key] is None:
            raise ParseError(f"{csv_path}: no column for {key}")

    def scale(v: float, lo: float, hi: float) -> float:
        return 2.0 * (v - lo) / (hi - lo) - 1.0

    steps = []
    for lineno, row in enumerate(rows, start=2):
        raw = row[cols["label"]].strip()
        label = EXTERNAL_LABELS.get(raw.lower(), raw)
        if label not in GENERATIVE_LABELS | SUBTRACTIVE_LABELS:
            raise ParseError(f"{csv_path}:{lineno}: unknown action label {raw!r}")
        x1, y1 = float(row[cols["x1"]]), float(row[cols["y1"]])
        x2 = float(row[cols["x2"]]) if cols["x2"] and row[cols["x2"]] not in ("", None) else x1
        y2 = float(row[cols["y2"]]) if cols["y2"] and row[cols["y2"]] not in ("", None) else y1
        if bounds is not None:
            xmin, xmax, ymin, ymax = bounds
            x1, x2 = scale(x1, xmin, xmax), scale(x2, xmin, xmax)
            y1, y2 = scale(y1, ymin, ymax), scale(y2, ymin, ymax)
        params = (x1, y1, x2, y2)
        if label in GENERATIVE_LABELS:
            params = DesignAction(Label(label), params).params
        steps.append(Step(str(row[cols["trajectory_id"]]), int(float(row[cols["step_index"]])), label, params))
    steps.sort(key=lambda s: (s.trajectory_id, s.step_index))
    if out_path is not None:
        write_trajectories(out_path, problem, steps)
    return steps


# ---------------------------------------------------------------------------
# derived datasets


def filter_generative(records: Iterable[TrajectoryRecord]) -> list[TrajectoryRecord]:
    return [r for r in records if r.is_generative]


@dataclass(frozen=True)
class D1Sample:
    image: np.ndarray = field(compare=False, repr=False)
    target: tuple[float, float, float, float]


@dataclass(frozen=True)
class D2Sample:
    image: np.ndarray = field(compare=False, repr=False)
    actions: tuple[DesignAction, ...]
    target_index: int

    @property
    def truth(self) -> DesignAction:
        return self.actions[self.target_index]


def build_d1(records: Sequence[TrajectoryRecord]) -> list[D1Sample]:
    return [D1Sample(r.with_image().image, r.action.params) for r in records]


def _insert_truth(actions: list[DesignAction], truth: DesignAction, cfg: SamplerConfig, rng) -> list[DesignAction]:
    if truth in actions:
        return actions
    if len(actions) < cfg.A_max:
        actions.insert(int(rng.integers(len(actions) + 1)), truth)
        return actions
    region = region_around_action(truth)
    logd = log_densities(np.array([a.params for a in actions]), region, cfg.sigma)
    # lowest density goes; among exact ties, the one ranked last
    worst = max(range(len(actions)), key=lambda i: (-logd[i], actions[i].sort_key()))
    actions[worst] = truth
    return actions


def build_d2(records: Sequence[TrajectoryRecord], cfg: SamplerConfig, rng=None) -> list[D2Sample]:
    """Feasible sets sampled around each ground-truth action, which is always included."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    samples = []
    for r in records:
        truth = r.action
        try:
            actions = list(sample_feasible(r.state, region_around_action(truth), cfg, rng))
        except EmptyActionSet:
            actions = []
        actions = _insert_truth(actions, truth, cfg, rng)
        samples.append(D2Sample(r.with_image().image, tuple(actions), actions.index(truth)))
    return samples


@dataclass(frozen=True)
class Fold:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]


def split_kfold(
    records: Sequence[TrajectoryRecord],
    k: int = 10,
    val_fraction: float = 0.10,
    rng=None,
    by_trajectory: bool = False,
) -> list[Fold]:
    """Index folds: each record is tested once; a fraction of every training
    portion is held out for validation."""
    if rng is None:
        rng = np.random.default_rng(0)
    n = len(records)
    if by_trajectory:
        ids = list(OrderedDict.fromkeys(r.trajectory_id for r in records))
        if len(ids) < k:
            raise ValueError(f"need at least {k} trajectories, got {len(ids)}")
        members: dict[str, list[int]] = {}
        for i, r in enumerate(records):
            members.setdefault(r.trajectory_id, []).append(i)
        groups = [members[ids[j]] for j in rng.permutation(len(ids))]
        chunks = [sorted(i for j in part for i in groups[j]) for part in np.array_split(np.arange(len(groups)), k)]
    else:
        if n < k:
            raise ValueError(f"need at least {k} records, got {n}")
        chunks = [sorted(part.tolist()) for part in np.array_split(rng.permutation(n), k)]
    folds = []
    for f, test in enumerate(chunks):
        rest = np.array([i for g, chunk in enumerate(chunks) if g != f for i in chunk], dtype=int)
        rest = rest[rng.permutation(len(rest))]
        n_val = int(round(val_fraction * len(rest)))
        folds.append(Fold(tuple(sorted(rest[n_val:].tolist())), tuple(sorted(rest[:n_val].tolist())), tuple(test)))
    return folds
