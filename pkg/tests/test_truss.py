import math
from math import comb

import numpy as np
import pytest
from conftest import single_bar_problem, two_bar_problem
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import joint_equilibrium_forces

from dsn.config import ConfigError, Load, Material, ProblemConfig, Support
from dsn.truss import (
    DesignAction,
    InfeasibleAction,
    Label,
    add_member,
    add_node,
    apply_action,
    apply_all,
    empty_state,
    enumerate_discrete_actions,
    evaluate_structure,
    increase_thickness,
    initial_state,
    is_feasible,
    member_stresses,
    truss_mass,
)


def test_add_node_to_empty_state(problem):
    s = apply_action(empty_state(problem), add_node(0.2, 0.3))
    assert [(n.x, n.y) for n in s.nodes] == [(0.2, 0.3)]


def test_duplicate_member_is_infeasible(problem):
    s = initial_state(problem)
    act = add_member((-0.8, -0.8), (0.0, -0.8))
    s = apply_action(s, act)
    assert not is_feasible(s, act)
    with pytest.raises(InfeasibleAction):
        apply_action(s, act)


def test_thickness_cap(problem):
    s = apply_action(initial_state(problem), add_member((-0.8, -0.8), (0.0, -0.8)))
    thicken = increase_thickness((-0.8, -0.8), (0.0, -0.8))
    for _ in range(problem.material.max_level - 1):
        assert is_feasible(s, thicken)
        s = apply_action(s, thicken)
    assert s.members[0].size_level == problem.material.max_level
    with pytest.raises(InfeasibleAction):
        apply_action(s, thicken)


def test_member_between_unknown_points_infeasible(problem):
    assert not is_feasible(initial_state(problem), add_member((0.1, 0.1), (0.2, 0.2)))


def test_min_spacing(problem):
    s = initial_state(problem)
    assert not is_feasible(s, add_node(0.0, -0.8 + 0.049))
    assert is_feasible(s, add_node(0.0, -0.8 + 0.051))
    assert not is_feasible(s, add_node(1.01, 0.0))


def test_add_node_params_must_repeat():
    act = DesignAction(Label.ADD_NODE, (0.1, 0.2, 0.3, 0.4))
    assert not is_feasible(initial_state(ProblemConfig()), act)


def test_padding_is_idempotent():
    a = add_node(0.1, 0.2)
    assert a.params == (0.1, 0.2, 0.1, 0.2)
    assert DesignAction(Label.ADD_NODE, a.params) == a


def test_member_params_are_canonical():
    assert add_member((0.5, 0.0), (-0.5, 0.0)) == add_member((-0.5, 0.0), (0.5, 0.0))


def test_enumeration_counts(problem):
    assert len(enumerate_discrete_actions(initial_state(problem))) == comb(3, 2)
    assert enumerate_discrete_actions(empty_state(problem)) == []
    s = apply_all(empty_state(problem), [add_node(x, y) for x, y in [(0, 0), (0.5, 0), (0, 0.5), (0.5, 0.5)]])
    pts = [(0, 0), (0.5, 0), (0, 0.5), (0.5, 0.5)]
    s = apply_all(s, [add_member(p, q) for i, p in enumerate(pts) for q in pts[i + 1 :]])
    acts = enumerate_discrete_actions(s)
    assert sum(a.label is Label.ADD_MEMBER for a in acts) == 0
    assert sum(a.label is Label.INCREASE_THICKNESS for a in acts) == 6


def test_problem_validation():
    with pytest.raises(ConfigError):
        ProblemConfig(supports=(Support(0, 0),))
    with pytest.raises(ConfigError):
        ProblemConfig(loads=())
    with pytest.raises(ConfigError):
        Support(0, 0, "hinge")


def test_problem_round_trip():
    p = ProblemConfig(material=Material(yield_stress=10.0))
    assert ProblemConfig.from_dict(p.to_dict()) == p


# --- structural analysis against hand statics ------------------------------


def test_single_bar_hand_statics():
    P = 3.0
    prob = single_bar_problem(P)
    s = apply_action(initial_state(prob), add_member((0.0, -0.5), (0.0, 0.5)))
    res = evaluate_structure(s)
    assert res.solvable
    assert res.member_forces[0] == pytest.approx(-P, rel=1e-9)
    area = prob.material.area(1)
    assert member_stresses(s, res)[0] == pytest.approx(P / area, rel=1e-9)
    assert res.fos == pytest.approx(prob.material.yield_stress / (P / area), rel=1e-9)


def test_two_bar_hand_statics():
    P = 2.0
    prob = two_bar_problem(P)
    s = apply_all(
        initial_state(prob), [add_member((-0.5, 0.0), (0.0, 0.5)), add_member((0.5, 0.0), (0.0, 0.5))]
    )
    res = evaluate_structure(s)
    assert res.solvable
    for f in res.member_forces:
        assert f == pytest.approx(-P / math.sqrt(2), rel=1e-9)


def test_unconnected_load_is_mechanism(problem):
    res = evaluate_structure(initial_state(problem))
    assert not res.solvable and res.fos == 0


def test_collinear_mechanism(problem):
    # a straight chord through the loaded node cannot carry a transverse load
    s = apply_all(
        initial_state(problem), [add_member((-0.8, -0.8), (0.0, -0.8)), add_member((0.0, -0.8), (0.8, -0.8))]
    )
    assert not evaluate_structure(s).solvable


def _pratt_like(problem):
    top = [(-0.4, -0.2), (0.4, -0.2)]
    s = apply_all(initial_state(problem), [add_node(*p) for p in top])
    pairs = [
        ((-0.8, -0.8), (0.0, -0.8)),
        ((0.0, -0.8), (0.8, -0.8)),
        ((-0.8, -0.8), top[0]),
        (top[0], (0.0, -0.8)),
        (top[0], top[1]),
        ((0.0, -0.8), top[1]),
        (top[1], (0.8, -0.8)),
    ]
    return apply_all(s, [add_member(p, q) for p, q in pairs]), pairs


def test_indeterminate_check_against_equilibrium(problem):
    # pins at both ends make the 7-bar truss indeterminate once; check equilibrium only
    s, _ = _pratt_like(problem)
    res = evaluate_structure(s)
    assert res.solvable
    for n in s.nodes:
        if n.id in s.fixed_node_ids() and any((sup.x, sup.y) == n.xy for sup in problem.supports):
            continue
        fx = fy = 0.0
        for m, f in zip(s.members, res.member_forces):
            if n.id in (m.a, m.b):
                o = s.node(m.b if n.id == m.a else m.a)
                L = math.hypot(o.x - n.x, o.y - n.y)
                fx += f * (o.x - n.x) / L
                fy += f * (o.y - n.y) / L
        for ld in problem.loads:
            if (ld.x, ld.y) == n.xy:
                fx, fy = fx + ld.fx, fy + ld.fy
        assert abs(fx) < 1e-9 and abs(fy) < 1e-9


def test_determinate_truss_matches_joint_oracle():
    prob = ProblemConfig(
        supports=(Support(-0.8, -0.8, "pin"), Support(0.8, -0.8, "roller")),
        loads=(Load(0.0, -0.8, 0.3, -1.0),),
    )
    s, pairs = _pratt_like(prob)
    res = evaluate_structure(s)
    assert res.solvable
    nodes = {n.id: n.xy for n in s.nodes}
    ids = {n.xy: n.id for n in s.nodes}
    supports = {ids[(sp.x, sp.y)]: sp.restrains() for sp in prob.supports}
    loads = {ids[(ld.x, ld.y)]: (ld.fx, ld.fy) for ld in prob.loads}
    members = [(m.a, m.b) for m in s.members]
    expected = joint_equilibrium_forces(nodes, members, supports, loads)
    np.testing.assert_allclose(res.member_forces, expected, rtol=1e-9, atol=1e-12)


def test_mass_is_length_area_density(problem):
    s = apply_action(initial_state(problem), add_member((-0.8, -0.8), (0.0, -0.8)))
    assert truss_mass(s) == pytest.approx(0.8 * problem.material.area(1) * problem.material.density)


# --- properties on random states -------------------------------------------

coord = st.floats(-1.0, 1.0, allow_nan=False)


@st.composite
def random_state(draw):
    problem = ProblemConfig()
    s = initial_state(problem)
    for _ in range(draw(st.integers(0, 5))):
        act = add_node(draw(coord), draw(coord))
        if is_feasible(s, act):
            s = apply_action(s, act)
    for _ in range(draw(st.integers(0, 8))):
        acts = enumerate_discrete_actions(s)
        if not acts:
            break
        s = apply_action(s, acts[draw(st.integers(0, len(acts) - 1))])
    return s


@settings(max_examples=60, deadline=None)
@given(random_state(), coord, coord)
def test_add_node_grows_discrete_actions(state, x, y):
    act = add_node(x, y)
    if not is_feasible(state, act):
        return
    before = len(enumerate_discrete_actions(state))
    assert len(enumerate_discrete_actions(apply_action(state, act))) > before


@settings(max_examples=60, deadline=None)
@given(random_state(), st.data())
def test_transitions_are_pure_and_mass_monotone(state, data):
    acts = enumerate_discrete_actions(state) + [add_node(0.33, 0.44)]
    act = acts[data.draw(st.integers(0, len(acts) - 1))]
    if not is_feasible(state, act):
        return
    snapshot = (state.nodes, state.members)
    nxt = apply_action(state, act)
    assert (state.nodes, state.members) == snapshot
    assert apply_action(state, act) == nxt
    if act.label is Label.ADD_NODE:
        assert truss_mass(nxt) == truss_mass(state)
    else:
        assert truss_mass(nxt) > truss_mass(state)


@settings(max_examples=60, deadline=None)
@given(random_state())
def test_enumeration_count_formula(state):
    top = state.problem.material.max_level
    n = len(state.nodes)
    expected = comb(n, 2) - len(state.members) + sum(m.size_level < top for m in state.members)
    acts = enumerate_discrete_actions(state)
    assert len(acts) == expected
    assert all(is_feasible(state, a) for a in acts)


@settings(max_examples=40, deadline=None)
@given(random_state())
def test_structural_result_invariants(state):
    res = evaluate_structure(state)
    assert res.mass >= 0
    if res.solvable:
        assert res.fos >= 0
    else:
        assert res.fos == 0
