import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsn.config import ProblemConfig, SamplerConfig
from dsn.datasets import (
    InfeasibleTrajectory,
    ParseError,
    Step,
    TrajectoryRecord,
    build_d1,
    build_d2,
    filter_generative,
    import_external,
    ingest,
    read_state,
    record_for,
    split_kfold,
    write_records,
    write_state,
    write_trajectories,
)
from dsn.demogen import generate_corpus
from dsn.truss import Label, add_member, add_node, apply_action, initial_state, is_feasible


def test_single_add_node_file(tmp_path, problem):
    path = tmp_path / "one.jsonl"
    write_trajectories(path, problem, [Step("a", 0, "AddNode", (0.1, 0.2, 0.1, 0.2))])
    recs = ingest(path)
    assert len(recs) == 1
    assert recs[0].action == add_node(0.1, 0.2)
    assert recs[0].image.shape == (3, 128, 128)


def test_member_between_missing_nodes_rejected(tmp_path, problem):
    path = tmp_path / "bad.jsonl"
    steps = [Step("a", 0, "AddNode", (0.1, 0.2, 0.1, 0.2)), Step("a", 1, "AddMember", (0.1, 0.2, 0.5, 0.5))]
    write_trajectories(path, problem, steps)
    with pytest.raises(InfeasibleTrajectory) as err:
        ingest(path)
    assert err.value.step_index == 1


def test_parse_errors(tmp_path):
    (tmp_path / "empty.jsonl").write_text("")
    with pytest.raises(ParseError):
        ingest(tmp_path / "empty.jsonl")
    (tmp_path / "nohdr.jsonl").write_text(json.dumps({"format": "other"}) + "\n")
    with pytest.raises(ParseError):
        ingest(tmp_path / "nohdr.jsonl")
    write_trajectories(tmp_path / "order.jsonl", ProblemConfig(), [Step("a", 1, "AddNode", (0, 0, 0, 0)), Step("a", 0, "AddNode", (0.5, 0, 0.5, 0))])
    with pytest.raises(ParseError):
        ingest(tmp_path / "order.jsonl")


def test_demogen_round_trip(tmp_path):
    recs = generate_corpus(10, ("mixed",), seed=4, render=True)
    write_records(tmp_path / "c.jsonl", recs[0].state.problem, recs)
    back = ingest(tmp_path / "c.jsonl")
    assert back == recs
    assert all(np.array_equal(a.image, b.image) for a, b in zip(recs, back))


def test_filter_generative_counts(tmp_path, problem):
    steps = [
        Step("a", 0, "AddNode", (0.0, 0.0, 0.0, 0.0)),
        Step("a", 1, "AddMember", (-0.8, -0.8, 0.0, 0.0)),
        Step("a", 2, "IncreaseThickness", (-0.8, -0.8, 0.0, 0.0)),
        Step("a", 3, "DecreaseThickness", (-0.8, -0.8, 0.0, 0.0)),
        Step("a", 4, "RemoveMember", (-0.8, -0.8, 0.0, 0.0)),
        Step("a", 5, "AddMember", (-0.8, -0.8, 0.0, 0.0)),
        Step("a", 6, "AddNode", (0.5, 0.0, 0.5, 0.0)),
        Step("a", 7, "RemoveNode", (0.5, 0.0, 0.5, 0.0)),
    ]
    write_trajectories(tmp_path / "mix.jsonl", problem, steps)
    recs = ingest(tmp_path / "mix.jsonl", render=False)
    kept = filter_generative(recs)
    assert len(recs) == 8 and len(kept) == 5
    assert filter_generative(kept) == kept


def test_import_external_csv(tmp_path, problem):
    csv = tmp_path / "study.csv"
    csv.write_text("Team,Step,Action,x,y,x2,y2\nT1,0,add node,50,50,,\nT1,1,add member,10,10,50,50\n")
    steps = import_external(csv, problem, tmp_path / "out.jsonl", bounds=(0, 100, 0, 100))
    assert steps[0] == Step("T1", 0, "AddNode", (0.0, 0.0, 0.0, 0.0))
    assert steps[1].label == "AddMember"
    recs = ingest(tmp_path / "out.jsonl", render=False)
    assert [r.label for r in recs] == ["AddNode", "AddMember"]


def test_build_d1_targets(problem):
    s = initial_state(problem)
    recs = [record_for("a", 0, s, add_node(0.1, 0.2))]
    d1 = build_d1(recs)
    assert len(d1) == 1 and d1[0].target == (0.1, 0.2, 0.1, 0.2)


def _corpus(n=6, seed=0):
    return generate_corpus(n, ("mixed",), seed=seed, render=True)


def test_build_d2_contains_truth_and_is_feasible():
    recs = _corpus()
    d2 = build_d2(recs, SamplerConfig())
    assert len(d2) == len(recs)
    for r, s in zip(recs, d2):
        assert s.actions[s.target_index] == r.action
        assert s.truth.params == r.params and s.truth.label.value == r.label
        assert len(s.actions) <= 50
        assert all(is_feasible(r.state, a) for a in s.actions)


def test_build_d2_small_state_bound():
    from dsn.config import Load, Support

    problem = ProblemConfig(supports=(Support(-0.5, 0.0), Support(0.5, 0.0)), loads=(Load(0.5, 0.0, 0.0, -1.0),))
    s = initial_state(problem)
    rec = record_for("a", 0, s, add_member((-0.5, 0.0), (0.5, 0.0)))
    (sample,) = build_d2([rec], SamplerConfig(n=10))
    assert len(sample.actions) <= 11


def test_build_d2_deterministic():
    recs = _corpus(3)
    a = build_d2(recs, SamplerConfig(rng_seed=5))
    b = build_d2(recs, SamplerConfig(rng_seed=5))
    assert a == b


def test_truth_replaces_lowest_density_when_full():
    from dsn.datasets import _insert_truth
    from dsn.sampler import log_densities, region_around_action

    cfg = SamplerConfig(A_max=3, n=0)
    truth = add_node(0.0, 0.0)
    full = [add_node(0.05, 0.0), add_node(0.9, 0.9), add_node(0.1, 0.0)]
    out = _insert_truth(list(full), truth, cfg, np.random.default_rng(0))
    assert truth in out and add_node(0.9, 0.9) not in out and len(out) == 3
    logd = log_densities(np.array([a.params for a in full]), region_around_action(truth), cfg.sigma)
    assert full[int(np.argmin(logd))] == add_node(0.9, 0.9)


def test_split_arithmetic():
    recs = list(range(100))
    folds = split_kfold(recs, 10, 0.10, np.random.default_rng(0))
    assert len(folds) == 10
    for f in folds:
        assert (len(f.train), len(f.val), len(f.test)) == (81, 9, 10)
        assert not (set(f.train) & set(f.val)) and not (set(f.train) & set(f.test)) and not (set(f.val) & set(f.test))
    tests = [i for f in folds for i in f.test]
    assert sorted(tests) == recs
    assert folds == split_kfold(recs, 10, 0.10, np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(10, 200), st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_split_partition_property(n, k, seed):
    folds = split_kfold(list(range(n)), k, 0.1, np.random.default_rng(seed))
    tests = [i for f in folds for i in f.test]
    assert sorted(tests) == list(range(n))
    for f in folds:
        assert sorted(f.train + f.val + f.test) == list(range(n))


def test_split_by_trajectory_keeps_trajectories_together():
    recs = _corpus(12)
    folds = split_kfold(recs, 3, 0.1, np.random.default_rng(0), by_trajectory=True)
    for f in folds:
        test_ids = {recs[i].trajectory_id for i in f.test}
        assert not test_ids & {recs[i].trajectory_id for i in f.train + f.val}


def test_state_files(tmp_path, problem):
    s = apply_action(apply_action(initial_state(problem), add_node(0.0, 0.0)), add_member((0.0, 0.0), (0.8, -0.8)))
    write_state(tmp_path / "s.json", s)
    assert read_state(tmp_path / "s.json") == s
    recs = _corpus(2)
    write_records(tmp_path / "c.jsonl", problem, recs)
    assert read_state(tmp_path / "c.jsonl", recs[3].trajectory_id, recs[3].step_index) == recs[3].state


def test_record_equality_ignores_cached_image(problem):
    s = initial_state(problem)
    a = TrajectoryRecord("x", 0, Label.ADD_NODE.value, (0, 0, 0, 0), s)
    assert a == a.with_image()
