import numpy as np
import pytest
import torch
from oracles import brute_force_nearest

from dsn.config import SamplerConfig
from dsn.imitation import ImitationNet, distance_ranking, imitation_forward, nearest_action, project_to_feasible
from dsn.nets import count_parameters
from dsn.sampler import SpatialRegion, sample_feasible
from dsn.truss import add_member, add_node, apply_all, initial_state, is_feasible


def test_trunk_reaches_twelve_by_twelve():
    net = ImitationNet()
    feat = net.conv[:-1](torch.zeros(1, 3, 128, 128))
    assert feat.shape == (1, 64, 12, 12)
    assert 4.3e6 < count_parameters(net) < 5.3e6


def test_zero_weights_give_zero_outputs():
    net = ImitationNet()
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    logits, params = imitation_forward(np.zeros((3, 128, 128), dtype=np.uint8), net)
    assert torch.equal(logits, torch.zeros(3)) and torch.equal(params, torch.zeros(4))


def test_deterministic_and_bounded():
    torch.manual_seed(0)
    net = ImitationNet().eval()
    img = torch.rand(3, 128, 128)
    a, b = imitation_forward(img, net), imitation_forward(img, net)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
    assert a[1].abs().max() <= 1


def test_heads_are_independent():
    torch.manual_seed(0)
    net = ImitationNet()
    img = torch.rand(2, 3, 128, 128)
    before, _ = net(img)
    with torch.no_grad():
        net.param_head.weight.zero_()
    after, _ = net(img)
    assert torch.equal(before, after)


def _state(problem):
    return apply_all(initial_state(problem), [add_node(0.0, 0.0), add_member((0.0, 0.0), (0.8, -0.8))])


def test_exact_prediction_returns_that_action(problem):
    s = _state(problem)
    target = add_member((-0.8, -0.8), (0.0, 0.0))
    acts = (add_node(0.5, 0.5), target, add_member((0.0, -0.8), (0.8, -0.8)))
    assert project_to_feasible((np.zeros(3), target.params), s, SamplerConfig(), actions=acts) == target


def test_single_action_set(problem):
    only = add_node(0.3, 0.3)
    assert project_to_feasible((np.zeros(3), (1, 1, 1, 1)), _state(problem), SamplerConfig(), actions=(only,)) == only


def test_projection_matches_brute_force(problem, rng):
    s = _state(problem)
    cfg = SamplerConfig()
    for i in range(50):
        pred = rng.uniform(-1, 1, 4)
        logits = rng.normal(size=3)
        acts = sample_feasible(s, SpatialRegion.from_vector(pred), cfg, np.random.default_rng(i))
        got = project_to_feasible((logits, pred), s, cfg, np.random.default_rng(i))
        assert got in acts and is_feasible(s, got)
        j, d = brute_force_nearest(pred, acts)
        assert np.linalg.norm(np.subtract(got.params, pred)) == pytest.approx(d, abs=1e-12)


def test_label_breaks_exact_distance_ties():
    pred = (0.0, 0.0, 0.0, 0.0)
    a = add_node(0.1, 0.0)  # same distance as b
    b = add_member((-0.1, 0.0), (0.1, 0.0))
    c = add_member((0.1, 0.0), (0.0, 0.1))
    dist_a = np.linalg.norm(a.params)
    assert dist_a == pytest.approx(np.linalg.norm(c.params))
    assert nearest_action(pred, 1, [a, c]) == c
    assert nearest_action(pred, 0, [c, a]) == a
    assert distance_ranking(pred, 0, [b, a])[0] == 1
