"""Spatial sampling of feasible actions around a predicted region.

A region is a mixture of ``S`` isotropic Gaussians.  Continuous AddNode
actions are drawn from the mixture; state-dependent discrete actions are
enumerated and the most likely ``A_max - n_drawn`` are kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import Sequence

import numpy as np

from .config import SamplerConfig
from .truss import DesignAction, TrussState, add_node, enumerate_discrete_actions, infeasibility_reason

FeasibleActionSet = tuple[DesignAction, ...]


class EmptyActionSet(RuntimeError):
    pass


@dataclass(frozen=True)
class SpatialRegion:
    centers: tuple[tuple[float, float], ...]

    def __post_init__(self):
        centers = tuple((float(x), float(y)) for x, y in self.centers)
        for x, y in centers:
            if not (-1.0 <= x <= 1.0 and -1.0 <= y <= 1.0):
                raise ValueError(f"region center ({x}, {y}) outside [-1, 1]^2")
        object.__setattr__(self, "centers", centers)

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "SpatialRegion":
        """Build from a flat (x1, y1, x2, y2, ...) prediction, clipping into the design space."""
        v = np.clip(np.asarray(vec, dtype=float).reshape(-1, 2), -1.0, 1.0)
        return cls(tuple(map(tuple, v)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=float)


def region_around_action(action: DesignAction) -> SpatialRegion:
    return SpatialRegion(action.points)


def _log_gauss(sq_dist: np.ndarray, sigma: float) -> np.ndarray:
    return -sq_dist / (2.0 * sigma**2) - math.log(2.0 * math.pi * sigma**2)


def log_densities(params: np.ndarray, region: SpatialRegion, sigma: float) -> np.ndarray:
    """Log of :func:`region_density` for a batch of parameter vectors, shape (M, 2S)."""
    centers = region.as_array()
    S = len(centers)
    pts = np.asarray(params, dtype=float).reshape(len(params), -1, 2)
    if pts.shape[1] != S:
        raise ValueError(f"parameters encode {pts.shape[1]} points but region has {S} centers")
    # sq[m, i, j]: squared distance from point i of action m to center j
    sq = ((pts[:, :, None, :] - centers[None, None, :, :]) ** 2).sum(-1)
    best = np.full(len(pts), -np.inf)
    for perm in permutations(range(S)):
        total = sum(_log_gauss(sq[:, i, j], sigma) for i, j in enumerate(perm))
        best = np.maximum(best, total)
    return best


def region_density(params: Sequence[float], region: SpatialRegion, cfg: SamplerConfig) -> float:
    """Product of Gaussian densities of the control points under the best
    point-to-center assignment."""
    return float(np.exp(log_densities(np.asarray(params, dtype=float)[None, :], region, cfg.sigma)[0]))


def rank_by_density(
    actions: Sequence[DesignAction], region: SpatialRegion, sigma: float
) -> list[DesignAction]:
    """Most likely first; exact ties fall back to (label, params) order."""
    if not actions:
        return []
    logd = log_densities(np.array([a.params for a in actions]), region, sigma)
    order = sorted(range(len(actions)), key=lambda i: (-logd[i], actions[i].sort_key()))
    return [actions[i] for i in order]


def sample_continuous(
    state: TrussState, region: SpatialRegion, cfg: SamplerConfig, rng: np.random.Generator
) -> list[DesignAction]:
    centers = region.as_array()
    drawn: list[DesignAction] = []
    seen: set[DesignAction] = set()
    for _ in range(cfg.n):
        for _attempt in range(cfg.max_rejections):
            comp = rng.integers(len(centers))
            x, y = np.clip(centers[comp] + cfg.sigma * rng.standard_normal(2), -1.0, 1.0)
            act = add_node(float(x), float(y))
            if act not in seen and infeasibility_reason(state, act) is None:
                drawn.append(act)
                seen.add(act)
                break
    return drawn


def sample_feasible(
    state: TrussState,
    region: SpatialRegion,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> FeasibleActionSet:
    """Feasible actions in the region, at most ``cfg.A_max``, returned in shuffled order.

    Slots whose AddNode draws keep failing are dropped rather than padded, and
    the freed capacity goes to the next most likely discrete actions.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    continuous = sample_continuous(state, region, cfg, rng)
    discrete = rank_by_density(enumerate_discrete_actions(state), region, cfg.sigma)
    actions = continuous + discrete[: cfg.A_max - len(continuous)]
    if not actions:
        raise EmptyActionSet("no feasible action in this state")
    order = rng.permutation(len(actions))
    return tuple(actions[i] for i in order)
