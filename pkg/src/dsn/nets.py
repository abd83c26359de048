"""Encoder, spatial-action and selection networks of the design strategy network.

The selection network scores every (state, action) pair with shared weights
and normalizes the scores with a softmax inside each action set.  Sets of
different sizes in one minibatch are flattened into a single ``(M, ...)``
batch and tracked with an ``owner`` index, so batch norm statistics are taken
over all actions of the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .sampler import FeasibleActionSet, SpatialRegion
from .truss import LABELS, DesignAction, TrussState

LATENT_DIM = 512
N_LABELS = len(LABELS)
N_PARAMS = 4


def conv_trunk() -> nn.Sequential:
    """Three strided convolutions taking 3x128x128 down to 64x12x12."""
    return nn.Sequential(
        nn.Conv2d(3, 32, kernel_size=8, stride=4),
        nn.ReLU(),
        nn.Conv2d(32, 64, kernel_size=4, stride=2),
        nn.ReLU(),
        nn.Conv2d(64, 64, kernel_size=3, stride=1),
        nn.ReLU(),
        nn.Flatten(),
    )


TRUNK_FEATURES = 64 * 12 * 12


class Encoder(nn.Module):
    def __init__(self, latent_dim: int = LATENT_DIM):
        super().__init__()
        self.conv = conv_trunk()
        self.fc = nn.Linear(TRUNK_FEATURES, latent_dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return F.relu(self.fc(self.conv(images)))


class SpatialNet(nn.Module):
    def __init__(self, latent_dim: int = LATENT_DIM, n_params: int = N_PARAMS):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(latent_dim, 64),
            nn.ReLU(),
            nn.Linear(64, 32),
            nn.ReLU(),
            nn.Linear(32, n_params),
            nn.Tanh(),
        )

    def forward(self, enc: torch.Tensor) -> torch.Tensor:
        return self.net(enc)


def _dense(n_in: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(n_in, n_out), nn.BatchNorm1d(n_out), nn.ReLU())


class SelectionNet(nn.Module):
    """PointNet-style scorer over an unordered action set.

    ``bridge`` optionally inserts a wider layer between the 1024-wide
    state-action concatenation and the 128-wide layer.
    """

    def __init__(self, latent_dim: int = LATENT_DIM, n_params: int = N_PARAMS, bridge: int | None = None):
        super().__init__()
        self.spatial = nn.Sequential(_dense(n_params, 64), _dense(64, 128), _dense(128, 256), _dense(256, 256))
        self.label = _dense(N_LABELS, 64)
        self.action = _dense(256 + 64, 512)
        widths = [512 + latent_dim] + ([bridge] if bridge else []) + [128, 32]
        self.pair = nn.Sequential(*[_dense(a, b) for a, b in zip(widths, widths[1:])])

    def scores(
        self, enc: torch.Tensor, params: torch.Tensor, labels: torch.Tensor, owner: torch.Tensor
    ) -> torch.Tensor:
        """One scalar per action.  ``owner[m]`` is the row of ``enc`` action ``m`` belongs to."""
        onehot = F.one_hot(labels, N_LABELS).to(params.dtype)
        act = self.action(torch.cat([self.spatial(params), self.label(onehot)], dim=1))
        pair = self.pair(torch.cat([act, enc[owner]], dim=1))
        return pair.mean(dim=1)

    def forward(
        self, enc: torch.Tensor, params: torch.Tensor, labels: torch.Tensor, owner: torch.Tensor
    ) -> torch.Tensor:
        return set_softmax(self.scores(enc, params, labels, owner), owner, enc.shape[0])


def set_softmax(scores: torch.Tensor, owner: torch.Tensor, n_sets: int) -> torch.Tensor:
    """Softmax of ``scores`` within each group sharing an ``owner`` index."""
    peak = torch.full((n_sets,), -torch.inf, dtype=scores.dtype, device=scores.device)
    peak = peak.scatter_reduce(0, owner, scores.detach(), reduce="amax", include_self=True)
    e = torch.exp(scores - peak[owner])
    z = torch.zeros(n_sets, dtype=scores.dtype, device=scores.device).index_add(0, owner, e)
    return e / z[owner]


class DSN(nn.Module):
    arch_name = "dsn"

    def __init__(self, bridge: int | None = None):
        super().__init__()
        self.arch_config = {"bridge": bridge}
        self.encoder = Encoder()
        self.spatial = SpatialNet()
        self.selection = SelectionNet(bridge=bridge)

    def forward(self, images, params, labels, owner):
        enc = self.encoder(images)
        return self.spatial(enc), self.selection(enc, params, labels, owner)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def action_arrays(actions: Sequence[DesignAction]) -> tuple[np.ndarray, np.ndarray]:
    params = np.array([a.params for a in actions], dtype=np.float64).reshape(-1, N_PARAMS)
    labels = np.array([a.label.index for a in actions], dtype=np.int64)
    return params, labels


def action_tensors(actions: Sequence[DesignAction], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    params, labels = action_arrays(actions)
    return torch.as_tensor(params, dtype=dtype), torch.as_tensor(labels)


def _dtype_of(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


def as_image_batch(image, dtype=torch.float32) -> torch.Tensor:
    """Accept (3,H,W) or (B,3,H,W), uint8 or float in [0, 1]."""
    arr = image if isinstance(image, torch.Tensor) else torch.as_tensor(np.asarray(image))
    if arr.dtype == torch.uint8:
        arr = arr.to(dtype) / 255.0
    arr = arr.to(dtype)
    return arr.unsqueeze(0) if arr.dim() == 3 else arr


def encode(image, encoder: Encoder) -> torch.Tensor:
    """512-vector encoding of one design image."""
    return encoder(as_image_batch(image, _dtype_of(encoder)))[0]


def predict_region(enc: torch.Tensor, spatial: SpatialNet) -> torch.Tensor:
    return spatial(enc.unsqueeze(0))[0]


def select(enc: torch.Tensor, actions: Sequence[DesignAction], selection: SelectionNet) -> torch.Tensor:
    """Probability of each action in ``actions`` given the state encoding."""
    params, labels = action_tensors(actions, enc.dtype)
    owner = torch.zeros(len(actions), dtype=torch.long)
    return selection(enc.unsqueeze(0), params, labels, owner)


EnvQuery = Callable[[TrussState, SpatialRegion], FeasibleActionSet]


@dataclass
class DSNOutput:
    region: torch.Tensor
    actions: FeasibleActionSet
    probabilities: torch.Tensor

    def top(self, k: int = 1) -> list[tuple[DesignAction, float]]:
        probs = self.probabilities.detach().cpu().numpy()
        order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))[:k]
        return [(self.actions[i], float(probs[i])) for i in order]


def dsn_forward(model: DSN, image, state: TrussState, env_query: EnvQuery) -> DSNOutput:
    """Encode, predict a region, query the environment, then score the returned set."""
    enc = encode(image, model.encoder)
    region = predict_region(enc, model.spatial)
    actions = env_query(state, SpatialRegion.from_vector(region.detach().cpu().numpy()))
    return DSNOutput(region, actions, select(enc, actions, model.selection))
