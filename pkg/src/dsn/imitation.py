"""Non-hierarchical imitation baseline.

A DQN-style convolutional network regresses the action label and the four
spatial parameters directly.  It knows nothing about feasibility, so its
prediction is projected onto the nearest member of a sampled feasible set.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import SamplerConfig
from .nets import LATENT_DIM, N_LABELS, N_PARAMS, TRUNK_FEATURES, as_image_batch, conv_trunk
from .sampler import SpatialRegion, sample_feasible
from .truss import DesignAction, TrussState


class ImitationNet(nn.Module):
    arch_name = "imitation"

    def __init__(self, hidden: int = LATENT_DIM):
        super().__init__()
        self.arch_config = {"hidden": hidden}
        self.conv = conv_trunk()
        self.fc = nn.Linear(TRUNK_FEATURES, hidden)
        self.label_head = nn.Linear(hidden, N_LABELS)
        self.param_head = nn.Linear(hidden, N_PARAMS)

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = F.relu(self.fc(self.conv(images)))
        return self.label_head(h), torch.tanh(self.param_head(h))


def imitation_forward(image, model: ImitationNet) -> tuple[torch.Tensor, torch.Tensor]:
    """Label logits (3,) and spatial parameters (4,) for one image."""
    dtype = next(model.parameters()).dtype
    logits, params = model(as_image_batch(image, dtype))
    return logits[0], params[0]


def distance_ranking(
    pred_params: Sequence[float], pred_label: int, actions: Sequence[DesignAction]
) -> list[int]:
    """Indices of ``actions`` by Euclidean distance of the padded 4-vectors;
    exact ties prefer the predicted label, then list order."""
    target = np.asarray(pred_params, dtype=float)
    dist = np.linalg.norm(np.array([a.params for a in actions], dtype=float) - target, axis=1)
    return sorted(range(len(actions)), key=lambda i: (dist[i], actions[i].label.index != pred_label, i))


def nearest_action(pred_params, pred_label: int, actions: Sequence[DesignAction]) -> DesignAction:
    return actions[distance_ranking(pred_params, pred_label, actions)[0]]


def project_to_feasible(
    pred: tuple,
    state: TrussState,
    sampler_cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
    actions: Sequence[DesignAction] | None = None,
) -> DesignAction:
    """Nearest feasible action to an imitation prediction ``(logits, params)``.

    Without ``actions`` the set is sampled around the predicted control points.
    """
    logits, params = pred
    params = np.asarray(params.detach().cpu().numpy() if isinstance(params, torch.Tensor) else params, dtype=float)
    logits = np.asarray(logits.detach().cpu().numpy() if isinstance(logits, torch.Tensor) else logits)
    if actions is None:
        actions = sample_feasible(state, SpatialRegion.from_vector(params), sampler_cfg, rng)
    return nearest_action(params, int(np.argmax(logits)), actions)
