"""Losses, joint DSN training, baseline training and k-fold cross validation."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import SamplerConfig, TrainConfig
from .datasets import D1Sample, D2Sample, TrajectoryRecord, build_d1, build_d2, split_kfold
from .evaluation import EvalConfig, EvalReport, RandomModel, aggregate_reports, evaluate_model, stack_images
from .imitation import ImitationNet
from .nets import DSN, N_LABELS, action_arrays

PROB_CLAMP = 1e-7


class NonFiniteLoss(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# losses


def spatial_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all components."""
    return F.mse_loss(pred, target)


def _bce_terms(probs: torch.Tensor, onehot: torch.Tensor) -> torch.Tensor:
    p = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(onehot * torch.log(p) + (1.0 - onehot) * torch.log(1.0 - p))


def selection_loss(dist: torch.Tensor, target_index: int) -> torch.Tensor:
    """Elementwise binary cross-entropy against the one-hot target, averaged over the set."""
    onehot = torch.zeros_like(dist)
    onehot[target_index] = 1.0
    return _bce_terms(dist, onehot).mean()


def batched_selection_loss(
    probs: torch.Tensor, owner: torch.Tensor, is_target: torch.Tensor, n_sets: int, objective: str = "bce"
) -> torch.Tensor:
    """Mean over sets of :func:`selection_loss` for sets flattened with an owner index.

    ``objective="categorical"`` uses the negative log-probability of the target instead.
    """
    if objective == "categorical":
        return -torch.log(probs[is_target].clamp(PROB_CLAMP, 1.0)).mean()
    terms = _bce_terms(probs, is_target.to(probs.dtype))
    per_set = torch.zeros(n_sets, dtype=probs.dtype).index_add(0, owner, terms)
    counts = torch.zeros(n_sets, dtype=probs.dtype).index_add(0, owner, torch.ones_like(terms))
    return (per_set / counts).mean()


def label_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Clamped elementwise BCE between softmax(logits) and the one-hot labels."""
    return _bce_terms(F.softmax(logits, dim=1), F.one_hot(labels, N_LABELS).to(logits.dtype)).mean()


# ---------------------------------------------------------------------------
# reports


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mse_loss: float
    bce_loss: float
    val_spatial_acc: float | None = None
    val_top1: float | None = None


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_jsonl(self) -> str:
        lines = [json.dumps(asdict(e), sort_keys=True) for e in self.epochs]
        lines.append(json.dumps({"best_epoch": self.best_epoch, "stopped_early": self.stopped_early}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    def summary_table(self) -> str:
        rows = ["epoch        lr      mse      bce  val@0.1  val_top1"]
        for e in self.epochs:
            sp = "-" if e.val_spatial_acc is None else f"{100 * e.val_spatial_acc:.2f}"
            t1 = "-" if e.val_top1 is None else f"{100 * e.val_top1:.2f}"
            mark = " *" if e.epoch == self.best_epoch else ""
            rows.append(f"{e.epoch:5d} {e.lr:9.2e} {e.mse_loss:8.5f} {e.bce_loss:8.5f} {sp:>8} {t1:>9}{mark}")
        rows.append(f"best epoch {self.best_epoch}, stopped early: {self.stopped_early}")
        return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# training loops


def seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig):
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr0)
    spec = cfg.decay_spec
    kind = spec.get("kind", "step")
    if kind == "step":
        sched = torch.optim.lr_scheduler.StepLR(opt, step_size=int(spec.get("step_size", 50)), gamma=spec.get("gamma", 0.5))
    elif kind == "exponential":
        sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=spec["gamma"])
    elif kind == "none":
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda _: 1.0)
    else:
        raise ValueError(f"unknown decay kind {kind!r}")
    return opt, sched


def _check(value: torch.Tensor, what: str, epoch: int) -> float:
    v = float(value.detach())
    if not math.isfinite(v):
        raise NonFiniteLoss(f"{what} became {v} in epoch {epoch}")
    return v


def d1_batch(samples: Sequence[D1Sample], dtype=torch.float32):
    images = stack_images(samples, dtype)
    return images, torch.tensor([s.target for s in samples], dtype=dtype)


def d2_batch(samples: Sequence[D2Sample], dtype=torch.float32):
    """Images plus the flattened sets: params (M,4), labels (M,), owner (M,), target mask (M,)."""
    params, labels, owner, is_target = [], [], [], []
    for j, s in enumerate(samples):
        p, lab = action_arrays(s.actions)
        params.append(p)
        labels.append(lab)
        owner.append(np.full(len(lab), j))
        mask = np.zeros(len(lab), dtype=bool)
        mask[s.target_index] = True
        is_target.append(mask)
    return (
        stack_images(samples, dtype),
        torch.as_tensor(np.concatenate(params), dtype=dtype),
        torch.as_tensor(np.concatenate(labels)),
        torch.as_tensor(np.concatenate(owner)),
        torch.as_tensor(np.concatenate(is_target)),
    )


def train_cycle(model: DSN, opt, d1b, d2b, cfg: TrainConfig, epoch: int = 0) -> tuple[float, float]:
    """One D1 step (MSE on encoder + spatial net) then one D2 step (BCE on encoder + selection net)."""
    w_mse, w_bce = cfg.loss_weights
    images, targets = d1b
    opt.zero_grad()
    mse = spatial_loss(model.spatial(model.encoder(images)), targets)
    mse_v = _check(mse, "spatial loss", epoch)
    (w_mse * mse).backward()
    opt.step()

    images, params, labels, owner, is_target = d2b
    opt.zero_grad()
    probs = model.selection(model.encoder(images), params, labels, owner)
    bce = batched_selection_loss(probs, owner, is_target, images.shape[0], cfg.selection_objective)
    bce_v = _check(bce, "selection loss", epoch)
    (w_bce * bce).backward()
    opt.step()
    return mse_v, bce_v


def _minibatches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i : i + size] for i in range(0, n, size)]


class _EarlyStopper:
    def __init__(self, model, report: TrainReport, patience: int):
        self.model, self.report, self.patience = model, report, patience
        self.best_top1 = -math.inf
        self.best_state = copy.deepcopy(model.state_dict())

    def update(self, stats: EpochStats) -> bool:
        """Record the epoch; True when training should stop."""
        self.report.epochs.append(stats)
        score = stats.val_top1 if stats.val_top1 is not None else -stats.mse_loss - stats.bce_loss
        if score > self.best_top1:
            self.best_top1 = score
            self.report.best_epoch = stats.epoch
            self.best_state = copy.deepcopy(self.model.state_dict())
        return stats.epoch - self.report.best_epoch >= self.patience

    def finish(self, stopped: bool) -> None:
        self.report.stopped_early = stopped
        self.model.load_state_dict(self.best_state)


def _validate(model, val_d2, eval_cfg: EvalConfig) -> tuple[float | None, float | None]:
    if not val_d2:
        return None, None
    rep = evaluate_model(model, val_d2, eval_cfg)
    return rep.spatial_accuracy()[eval_cfg.spatial_thresholds[0]] / 100.0, rep.top1


ProgressFn = Callable[[EpochStats], None]


def train_dsn(
    d1: Sequence[D1Sample],
    d2: Sequence[D2Sample],
    cfg: TrainConfig = TrainConfig(),
    val_d2: Sequence[D2Sample] | None = None,
    model: DSN | None = None,
    eval_cfg: EvalConfig = EvalConfig(),
    progress: ProgressFn | None = None,
) -> tuple[DSN, TrainReport]:
    """Adam with alternating D1/D2 minibatches; keeps the weights of the epoch with
    the best validation top-1 accuracy.

    Without ``val_d2`` the lowest summed training loss selects the checkpoint.
    """
    if not d1 or not d2:
        raise ValueError("train_dsn needs nonempty D1 and D2")
    rng = seed_everything(cfg.seed)
    model = model if model is not None else DSN()
    dtype = next(model.parameters()).dtype
    opt, sched = make_optimizer(model, cfg)
    report = TrainReport()
    stopper = _EarlyStopper(model, report, cfg.patience)
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        lr = opt.param_groups[0]["lr"]
        b1 = _minibatches(len(d1), cfg.batch_size, rng)
        b2 = _minibatches(len(d2), cfg.batch_size, rng)
        mse_sum = bce_sum = 0.0
        steps = 0
        for i in range(max(len(b1), len(b2))):
            i1, i2 = b1[i % len(b1)], b2[i % len(b2)]
            if sum(len(d2[j].actions) for j in i2) < 2:
                continue  # batch norm needs at least two rows
            m, b = train_cycle(
                model, opt, d1_batch([d1[j] for j in i1], dtype), d2_batch([d2[j] for j in i2], dtype), cfg, epoch
            )
            mse_sum, bce_sum, steps = mse_sum + m, bce_sum + b, steps + 1
        sched.step()
        if steps == 0:
            raise ValueError("no usable minibatch; datasets too small for batch norm")
        val_sp, val_t1 = _validate(model, val_d2, eval_cfg)
        stats = EpochStats(epoch, lr, mse_sum / steps, bce_sum / steps, val_sp, val_t1)
        if progress:
            progress(stats)
        if stopper.update(stats):
            stopped = True
            break
    stopper.finish(stopped)
    model.eval()
    return model, report


def imitation_tensors(records: Sequence[TrajectoryRecord]):
    images = np.stack([r.with_image().image for r in records])
    labels = np.array([r.action.label.index for r in records], dtype=np.int64)
    params = np.array([r.params for r in records], dtype=np.float64)
    return images, labels, params


def train_imitation(
    records: Sequence[TrajectoryRecord],
    cfg: TrainConfig = TrainConfig(),
    val_d2: Sequence[D2Sample] | None = None,
    model: ImitationNet | None = None,
    eval_cfg: EvalConfig = EvalConfig(),
    progress: ProgressFn | None = None,
) -> tuple[ImitationNet, TrainReport]:
    """Joint MSE on the parameters plus BCE on the label, same schedule and early stopping."""
    if not records:
        raise ValueError("train_imitation needs records")
    rng = seed_everything(cfg.seed)
    model = model if model is not None else ImitationNet()
    dtype = next(model.parameters()).dtype
    images, labels, params = imitation_tensors(records)
    opt, sched = make_optimizer(model, cfg)
    w_mse, w_bce = cfg.loss_weights
    report = TrainReport()
    stopper = _EarlyStopper(model, report, cfg.patience)
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        lr = opt.param_groups[0]["lr"]
        mse_sum = bce_sum = 0.0
        batches = _minibatches(len(records), cfg.batch_size, rng)
        for idx in batches:
            x = torch.from_numpy(images[idx]).to(dtype) / 255.0
            opt.zero_grad()
            logits, pred = model(x)
            mse = spatial_loss(pred, torch.as_tensor(params[idx], dtype=dtype))
            bce = label_loss(logits, torch.as_tensor(labels[idx]))
            mse_sum += _check(mse, "spatial loss", epoch)
            bce_sum += _check(bce, "label loss", epoch)
            (w_mse * mse + w_bce * bce).backward()
            opt.step()
        sched.step()
        val_sp, val_t1 = _validate(model, val_d2, eval_cfg)
        stats = EpochStats(epoch, lr, mse_sum / len(batches), bce_sum / len(batches), val_sp, val_t1)
        if progress:
            progress(stats)
        if stopper.update(stats):
            stopped = True
            break
    stopper.finish(stopped)
    model.eval()
    return model, report


# ---------------------------------------------------------------------------
# cross validation


@dataclass
class FoldResult:
    fold: int
    report: EvalReport
    random_report: EvalReport
    train_report: TrainReport
    model: torch.nn.Module = field(repr=False, default=None)


@dataclass
class CVResult:
    model_kind: str
    folds: list[FoldResult]

    @property
    def aggregate(self) -> dict[str, tuple[float, float]]:
        return aggregate_reports([f.report for f in self.folds])

    @property
    def random_aggregate(self) -> dict[str, tuple[float, float]]:
        return aggregate_reports([f.random_report for f in self.folds])


class FoldError(RuntimeError):
    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold


def cross_validate(
    records: Sequence[TrajectoryRecord],
    cfg: TrainConfig = TrainConfig(),
    sampler_cfg: SamplerConfig = SamplerConfig(),
    k: int = 10,
    model_kind: str = "dsn",
    split_seed: int = 0,
    by_trajectory: bool = False,
    d2: Sequence[D2Sample] | None = None,
    eval_cfg: EvalConfig = EvalConfig(),
    folds: Sequence[int] | None = None,
    keep_models: bool = False,
    progress: Callable[[int, EpochStats], None] | None = None,
) -> CVResult:
    """Train and test once per fold; every record is tested exactly once.

    ``d2`` may be passed in so that several model kinds share the same sets.
    ``folds`` restricts the run to a subset of fold indices.
    """
    if len(records) < k:
        raise ValueError(f"need at least {k} records")
    if model_kind not in ("dsn", "imitation"):
        raise ValueError(f"unknown model kind {model_kind!r}")
    splits = split_kfold(records, k, cfg.val_fraction, np.random.default_rng(split_seed), by_trajectory)
    if d2 is None:
        d2 = build_d2(records, sampler_cfg, np.random.default_rng(sampler_cfg.rng_seed))
    d1 = build_d1(records) if model_kind == "dsn" else None
    results = []
    for f, split in enumerate(splits):
        if folds is not None and f not in folds:
            continue
        cb = (lambda s, f=f: progress(f, s)) if progress else None
        val = [d2[i] for i in split.val]
        try:
            if model_kind == "dsn":
                model, rep = train_dsn(
                    [d1[i] for i in split.train], [d2[i] for i in split.train], cfg, val, eval_cfg=eval_cfg, progress=cb
                )
            else:
                model, rep = train_imitation([records[i] for i in split.train], cfg, val, eval_cfg=eval_cfg, progress=cb)
        except Exception as exc:
            raise FoldError(f, exc) from exc
        test = [d2[i] for i in split.test]
        results.append(
            FoldResult(
                f,
                evaluate_model(model, test, eval_cfg),
                evaluate_model(RandomModel(split_seed + f), test, eval_cfg),
                rep,
                model if keep_models else None,
            )
        )
    return CVResult(model_kind, results)
