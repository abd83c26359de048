"""Spatial and top-k selection accuracy, bucketed distributions and report files."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .datasets import D2Sample
from .imitation import ImitationNet, distance_ranking
from .nets import DSN, action_arrays, as_image_batch

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class EvalConfig:
    spatial_thresholds: tuple[float, ...] = (0.1, 0.3, 0.5, 1.0)
    topk_values: tuple[int, ...] = (1, 3, 5, 10)
    distance: str = "euclidean"  # or "chebyshev"

    def __post_init__(self):
        t, k = self.spatial_thresholds, self.topk_values
        if any(b <= a for a, b in zip(t, t[1:])) or t[0] <= 0:
            raise ValueError("thresholds must be positive and ascending")
        if any(b <= a for a, b in zip(k, k[1:])) or k[0] < 1:
            raise ValueError("k values must be ascending and >= 1")
        if self.distance not in ("euclidean", "chebyshev"):
            raise ValueError("distance must be 'euclidean' or 'chebyshev'")


def _point_dist(a: np.ndarray, b: np.ndarray, metric: str) -> float:
    d = np.abs(a - b)
    return float(d.max()) if metric == "chebyshev" else float(np.hypot(*d))


def spatial_error(pred: Sequence[float], truth: Sequence[float], metric: str = "euclidean") -> float:
    """Larger of the two control-point distances under the better of the two pairings."""
    p = np.asarray(pred, dtype=float).reshape(2, 2)
    t = np.asarray(truth, dtype=float).reshape(2, 2)
    straight = max(_point_dist(p[0], t[0], metric), _point_dist(p[1], t[1], metric))
    crossed = max(_point_dist(p[0], t[1], metric), _point_dist(p[1], t[0], metric))
    return min(straight, crossed)


def spatial_hit(pred, truth, threshold: float, metric: str = "euclidean") -> bool:
    return spatial_error(pred, truth, metric) <= threshold


def truth_rank(dist: Sequence[float], index: int) -> int:
    """1-based rank of ``index`` by descending probability, ties in index order."""
    p = np.asarray(dist, dtype=float)
    return int(np.sum(p > p[index]) + np.sum(p[:index] == p[index]) + 1)


def topk_hit(dist, actions, truth, k: int) -> bool:
    return truth_rank(dist, list(actions).index(truth)) <= k


def bucket_percentages(values: Sequence[float], edges: Sequence[float]) -> tuple[float, ...]:
    """Share (percent) of ``values`` in [.., e0], (e0, e1], ..., (e_last, inf)."""
    v = np.asarray(values, dtype=float)
    counts = []
    lo = -math.inf
    for e in edges:
        counts.append(int(np.sum((v > lo) & (v <= e))))
        lo = e
    counts.append(int(np.sum(v > lo)))
    return tuple(100.0 * c / len(v) for c in counts)


def bce_with_onehot(probs: np.ndarray, index: int) -> float:
    p = np.clip(np.asarray(probs, dtype=float), PROB_CLAMP, 1 - PROB_CLAMP)
    y = np.zeros_like(p)
    y[index] = 1.0
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@dataclass
class EvalReport:
    model: str
    n_samples: int
    spatial_thresholds: tuple[float, ...]
    spatial_buckets: tuple[float, ...]
    topk_values: tuple[int, ...]
    topk_buckets: tuple[float, ...]
    mse_loss: float
    bce_loss: float
    bce_comparable: bool = True
    extra: dict = field(default_factory=dict)

    def spatial_accuracy(self) -> dict[float, float]:
        cum = np.cumsum(self.spatial_buckets[:-1])
        return {t: float(c) for t, c in zip(self.spatial_thresholds, cum)}

    def topk_accuracy(self) -> dict[int, float]:
        cum = np.cumsum(self.topk_buckets[:-1])
        return {k: float(c) for k, c in zip(self.topk_values, cum)}

    @property
    def top1(self) -> float:
        """Top-1 selection accuracy as a fraction."""
        return self.topk_buckets[0] / 100.0 if self.topk_values[0] == 1 else self.topk_accuracy()[1] / 100.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spatial_thresholds"] = list(self.spatial_thresholds)
        d["spatial_buckets"] = list(self.spatial_buckets)
        d["topk_values"] = list(self.topk_values)
        d["topk_buckets"] = list(self.topk_buckets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        for key in ("spatial_thresholds", "spatial_buckets", "topk_values", "topk_buckets"):
            d[key] = tuple(d[key])
        return cls(**d)


def build_report(
    name: str,
    spatial_errors,
    ranks,
    sq_errors,
    bce_values,
    cfg: EvalConfig,
    bce_comparable: bool = True,
) -> EvalReport:
    return EvalReport(
        model=name,
        n_samples=len(ranks),
        spatial_thresholds=tuple(cfg.spatial_thresholds),
        spatial_buckets=bucket_percentages(spatial_errors, cfg.spatial_thresholds),
        topk_values=tuple(cfg.topk_values),
        topk_buckets=bucket_percentages(ranks, cfg.topk_values),
        mse_loss=float(np.mean(sq_errors)),
        bce_loss=float(np.mean(bce_values)),
        bce_comparable=bce_comparable,
    )


class RandomModel:
    """Uniform region in [-1, 1]^4 and a uniformly random ranking of the set."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield range(start, min(n, start + size))


def _flatten_sets(samples: Sequence[D2Sample], dtype):
    params, labels, owner = [], [], []
    for j, s in enumerate(samples):
        p, lab = action_arrays(s.actions)
        params.append(p)
        labels.append(lab)
        owner.append(np.full(len(lab), j))
    return (
        torch.as_tensor(np.concatenate(params), dtype=dtype),
        torch.as_tensor(np.concatenate(labels)),
        torch.as_tensor(np.concatenate(owner)),
    )


def stack_images(samples, dtype=torch.float32) -> torch.Tensor:
    return as_image_batch(torch.from_numpy(np.stack([s.image for s in samples])), dtype)


@torch.no_grad()
def _score_dsn(model: DSN, samples, batch_size):
    preds, probs = [], []
    dtype = next(model.parameters()).dtype
    for idx in _batches(len(samples), batch_size):
        batch = [samples[i] for i in idx]
        enc = model.encoder(stack_images(batch, dtype))
        preds.append(model.spatial(enc).double().numpy())
        params, labels, owner = _flatten_sets(batch, dtype)
        p = model.selection(enc, params, labels, owner).double().numpy()
        bounds = np.cumsum([0] + [len(s.actions) for s in batch])
        probs.extend(p[a:b] for a, b in zip(bounds[:-1], bounds[1:]))
    return np.concatenate(preds), probs


@torch.no_grad()
def _score_imitation(model: ImitationNet, samples, batch_size):
    logits, preds = [], []
    dtype = next(model.parameters()).dtype
    for idx in _batches(len(samples), batch_size):
        lg, pr = model(stack_images([samples[i] for i in idx], dtype))
        logits.append(lg.double().numpy())
        preds.append(pr.double().numpy())
    return np.concatenate(logits), np.concatenate(preds)


def evaluate_model(
    model, samples: Sequence[D2Sample], cfg: EvalConfig = EvalConfig(), batch_size: int = 64, name: str | None = None
) -> EvalReport:
    """Metrics of a DSN, an imitation network (projected onto each sample's set) or
    a :class:`RandomModel` over D2-style test samples."""
    if not samples:
        raise ValueError("empty test set")
    truths = np.array([s.truth.params for s in samples], dtype=float)
    ranks, bce = [], []
    if isinstance(model, RandomModel):
        rng = np.random.default_rng(model.seed)
        preds = rng.uniform(-1.0, 1.0, size=(len(samples), 4))
        for s in samples:
            scores = rng.random(len(s.actions))
            dist = scores / scores.sum()
            ranks.append(truth_rank(dist, s.target_index))
            bce.append(bce_with_onehot(dist, s.target_index))
        comparable, name = True, name or model.name
    else:
        was_training = model.training
        model.eval()
        try:
            if isinstance(model, DSN):
                preds, probs = _score_dsn(model, samples, batch_size)
                for s, p in zip(samples, probs):
                    ranks.append(truth_rank(p, s.target_index))
                    bce.append(bce_with_onehot(p, s.target_index))
                comparable, name = True, name or "dsn"
            elif isinstance(model, ImitationNet):
                logits, preds = _score_imitation(model, samples, batch_size)
                for s, lg, pr in zip(samples, logits, preds):
                    order = distance_ranking(pr, int(np.argmax(lg)), s.actions)
                    ranks.append(order.index(s.target_index) + 1)
                    e = np.exp(lg - lg.max())
                    bce.append(bce_with_onehot(e / e.sum(), s.truth.label.index))
                comparable, name = False, name or "imitation"
            else:
                raise TypeError(f"cannot evaluate {type(model).__name__}")
        finally:
            model.train(was_training)
    errors = [spatial_error(p, t, cfg.distance) for p, t in zip(preds, truths)]
    sq = np.mean((np.asarray(preds) - truths) ** 2, axis=1)
    return build_report(name, errors, ranks, sq, bce, cfg, comparable)


# ---------------------------------------------------------------------------
# aggregation and report files


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Mean and first standard error (sample std / sqrt(n))."""
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


def aggregate_reports(reports: Sequence[EvalReport]) -> dict[str, tuple[float, float]]:
    out = {
        "mse_loss": aggregate([r.mse_loss for r in reports]),
        "bce_loss": aggregate([r.bce_loss for r in reports]),
    }
    for t in reports[0].spatial_thresholds:
        out[f"spatial@{t:g}"] = aggregate([r.spatial_accuracy()[t] for r in reports])
    for k in reports[0].topk_values:
        out[f"top{k}"] = aggregate([r.topk_accuracy()[k] for r in reports])
    return out


def _bucket_names(edges, fmt) -> list[str]:
    names, lo = [], None
    for e in edges:
        names.append(f"<= {fmt(e)}" if lo is None else f"({fmt(lo)}, {fmt(e)}]")
        lo = e
    names.append(f"> {fmt(lo)}")
    return names


def summary_text(report: EvalReport) -> str:
    lines = [
        f"model    {report.model}",
        f"samples  {report.n_samples}",
        f"MSE loss {report.mse_loss:.4f}",
        f"BCE loss {report.bce_loss:.4f}" + ("" if report.bce_comparable else "  (not comparable across models)"),
        "",
        "Spatial accuracy",
    ]
    for t, acc in report.spatial_accuracy().items():
        lines.append(f"  within {t:g}: {acc:.2f}%")
    lines += ["", "Selection accuracy"]
    for k, acc in report.topk_accuracy().items():
        lines.append(f"  top {k}: {acc:.2f}%")
    lines += ["", "Spatial error distribution"]
    names = _bucket_names(report.spatial_thresholds, lambda v: f"{v:g}")
    for name, pct in zip(names, report.spatial_buckets):
        lines.append(f"  {name:<12} {pct:6.2f}%")
    t0 = report.spatial_thresholds[0]
    lines.append(f"  {report.spatial_buckets[0]:.2f}% of test data lies within {t0:g} error")
    lines += ["", "Ground-truth rank distribution"]
    names = _bucket_names(report.topk_values, lambda v: f"{v:d}")
    for name, pct in zip(names, report.topk_buckets):
        lines.append(f"  {name:<12} {pct:6.2f}%")
    return "\n".join(lines) + "\n"


def bucket_rows(report: EvalReport) -> list[tuple[str, str, str]]:
    rows = []
    for name, pct in zip(_bucket_names(report.spatial_thresholds, lambda v: f"{v:g}"), report.spatial_buckets):
        rows.append(("spatial", name, f"{pct:.2f}"))
    for name, pct in zip(_bucket_names(report.topk_values, lambda v: f"{v:d}"), report.topk_buckets):
        rows.append(("topk", name, f"{pct:.2f}"))
    return rows


_SVG_COLORS = ("#1b7837", "#5aae61", "#a6dba0", "#d9f0d3", "#e7d4e8", "#c2a5cf")


def stacked_bar_svg(report: EvalReport, width: int = 600) -> str:
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width + 120}" height="110">']
    for row, (title, buckets) in enumerate((("spatial", report.spatial_buckets), ("top-k", report.topk_buckets))):
        y = 15 + row * 50
        parts.append(f'<text x="5" y="{y + 20}" font-size="12">{title}</text>')
        x = 60.0
        for i, pct in enumerate(buckets):
            w = width * pct / 100.0
            parts.append(
                f'<rect x="{x:.2f}" y="{y}" width="{w:.2f}" height="30" fill="{_SVG_COLORS[i % len(_SVG_COLORS)]}"/>'
            )
            if pct >= 4:
                parts.append(f'<text x="{x + 2:.2f}" y="{y + 20}" font-size="10">{pct:.2f}</text>')
            x += w
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(report: EvalReport, path: str | Path, svg: bool = False) -> list[Path]:
    """Write ``<path>.json`` (exact), ``<path>.txt`` (table), ``<path>_buckets.csv``
    and optionally ``<path>.svg``.  Returns the written paths."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    out = [base.with_suffix(".json"), base.with_suffix(".txt"), base.parent / f"{base.name}_buckets.csv"]
    out[0].write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    out[1].write_text(summary_text(report))
    out[2].write_text("metric,bucket,percentage\n" + "".join(f'{m},"{b}",{p}\n' for m, b, p in bucket_rows(report)))
    if svg:
        out.append(base.with_suffix(".svg"))
        out[-1].write_text(stacked_bar_svg(report))
    return out


def parse_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))
