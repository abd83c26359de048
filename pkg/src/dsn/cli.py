"""Command-line entry point: generate, train, evaluate, predict.

Every command writes a run manifest (command, arguments, config, seeds,
input digests, build id and timestamps).  Run directories are named by a
digest of everything except the timestamps, so rerunning a command with the
same inputs reuses the same directory and rewrites byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import operator
import re
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import __version__
from .checkpoint import load_model, save_checkpoint
from .config import ConfigError, RunConfig, SamplerConfig, load_problem, load_run_config, resolve_config_path
from .datasets import (
    D2Sample,
    ParseError,
    InfeasibleTrajectory,
    build_d1,
    build_d2,
    filter_generative,
    ingest,
    read_state,
    split_kfold,
)
from .demogen import POLICY_KINDS, HeuristicPolicy, generate_corpus, manifest_path
from .evaluation import EvalConfig, EvalReport, RandomModel, emit_report, evaluate_model
from .imitation import ImitationNet, distance_ranking, imitation_forward
from .nets import DSN, dsn_forward
from .render import disc_mask, render_uint8, save_png, segment_mask, to_pixel
from .sampler import SpatialRegion, sample_feasible
from .training import cross_validate, train_dsn, train_imitation

REGION_COLOR = (255, 0, 255)
CHOICE_COLOR = (255, 140, 0)


# ---------------------------------------------------------------------------
# manifests


def _digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class RunManifest:
    def __init__(self, command: str, args: dict, config: dict | None = None, inputs: Sequence[str | Path] = ()):
        self.command = command
        self.args = {k: v for k, v in sorted(args.items()) if k != "func"}
        self.config = config or {}
        self.inputs = {str(p): _digest(p) for p in inputs}
        self.started = datetime.now(timezone.utc).isoformat()

    @property
    def run_id(self) -> str:
        body = json.dumps(
            {"command": self.command, "args": self.args, "config": self.config, "inputs": self.inputs},
            sort_keys=True,
            default=str,
        )
        return hashlib.sha256(body.encode()).hexdigest()[:12]

    def write(self, path: str | Path, outputs: Sequence[str | Path] = ()) -> None:
        doc = {
            "run_id": self.run_id,
            "command": self.command,
            "args": self.args,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": sorted(str(p) for p in outputs),
            "build": f"dsn {__version__}, torch {torch.__version__}, numpy {np.__version__}",
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _run_dir(out: str | Path, manifest: RunManifest) -> Path:
    d = Path(out) / f"{manifest.command}-{manifest.run_id}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _config_inputs(path: str | None) -> list[Path]:
    return [resolve_config_path(path)] if path else []


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    problem = load_problem(args.problem)
    policies = [
        HeuristicPolicy(kind=k, noise=args.noise, target_fos=args.target_fos, max_steps=args.max_steps)
        for k in (args.policy or ["mixed"])
    ]
    out = Path(args.out)
    manifest = RunManifest("generate", vars(args), {"problem": problem.to_dict()})
    records = generate_corpus(args.n, policies, out, seed=args.seed, problem=problem)
    manifest.write(out.with_name(out.name + ".run.json"), [out, manifest_path(out)])
    n_traj = len({r.trajectory_id for r in records})
    print(f"wrote {len(records)} records in {n_traj} trajectories to {out}")
    return 0


# ---------------------------------------------------------------------------
# shared data preparation


def _prepare(data: str, cfg: RunConfig):
    records = filter_generative(ingest(data))
    folds = split_kfold(records, cfg.folds, cfg.train.val_fraction, np.random.default_rng(cfg.split_seed), cfg.by_trajectory)
    d2 = build_d2(records, cfg.sampler, np.random.default_rng(cfg.sampler.rng_seed))
    return records, folds, d2


def _build_model(kind: str, bridge: int | None):
    return DSN(bridge=bridge) if kind == "dsn" else ImitationNet()


def _log(prefix: str):
    def show(stats):
        t1 = "-" if stats.val_top1 is None else f"{100 * stats.val_top1:.2f}%"
        print(f"{prefix}epoch {stats.epoch}: mse {stats.mse_loss:.5f} bce {stats.bce_loss:.5f} val top1 {t1}", flush=True)

    return show


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    manifest = RunManifest("train", vars(args), cfg.to_dict(), [args.data, *_config_inputs(args.config)])
    run = _run_dir(args.out, manifest)
    records, folds, d2 = _prepare(args.data, cfg)
    torch.set_num_threads(1)
    outputs = []
    meta = {"data_sha256": manifest.inputs[str(args.data)], "config": cfg.to_dict(), "model": args.model}
    if args.fold == "all":
        result = cross_validate(
            records, cfg.train, cfg.sampler, cfg.folds, args.model, cfg.split_seed, cfg.by_trajectory, d2,
            keep_models=True, progress=lambda f, s: _log(f"fold {f} ")(s),
        )
        for fr in result.folds:
            ckpt = run / f"fold{fr.fold}.ckpt"
            save_checkpoint(fr.model, ckpt, {**meta, "fold": fr.fold})
            fr.train_report.write(run / f"fold{fr.fold}_train.jsonl")
            outputs += [ckpt, run / f"fold{fr.fold}_train.jsonl"]
            outputs += emit_report(fr.report, run / f"fold{fr.fold}_eval")
        summary = {k: {"mean": m, "se": se} for k, (m, se) in result.aggregate.items()}
        (run / "cv_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        outputs.append(run / "cv_summary.json")
        for key in ("top1", "spatial@0.1"):
            m, se = result.aggregate[key]
            print(f"{key}: {m:.2f} +/- {se:.2f}")
    else:
        k = int(args.fold)
        if not 0 <= k < len(folds):
            print(f"error: --fold must be in [0, {len(folds) - 1}] or 'all'", file=sys.stderr)
            return 2
        split = folds[k]
        val = [d2[i] for i in split.val]
        torch.manual_seed(cfg.train.seed)
        model = _build_model(args.model, args.bridge)
        if args.model == "dsn":
            d1 = build_d1(records)
            model, report = train_dsn(
                [d1[i] for i in split.train], [d2[i] for i in split.train], cfg.train, val, model, progress=_log("")
            )
        else:
            model, report = train_imitation([records[i] for i in split.train], cfg.train, val, model, progress=_log(""))
        ckpt = run / "model.ckpt"
        save_checkpoint(model, ckpt, {**meta, "fold": k})
        report.write(run / "train.jsonl")
        (run / "train_summary.txt").write_text(report.summary_table())
        outputs += [ckpt, run / "train.jsonl", run / "train_summary.txt"]
        print(report.summary_table(), end="")
    manifest.write(run / "run_manifest.json", outputs)
    print(f"run directory: {run}")
    return 0


# ---------------------------------------------------------------------------
# evaluate

_ASSERT_RE = re.compile(r"^\s*([a-z0-9@.]+)\s*(>=|<=|>|<)\s*([0-9.eE+-]+)\s*$")
_OPS = {">=": operator.ge, "<=": operator.le, ">": operator.gt, "<": operator.lt}


def report_metric(report: EvalReport, name: str) -> float:
    """Metric as a fraction: ``topK``, ``spatial@T``, ``mse`` or ``bce``."""
    if name.startswith("top"):
        return report.topk_accuracy()[int(name[3:])] / 100.0
    if name.startswith("spatial@"):
        return report.spatial_accuracy()[float(name[8:])] / 100.0
    if name in ("mse", "bce"):
        return getattr(report, f"{name}_loss")
    raise KeyError(name)


def check_assertions(report: EvalReport, assertions: Sequence[str]) -> list[str]:
    """Human-readable failures; empty when every assertion holds."""
    failures = []
    for text in assertions:
        m = _ASSERT_RE.match(text)
        if not m:
            raise ValueError(f"cannot parse assertion {text!r}")
        name, op, bound = m.group(1), m.group(2), float(m.group(3))
        value = report_metric(report, name)
        if not _OPS[op](value, bound):
            failures.append(f"{name} = {value:.4f}, required {op} {bound}")
    return failures


def cmd_evaluate(args) -> int:
    if args.checkpoint is None and args.baseline != "random":
        print("error: --checkpoint is required unless --baseline random", file=sys.stderr)
        return 2
    model, meta = (load_model(args.checkpoint) if args.checkpoint else (None, {}))
    cfg = load_run_config(args.config) if args.config else RunConfig.from_dict(meta.get("config", {}))
    inputs = [args.data, *_config_inputs(args.config)] + ([args.checkpoint] if args.checkpoint else [])
    manifest = RunManifest("evaluate", vars(args), cfg.to_dict(), inputs)
    run = _run_dir(args.out, manifest)
    records, folds, d2 = _prepare(args.data, cfg)
    fold = args.fold if args.fold is not None else meta.get("fold")
    test: list[D2Sample] = [d2[i] for i in folds[int(fold)].test] if fold is not None else list(d2)
    torch.set_num_threads(1)
    outputs, reports = [], []
    if model is not None:
        reports.append(evaluate_model(model, test, EvalConfig()))
        outputs += emit_report(reports[-1], run / f"{reports[-1].model}_eval", svg=args.svg)
    if args.baseline == "random":
        reports.append(evaluate_model(RandomModel(args.seed), test, EvalConfig()))
        outputs += emit_report(reports[-1], run / "random_eval", svg=args.svg)
    for rep in reports:
        acc = rep.topk_accuracy()
        sp = rep.spatial_accuracy()
        print(f"{rep.model}: n={rep.n_samples} top1 {acc[1]:.2f}% top5 {acc.get(5, float('nan')):.2f}% spatial@0.1 {sp[0.1]:.2f}%")
    failures = check_assertions(reports[0], args.assertions or [])
    manifest.write(run / "run_manifest.json", outputs)
    print(f"run directory: {run}")
    for f in failures:
        print(f"assertion failed: {f}", file=sys.stderr)
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# predict


def _overlay(state, centers, action, path) -> None:
    img = render_uint8(state).transpose(1, 2, 0).copy()
    p, q = action.points
    pp, pq = to_pixel(*p), to_pixel(*q)
    mask = disc_mask(pp, 3.0) if p == q else segment_mask(pp, pq, 3.0)
    img[mask] = CHOICE_COLOR
    for c in centers:
        img[disc_mask(to_pixel(*np.clip(c, -1, 1)), 3.0) & ~disc_mask(to_pixel(*np.clip(c, -1, 1)), 1.5)] = REGION_COLOR
    save_png(img.transpose(2, 0, 1), path)


def cmd_predict(args) -> int:
    model, meta = load_model(args.checkpoint)
    model.eval()
    state = read_state(args.state_file, args.trajectory, args.step)
    cfg = RunConfig.from_dict(meta.get("config", {}))
    sampler_cfg = SamplerConfig(**{**cfg.to_dict()["sampler"], "rng_seed": args.seed})
    rng = np.random.default_rng(args.seed)
    image = render_uint8(state)
    with torch.no_grad():
        if isinstance(model, DSN):
            out = dsn_forward(model, image, state, lambda s, r: sample_feasible(s, r, sampler_cfg, rng))
            region = out.region.double().numpy()
            ranked = out.top(args.topk)
            lines = [f"{p:.6f}  {a}" for a, p in ranked]
            choice = ranked[0][0]
        else:
            logits, params = imitation_forward(image, model)
            region = params.double().numpy()
            actions = sample_feasible(state, SpatialRegion.from_vector(region), sampler_cfg, rng)
            order = distance_ranking(region, int(torch.argmax(logits)), actions)[: args.topk]
            dist = [float(np.linalg.norm(np.subtract(actions[i].params, region))) for i in order]
            lines = [f"dist {d:.6f}  {actions[i]}" for i, d in zip(order, dist)]
            choice = actions[order[0]]
    print("region " + " ".join(f"{v:.6f}" for v in region))
    for line in lines:
        print(line)
    if args.image:
        _overlay(state, region.reshape(-1, 2), choice, args.image)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsn", description="Design strategy network pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic demonstration corpus")
    g.add_argument("--problem", required=True, help="problem config file, or 'default' / 'deck'")
    g.add_argument("--n", type=int, default=200, help="number of trajectories")
    g.add_argument("--policy", action="append", choices=POLICY_KINDS, help="repeat to mix policies")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.02)
    g.add_argument("--target-fos", type=float, default=1.0)
    g.add_argument("--max-steps", type=int, default=40)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a DSN or the imitation baseline")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=("dsn", "imitation"), default="dsn")
    t.add_argument("--config", help="run config (YAML or JSON); $DSN_CONFIG_DIR is searched for relative paths")
    t.add_argument("--fold", default="0", help="fold index or 'all' for cross validation")
    t.add_argument("--bridge", type=int, default=None, help="width of an optional extra selection layer")
    t.add_argument("--out", required=True, help="parent directory of the run directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on held-out data")
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--config", help="defaults to the config stored in the checkpoint")
    e.add_argument("--fold", type=int, default=None, help="test fold; defaults to the checkpoint's fold")
    e.add_argument("--baseline", choices=("random", "none"), default="none")
    e.add_argument("--seed", type=int, default=0, help="seed of the random baseline")
    e.add_argument("--assert", dest="assertions", action="append", metavar="METRIC>=X",
                   help="e.g. top1>=0.5 or spatial@0.1>0.3; exit code 1 when violated")
    e.add_argument("--svg", action="store_true", help="also write stacked-bar SVG charts")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="rank actions for one design state")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--state-file", required=True, help="state file or trajectory file")
    p.add_argument("--trajectory", help="trajectory id inside a trajectory file")
    p.add_argument("--step", type=int, help="use the state just before this step")
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image", help="write the state with the region and top action overlaid (PNG)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, InfeasibleTrajectory, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
