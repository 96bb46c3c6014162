"""Command-line entry point: prepare, train, score, eval, synth, run-seeds.

Every command writes into a fresh output directory together with a
``manifest.txt`` that records the command line, the resolved config, SHA-256
digests of inputs and outputs, the seeds, the tool version and wall-clock time.
Exit codes: 0 success, 2 validation error, 3 training divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import re
import shlex
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, evalkit, trainer
from .graph import (Graph, GraphFormatError, NodeViews, build_views, load_graph, read_edge_list,
                    read_labels, write_edge_list, write_labels)
from .model import load_checkpoint

log = logging.getLogger("janus")

RUN_ROOT_ENV = "JANUS_RUN_ROOT"
EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3
PRESETS = {"synth-500": evalkit.SYNTH_500}


class UsageError(ValueError):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    version: str = __version__
    started: float = field(default_factory=time.perf_counter)

    def add_input(self, name, path):
        self.inputs[name] = sha256(path)

    def write(self, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        for p in sorted(out_dir.rglob("*")):
            if p.is_file() and p.name != "manifest.txt":
                self.outputs[p.relative_to(out_dir).as_posix()] = sha256(p)
        lines = [f"command = {self.command}", f"version = {self.version}"]
        lines += [f"{k} = {v}" for k, v in self.extra.items()]
        lines += [f"config.{k} = {_fmt(v)}" for k, v in self.config.items()]
        lines.append(f"seeds = {','.join(map(str, self.seeds))}")
        lines += [f"digest.input.{k} = {v}" for k, v in sorted(self.inputs.items())]
        lines += [f"digest.output.{k} = {v}" for k, v in sorted(self.outputs.items())]
        lines.append(f"wall_clock_seconds = {time.perf_counter() - self.started:.3f}")
        path = out_dir / "manifest.txt"
        path.write_text("\n".join(lines) + "\n")
        return path


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        key, sep, value = line.partition(" = ")
        if sep:
            out[key] = value
    return out


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (list, tuple)):
        return ",".join(map(str, v))
    return repr(v) if isinstance(v, float) else str(v)


def fresh_dir(out, command: str) -> Path:
    """Create the output directory; an existing non-empty one is refused."""
    if out is None:
        root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = root / f"{command}-{stamp}"
        k = 1
        while out.exists():
            out = root / f"{command}-{stamp}-{k}"
            k += 1
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"output directory {out} is not empty")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ bundles

def _write_f64(path, a: np.ndarray) -> None:
    Path(path).write_bytes(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_f64(path, rows: int, cols: int) -> np.ndarray:
    buf = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
    if buf.size != rows * cols:
        raise GraphFormatError(f"{path}: expected {rows}x{cols} float64 values, found {buf.size}")
    return buf.reshape(rows, cols).astype(np.float64)


def write_bundle(out: Path, g: Graph, views: NodeViews, man: RunManifest) -> None:
    write_edge_list(g, out / "graph.edges")
    _write_f64(out / "features.bin", views.Xs)
    _write_f64(out / "views.bin", views.Xg)
    if g.labels is not None:
        write_labels(g.labels, out / "labels.txt")
    man.extra.update(kind="bundle", n=g.n, feature_dim=views.Xs.shape[1],
                     view_dim=views.Xg.shape[1], d_rw=views.d_rw, max_deg=views.max_deg,
                     edges=len(g.edges), labelled=str(g.labels is not None).lower())
    man.write(out)


def load_bundle(path) -> tuple[Graph, NodeViews, dict]:
    path = Path(path)
    mpath = path / "manifest.txt"
    if not mpath.exists():
        raise UsageError(f"{path} is not a bundle (no manifest.txt)")
    meta = read_manifest(mpath)
    if meta.get("kind") != "bundle":
        raise UsageError(f"{path} is not a bundle (kind={meta.get('kind')})")
    for name in ("graph.edges", "features.bin", "views.bin", "labels.txt"):
        want = meta.get(f"digest.output.{name}")
        if want is not None and sha256(path / name) != want:
            raise UsageError(f"{path / name}: content does not match the bundle manifest digest")
    n, d, dg = int(meta["n"]), int(meta["feature_dim"]), int(meta["view_dim"])
    X = _read_f64(path / "features.bin", n, d)
    Xg = _read_f64(path / "views.bin", n, dg)
    labels = read_labels(path / "labels.txt") if meta.get("labelled") == "true" else None
    g = Graph(n, read_edge_list(path / "graph.edges"), X, labels)
    views = NodeViews(g.X, Xg, int(meta["d_rw"]), int(meta["max_deg"]))
    return g, views, meta


def _bundle_inputs(man: RunManifest, bundle) -> None:
    for name in ("graph.edges", "features.bin", "views.bin", "labels.txt"):
        p = Path(bundle) / name
        if p.exists():
            man.add_input(f"bundle.{name}", p)


# ------------------------------------------------------------------ scores

def write_scores(path, scores) -> None:
    with open(path, "w") as fh:
        for i, s in enumerate(scores):
            fh.write(f"{i}\t{s:.17g}\n")


def read_scores(path) -> np.ndarray:
    vals = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if len(parts) != 2:
                raise UsageError(f"{path}:{lineno}: expected 'node_id<TAB>score'")
            try:
                node, s = int(parts[0]), float(parts[1])
            except ValueError:
                raise UsageError(f"{path}:{lineno}: malformed score line {line.strip()!r}") from None
            if node != lineno - 1:
                raise UsageError(f"{path}:{lineno}: expected node id {lineno - 1}, got {node}")
            vals.append(s)
    return np.array(vals)


# ------------------------------------------------------------------ config plumbing

_TRAIN_FIELDS = {f.name: f for f in fields(trainer.TrainConfig)}
_SPEC_FIELDS = {f.name: f for f in fields(evalkit.InjectionSpec)}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file")
    for name in _TRAIN_FIELDS:
        flag = "--" + name.replace("_", "-")
        if name == "grid":
            p.add_argument(flag, action="store_true", default=None,
                           help="validate values against the hyperparameter grid")
        else:
            p.add_argument(flag, dest=name, default=None, metavar=name.upper())


def train_config(args, base: dict | None = None) -> trainer.TrainConfig:
    values = dict(base or {})
    if getattr(args, "config", None):
        values.update(trainer.read_config_file(args.config))
    for name in _TRAIN_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = "true" if v is True else v
    return trainer.TrainConfig.from_mapping(values)


def _view_params(args) -> tuple[int, int | None]:
    try:
        d_rw = int(args.d_rw)
        max_deg = None if args.max_deg in (None, "none") else int(args.max_deg)
    except ValueError as exc:
        raise UsageError(f"bad view parameter: {exc}") from None
    return d_rw, max_deg


# ------------------------------------------------------------------ commands

def cmd_prepare(args) -> int:
    man = RunManifest(args.cmdline)
    g = load_graph(args.edges, args.features, args.labels)
    d_rw, max_deg = _view_params(args)
    views = build_views(g, d_rw, max_deg)
    out = fresh_dir(args.out, "prepare")
    man.add_input("edges", args.edges)
    man.add_input("features", args.features)
    if args.labels:
        man.add_input("labels", args.labels)
    write_bundle(out, g, views, man)
    print(out)
    return EXIT_OK


def cmd_synth(args) -> int:
    man = RunManifest(args.cmdline)
    spec = PRESETS[args.preset] if args.preset else evalkit.InjectionSpec()
    overrides = {}
    for name, f in _SPEC_FIELDS.items():
        v = getattr(args, "spec_" + name)
        if v is not None:
            kind = type(getattr(spec, name))
            try:
                overrides[name] = kind(v)
            except ValueError:
                raise UsageError(f"--{name.replace('_', '-')}: cannot parse {v!r}") from None
    spec = replace(spec, **overrides)
    spec.validate()
    g = evalkit.inject_anomalies(spec)
    d_rw, max_deg = _view_params(args)
    views = build_views(g, d_rw, max_deg)
    out = fresh_dir(args.out, "synth")
    man.config = {f"spec.{k}": getattr(spec, k) for k in _SPEC_FIELDS}
    write_bundle(out, g, views, man)
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    g, views, _ = load_bundle(args.bundle)
    cfg = train_config(args)
    out = fresh_dir(args.out, "train")
    man = RunManifest(args.cmdline, seeds=[cfg.seed])
    _bundle_inputs(man, args.bundle)
    if args.config:
        man.add_input("config", args.config)
    _, rep = trainer.train(g, cfg, views, checkpoint_dir=out / "checkpoint")
    with open(out / "history.txt", "w") as fh:
        fh.write("epoch\tcl\tadj\tnode\ttotal\n")
        for e, b in enumerate(rep.history):
            fh.write(f"{e}\t{b.cl!r}\t{b.adj!r}\t{b.node!r}\t{b.total!r}\n")
    man.config = trainer.resolve(g, replace(cfg, d_rw=views.d_rw, max_deg=views.max_deg)).as_dict()
    man.extra.update(kind="train", best_epoch=rep.best_epoch, best_total=repr(rep.best_total))
    man.write(out)
    log.info("trained %d epochs in %.1fs, best epoch %d (total %.6f)",
             len(rep.history), rep.seconds, rep.best_epoch, rep.best_total)
    print(out)
    return EXIT_OK


def _config_from_checkpoint(meta: dict) -> trainer.TrainConfig:
    keep = {k: v for k, v in meta.items() if k in _TRAIN_FIELDS}
    return trainer.TrainConfig.from_mapping(keep)


def cmd_score(args) -> int:
    g, views, _ = load_bundle(args.bundle)
    ckpt = Path(args.checkpoint)
    if (ckpt / "checkpoint" / "manifest.txt").exists():
        ckpt = ckpt / "checkpoint"
    params, meta = load_checkpoint(ckpt)
    cfg = _config_from_checkpoint(meta)
    xs, xg = int(meta.get("xs_dim", -1)), int(meta.get("xg_dim", -1))
    if (xs, xg) != (views.Xs.shape[1], views.Xg.shape[1]):
        raise UsageError(
            f"checkpoint expects view widths Xs={xs}, Xg={xg}; bundle provides "
            f"Xs={views.Xs.shape[1]}, Xg={views.Xg.shape[1]}")
    scores = trainer.score(g, params, cfg, views)
    out = fresh_dir(args.out, "score")
    man = RunManifest(args.cmdline, config=cfg.as_dict(), seeds=[cfg.seed])
    _bundle_inputs(man, args.bundle)
    for p in sorted(ckpt.iterdir()):
        man.add_input(f"checkpoint.{p.name}", p)
    write_scores(out / "scores.txt", scores)
    man.extra["kind"] = "score"
    man.write(out)
    print(out)
    return EXIT_OK


def _labels_for_eval(args) -> tuple[np.ndarray, str]:
    if args.labels:
        return read_labels(args.labels), args.labels
    g, _, _ = load_bundle(args.bundle)
    if g.labels is None:
        raise UsageError(f"bundle {args.bundle} is unlabeled; eval needs labels")
    return np.asarray(g.labels), str(Path(args.bundle) / "labels.txt")


def cmd_eval(args) -> int:
    if bool(args.labels) == bool(args.bundle):
        raise UsageError("pass exactly one of --labels or --bundle")
    scores_path = Path(args.scores)
    if scores_path.is_dir():
        scores_path = scores_path / "scores.txt"
    scores = read_scores(scores_path)
    labels, label_path = _labels_for_eval(args)
    if len(labels) != len(scores):
        raise UsageError(f"{len(scores)} scores but {len(labels)} labels")
    ev = evalkit.evaluate(scores, labels)
    out = fresh_dir(args.out, "eval")
    man = RunManifest(args.cmdline)
    man.add_input("scores", scores_path)
    man.add_input("labels", label_path)
    metrics = {"n": len(scores), "positives": int(labels.sum()),
               "roc_auc": ev.roc_auc, "ap": ev.ap, "cg_area": ev.cg_area}
    (out / "metrics.txt").write_text(evalkit.format_metrics(metrics))
    evalkit.write_curve_csv(ev.cg_curve, out / "cg_curve.csv")
    man.extra["kind"] = "eval"
    man.write(out)
    sys.stdout.write(evalkit.format_metrics(metrics))
    return EXIT_OK


def parse_seeds(text: str) -> list[int]:
    """``'1-5'``, ``'1,2,3'`` or a mix such as ``'1-3 7'``."""
    seeds = []
    for tok in text.replace(",", " ").split():
        m = re.fullmatch(r"(\d+)-(\d+)", tok)
        if m:
            seeds.extend(range(int(m[1]), int(m[2]) + 1))
        else:
            seeds.append(int(tok))
    if not seeds:
        raise UsageError("no seeds given")
    return seeds


def cmd_run_seeds(args) -> int:
    g, views, _ = load_bundle(args.bundle)
    if g.labels is None:
        raise UsageError(f"bundle {args.bundle} is unlabeled; run-seeds needs labels")
    try:
        seeds = parse_seeds(args.seeds)
    except ValueError:
        raise UsageError(f"--seeds: cannot parse {args.seeds!r}") from None
    cfg = train_config(args)
    out = fresh_dir(args.out, "run-seeds")
    man = RunManifest(args.cmdline, seeds=seeds)
    _bundle_inputs(man, args.bundle)
    if args.config:
        man.add_input("config", args.config)
    res = trainer.run_seeds(g, cfg, seeds, views)
    for s in seeds:
        d = out / f"seed{s}"
        d.mkdir(exist_ok=True)
        write_scores(d / "scores.txt", res.scores[s])
        (d / "metrics.txt").write_text(evalkit.format_metrics(res.metrics[s]))
    (out / "metrics.txt").write_text(res.report_lines())
    man.config = trainer.resolve(g, replace(cfg, d_rw=views.d_rw, max_deg=views.max_deg)).as_dict()
    man.extra["kind"] = "run-seeds"
    man.write(out)
    for k in res.mean:
        print(f"{k}: {res.mean[k]:.4f} ± {res.std[k]:.4f}")
    print(out)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="janus", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"janus {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def views_flags(sp):
        sp.add_argument("--d-rw", dest="d_rw", default="8", help="random-walk steps (default 8)")
        sp.add_argument("--max-deg", dest="max_deg", default=None,
                        help="degree one-hot cap (default: 95th-percentile degree)")

    sp = sub.add_parser("prepare", help="validate raw files and write a dataset bundle")
    sp.add_argument("--edges", required=True)
    sp.add_argument("--features", required=True, help="CSV, one row per node")
    sp.add_argument("--labels", help="one 0/1 label per line")
    views_flags(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("synth", help="generate a synthetic bundle with injected anomalies")
    sp.add_argument("--preset", choices=sorted(PRESETS))
    for name in _SPEC_FIELDS:
        sp.add_argument("--" + name.replace("_", "-"), dest="spec_" + name, default=None)
    views_flags(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train on a bundle and write a checkpoint")
    sp.add_argument("--bundle", required=True)
    _add_train_flags(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("score", help="score every node of a bundle")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--checkpoint", required=True, help="checkpoint dir or train run dir")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("eval", help="ROC-AUC, AP and cumulative gain of a score file")
    sp.add_argument("--scores", required=True, help="scores.txt or a score run dir")
    sp.add_argument("--labels")
    sp.add_argument("--bundle")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("run-seeds", help="train, score and evaluate once per seed")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--seeds", default="1-5", help="e.g. '1-5' or '1,2,3' (default 1-5)")
    _add_train_flags(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_run_seeds)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    args.cmdline = shlex.join(["janus"] + argv)
    try:
        return args.func(args)
    except trainer.TrainingDiverged as exc:
        print(f"janus: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, FileNotFoundError, IsADirectoryError) as exc:
        # ConfigError, GraphFormatError, DegenerateLabels and UsageError are ValueErrors
        print(f"janus {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
