"""Training loop, scoring and multi-seed evaluation."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .evalkit import evaluate
from .graph import Graph, NodeViews, build_views, default_max_deg, sample_neighborhood
from .hypgeom import manifold_residual
from .losses import (LossBreakdown, LossParts, LossWeights, anomaly_scores, compute_parts,
                     total_loss)
from .model import (BACKBONES, DualEmbedding, EncoderConfig, ForwardPass, Reconstruction,
                    forward, init_params, operator_for, reconstruct_adjacency, save_checkpoint)

log = logging.getLogger(__name__)

FULL_BATCH_LIMIT = 2048
DEFAULT_BATCH = 512
DEFAULT_FANOUTS = (10, 10)
VARIANTS = ("full", "cl", "ae")

TABLE4_GRID = {
    "lr": (1e-4, 1e-3, 1e-2),
    "layers": (3, 5),
    "hidden": (8, 32),
    "d_rw": (4, 8),
    "max_deg": (4, 8),
    "tau": (0.3, 0.6, 1.0),
    "lambda1": (0.1, 0.01, 0.001),
    "lambda2": (1.0,),
}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 300
    layers: int = 3
    hidden: int = 32
    d_rw: int = 8
    max_deg: int | None = None
    tau: float = 0.6
    lambda1: float = 0.01
    lambda2: float = 1.0
    batch_size: int | None = None
    fanouts: tuple[int, ...] | None = None
    seed: int = 0
    backbone: str = "norm_conv"
    variant: str = "full"
    grid: bool = False

    def validate(self) -> "TrainConfig":
        checks = [
            ("lr", self.lr >= 0, "must be >= 0"),
            ("epochs", self.epochs >= 1, "must be >= 1"),
            ("layers", self.layers >= 1, "must be >= 1"),
            ("hidden", self.hidden >= 1, "must be >= 1"),
            ("d_rw", self.d_rw >= 1, "must be >= 1"),
            ("max_deg", self.max_deg is None or self.max_deg >= 1, "must be >= 1"),
            ("tau", self.tau > 0, "must be > 0"),
            ("lambda1", self.lambda1 >= 0, "must be >= 0"),
            ("lambda2", self.lambda2 >= 0, "must be >= 0"),
            ("batch_size", self.batch_size is None or self.batch_size >= 2, "must be >= 2"),
            ("fanouts", self.fanouts is None or (len(self.fanouts) > 0 and min(self.fanouts) >= 1),
             "must be a nonempty list of positive ints"),
            ("backbone", self.backbone in BACKBONES, f"must be one of {BACKBONES}"),
            ("variant", self.variant in VARIANTS, f"must be one of {VARIANTS}"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, f"{msg} (got {getattr(self, name)!r})")
        if self.grid:
            for name, allowed in TABLE4_GRID.items():
                value = getattr(self, name)
                if value is not None and value not in allowed:
                    raise ConfigError(name, f"{value!r} not in grid {allowed}")
        return self

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.layers, self.hidden, self.backbone)

    @property
    def weights(self) -> LossWeights:
        if self.variant == "cl":
            return LossWeights(0.0, 0.0, self.tau)
        return LossWeights(self.lambda1, self.lambda2, self.tau)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        """Build from string (or typed) values, e.g. a parsed config file."""
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, raw in mapping.items():
            if key not in kinds:
                raise ConfigError(key, "unknown config key")
            values[key] = _parse_value(key, kinds[key], raw)
        return replace(cls(), **values).validate()

    def as_dict(self) -> dict:
        return asdict(self)


def _parse_value(key, kind, raw):
    if not isinstance(raw, str):
        return tuple(raw) if key == "fanouts" and raw is not None else raw
    s = raw.strip()
    if "None" in kind and s.lower() in ("", "none"):
        return None
    try:
        if key == "fanouts":
            return tuple(int(t) for t in s.replace(",", " ").split())
        if kind.startswith("bool"):
            if s.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(s)
            return s.lower() in ("true", "1", "yes")
        if kind.startswith("int"):
            return int(s)
        if kind.startswith("float"):
            return float(s)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {kind}") from None
    return s


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` file; blank lines and ``#`` comments ignored."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        out[key.strip()] = value.strip()
    return out


# ------------------------------------------------------------------ optimizer

class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name, np.zeros_like(p))
            v = self.v.get(name, np.zeros_like(p))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            out[name] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


# ------------------------------------------------------------------ loss plumbing

@dataclass
class TrainReport:
    history: list[LossBreakdown]
    seconds: float
    best_epoch: int
    best_total: float
    manifold_residual: list[float] = field(default_factory=list)
    checkpoint_path: Path | None = None


def _restrict(fp: ForwardPass, k: int, adjacency: bool) -> ForwardPass:
    """Keep only the first ``k`` rows (the seed nodes of a sampled batch)."""
    rows = slice(0, k)
    e = fp.emb
    emb = DualEmbedding(*(t[rows] for t in (e.Hs, e.Hg, e.Hhs, e.Hhg, e.Ths, e.Thg)))
    rc = fp.recon
    recon = None
    if rc is not None:
        adj = None
        if adjacency:
            adj = tuple(reconstruct_adjacency(h) for h in (emb.Hs, emb.Hg, emb.Ths, emb.Thg))
        recon = Reconstruction(adj, rc.Rs[rows], rc.Rg[rows], rc.Rhs[rows], rc.Rhg[rows])
    return ForwardPass(emb, fp.Xs_hat[:k], fp.Xg_hat[:k], recon)


def evaluate_loss(params: dict, views: NodeViews, op, A, cfg: TrainConfig, *,
                  scoring: bool = False, seeds: int | None = None):
    """One forward pass; returns ``(LossBreakdown, leaf tensors, forward pass)``."""
    leaves = {k: ad.Tensor(v, requires_grad=not scoring) for k, v in params.items()}
    decode = cfg.variant != "cl"
    adjacency = decode and not scoring
    fp = forward(views, op, cfg.encoder, leaves, decode=decode,
                 adjacency=adjacency and seeds is None)
    local_views = views
    if seeds is not None:
        fp = _restrict(fp, seeds, adjacency)
        local_views = NodeViews(views.Xs[:seeds], views.Xg[:seeds], views.d_rw, views.max_deg)
        A = A[:seeds, :seeds]
    w = cfg.weights
    if scoring:
        w = LossWeights(0.0, w.lambda2, w.tau)
    parts = compute_parts(fp, A, local_views, w, use_cl=cfg.variant != "ae")
    return total_loss(parts, w, n=fp.emb.n), leaves, fp


def _grads(bd: LossBreakdown, leaves: dict) -> dict:
    for t in leaves.values():
        t.zero_grad()
    ad.backward(bd.objective)
    return {k: (np.zeros(t.shape) if t.grad is None else t.grad) for k, t in leaves.items()}


def _check_finite(bd: LossBreakdown, epoch: int) -> None:
    if not np.isfinite(bd.total):
        raise TrainingDiverged(
            f"non-finite loss at epoch {epoch}: cl={bd.cl!r} adj={bd.adj!r} node={bd.node!r}")


def _residual(fp: ForwardPass) -> float:
    return float(max(manifold_residual(fp.emb.Hhs.data).max(),
                     manifold_residual(fp.emb.Hhg.data).max()))


def _strip(bd: LossBreakdown) -> LossBreakdown:
    return replace(bd, objective=None)


def resolve(g: Graph, cfg: TrainConfig) -> TrainConfig:
    """Fill data-dependent defaults (max_deg, batching)."""
    cfg = cfg.validate()
    if cfg.max_deg is None:
        cfg = replace(cfg, max_deg=default_max_deg(g))
    if cfg.batch_size is None and g.n > FULL_BATCH_LIMIT:
        cfg = replace(cfg, batch_size=DEFAULT_BATCH)
    if cfg.batch_size is not None and cfg.fanouts is None:
        cfg = replace(cfg, fanouts=DEFAULT_FANOUTS)
    return cfg


def _check_views(g: Graph, views: NodeViews, cfg: TrainConfig) -> None:
    if views.Xs.shape[0] != g.n or views.Xg.shape[0] != g.n:
        raise ValueError(f"views have {views.Xs.shape[0]} rows, graph has {g.n} nodes")
    if views.Xg.shape[1] != cfg.d_rw + cfg.max_deg + 1:
        raise ValueError(f"structural view width {views.Xg.shape[1]} does not match "
                         f"d_rw={cfg.d_rw}, max_deg={cfg.max_deg}")


def train(g: Graph, cfg: TrainConfig, views: NodeViews | None = None,
          checkpoint_dir=None) -> tuple[dict[str, np.ndarray], TrainReport]:
    """Fit all eight towers; returns the parameters of the lowest-loss epoch."""
    start = time.perf_counter()
    if views is not None:
        cfg = replace(cfg, d_rw=views.d_rw, max_deg=views.max_deg)
    cfg = resolve(g, cfg)
    if views is None:
        views = build_views(g, cfg.d_rw, cfg.max_deg)
    _check_views(g, views, cfg)
    op = operator_for(g, cfg.backbone)
    A = g.adjacency
    params = init_params(views.Xs.shape[1], views.Xg.shape[1], cfg.encoder, cfg.seed)
    opt = Adam(cfg.lr)
    minibatch = cfg.batch_size is not None and cfg.batch_size < g.n
    history, residuals = [], []
    best_total, best_epoch, best_params = np.inf, -1, params

    for epoch in range(cfg.epochs):
        if minibatch:
            # epoch loss spans several steps; selection keeps end-of-epoch parameters
            bd, params, res = _minibatch_epoch(g, views, params, opt, cfg, epoch)
        else:
            bd, leaves, fp = evaluate_loss(params, views, op, A.toarray(), cfg)
            _check_finite(bd, epoch)
            res = _residual(fp)
            grads = _grads(bd, leaves)
        history.append(_strip(bd))
        residuals.append(res)
        if bd.total < best_total:
            best_total, best_epoch, best_params = bd.total, epoch, params
        if not minibatch:
            params = opt.step(params, grads)
        log.debug("epoch %d total=%.6f cl=%.6f node=%.6f", epoch, bd.total, bd.cl, bd.node)

    report = TrainReport(history, time.perf_counter() - start, best_epoch, float(best_total),
                         residuals)
    if checkpoint_dir is not None:
        report.checkpoint_path = save_checkpoint(
            checkpoint_dir, best_params, checkpoint_meta(cfg, views, best_epoch))
    return best_params, report


def _minibatch_epoch(g, views, params, opt, cfg, epoch):
    """One pass over shuffled seed batches; the epoch loss is the seed-weighted mean."""
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(g.n)
    n = g.n
    per_cl, per_node, per_adj = np.zeros(n), np.zeros(n), np.zeros(n)
    totals = np.zeros(4)
    residual = 0.0
    for b, lo in enumerate(range(0, n, cfg.batch_size)):
        seeds = order[lo:lo + cfg.batch_size]
        if seeds.size < 2:
            continue
        batch = sample_neighborhood(g, seeds, cfg.fanouts, rng_seed=int(rng.integers(2**63)))
        sub_views = NodeViews(views.Xs[batch.nodes], views.Xg[batch.nodes],
                              views.d_rw, views.max_deg)
        op = operator_for(batch.subgraph, cfg.backbone)
        A = batch.subgraph.adjacency.toarray()
        bd, leaves, fp = evaluate_loss(params, sub_views, op, A, cfg, seeds=seeds.size)
        _check_finite(bd, epoch)
        residual = max(residual, _residual(fp))
        params = opt.step(params, _grads(bd, leaves))
        frac = seeds.size / n
        totals += frac * np.array([bd.cl, bd.adj, bd.node, bd.total])
        per_cl[seeds], per_node[seeds], per_adj[seeds] = (
            bd.per_node_cl, bd.per_node_node, bd.per_node_adj)
    bd = LossBreakdown(*totals, per_node_cl=per_cl, per_node_node=per_node, per_node_adj=per_adj)
    return bd, params, residual


def checkpoint_meta(cfg: TrainConfig, views: NodeViews, best_epoch: int) -> dict:
    meta = {k: v for k, v in cfg.as_dict().items() if v is not None}
    meta.update(xs_dim=views.Xs.shape[1], xg_dim=views.Xg.shape[1], best_epoch=best_epoch)
    return meta


def score(g: Graph, params: dict, cfg: TrainConfig, views: NodeViews | None = None) -> np.ndarray:
    """Full-batch anomaly scores with the adjacency term dropped."""
    if views is not None:
        cfg = replace(cfg, d_rw=views.d_rw, max_deg=views.max_deg)
    cfg = resolve(g, cfg)
    if views is None:
        views = build_views(g, cfg.d_rw, cfg.max_deg)
    _check_views(g, views, cfg)
    for tower, view, width in (("enc_euc_s", "Xs", views.Xs.shape[1]),
                               ("enc_euc_g", "Xg", views.Xg.shape[1])):
        found = params[f"{tower}.0.W"].shape[0]
        if found != width:
            raise ValueError(f"parameters expect {view} width {found}, graph provides {width}")
    op = operator_for(g, cfg.backbone)
    bd, _, _ = evaluate_loss(params, views, op, None, cfg, scoring=True)
    return anomaly_scores(bd, LossWeights(0.0, cfg.weights.lambda2, cfg.tau))


@dataclass
class SeedsResult:
    seeds: list[int]
    scores: dict[int, np.ndarray]
    metrics: dict[int, dict[str, float]]
    mean: dict[str, float]
    std: dict[str, float]

    def report_lines(self) -> str:
        lines = [f"seeds = {','.join(map(str, self.seeds))}"]
        for s in self.seeds:
            for k, v in self.metrics[s].items():
                lines.append(f"seed{s}.{k} = {v!r}")
        for k in self.mean:
            lines.append(f"{k}_mean = {self.mean[k]!r}")
            lines.append(f"{k}_std = {self.std[k]!r}")
        for k in self.mean:
            lines.append(f"# {k}: {self.mean[k]:.4f} ± {self.std[k]:.4f}")
        return "\n".join(lines) + "\n"


def run_seeds(g: Graph, cfg: TrainConfig, seeds, views: NodeViews | None = None,
              checkpoint_root=None) -> SeedsResult:
    """Train and evaluate once per seed; mean and sample std of ROC-AUC, AP, CG area."""
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("seeds must be nonempty")
    if g.labels is None:
        raise ValueError("run_seeds needs a labelled graph")
    if views is None:
        cfg = resolve(g, cfg)
        views = build_views(g, cfg.d_rw, cfg.max_deg)
    scores, metrics = {}, {}
    for s in seeds:
        ckpt = None if checkpoint_root is None else Path(checkpoint_root) / f"seed{s}"
        params, _ = train(g, replace(cfg, seed=s), views, checkpoint_dir=ckpt)
        scores[s] = score(g, params, replace(cfg, seed=s), views)
        ev = evaluate(scores[s], g.labels)
        metrics[s] = {"roc_auc": ev.roc_auc, "ap": ev.ap, "cg_area": ev.cg_area}
    keys = ("roc_auc", "ap", "cg_area")
    table = {k: np.array([metrics[s][k] for s in seeds]) for k in keys}
    mean = {k: float(v.mean()) for k, v in table.items()}
    std = {k: float(v.std(ddof=1)) if len(seeds) > 1 else 0.0 for k, v in table.items()}
    return SeedsResult(seeds, scores, metrics, mean, std)
