"""Ranking metrics, synthetic anomaly injection and fixed graph fixtures."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Graph


class DegenerateLabels(ValueError):
    """Labels lack positives or negatives, so a ranking metric is undefined."""


def _prepare(scores, labels, need_negative=True):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    y = y.astype(np.int64)
    pos = int(y.sum())
    if pos == 0:
        raise DegenerateLabels("labels contain no positives")
    if need_negative and pos == y.size:
        raise DegenerateLabels("labels contain no negatives")
    return s, y


def _average_ranks(s: np.ndarray) -> np.ndarray:
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    bounds = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [s.size]])
    ranks = np.empty(s.size)
    # tie group [a, b) gets the mean of 1-based ranks a+1..b
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties."""
    s, y = _prepare(scores, labels)
    pos = y == 1
    P, N = int(pos.sum()), int((~pos).sum())
    u = _average_ranks(s)[pos].sum() - P * (P + 1) / 2.0
    return float(u / (P * N))


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve; tied scores form one threshold."""
    s, y = _prepare(scores, labels, need_negative=False)
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(1 - y_sorted)
    last = np.concatenate([np.flatnonzero(np.diff(s_sorted)), [s.size - 1]])
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / tp[-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * precision))


def cumulative_gain(scores, labels):
    """Cumulative gain curve and its trapezoid area.

    Nodes are ranked by descending score with ties broken by ascending id.
    Returns ``(curve, area)`` where ``curve`` is ``(n + 1, 2)`` with columns
    (fraction examined, fraction of positives found).
    """
    s, y = _prepare(scores, labels, need_negative=False)
    n = s.size
    order = np.lexsort((np.arange(n), -s))
    counts = np.concatenate([[0], np.cumsum(y[order])])
    P = int(counts[-1])
    curve = np.column_stack([np.arange(n + 1) / n, counts / P])
    # integer trapezoid sum, divided once so the area is correctly rounded
    area = int((counts[:-1] + counts[1:]).sum()) / (2 * P * n)
    return curve, float(area)


@dataclass
class RankedEval:
    scores: np.ndarray
    labels: np.ndarray
    roc_auc: float
    ap: float
    cg_curve: np.ndarray = field(repr=False)
    cg_area: float


def evaluate(scores, labels) -> RankedEval:
    s, y = _prepare(scores, labels)
    curve, area = cumulative_gain(s, y)
    return RankedEval(s, y, roc_auc(s, y), average_precision(s, y), curve, area)


def write_curve_csv(curve: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write("fraction,gain\n")
        for t, gain in curve:
            fh.write(f"{float(t)!r},{float(gain)!r}\n")


def format_metrics(values: dict) -> str:
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                   for k, v in values.items())


# ------------------------------------------------------------------ injection

BASE_MODELS = ("erdos_renyi", "barabasi_albert")


@dataclass(frozen=True)
class InjectionSpec:
    n: int = 500
    base_model: str = "erdos_renyi"
    feature_dim: int = 16
    contextual_count: int = 13
    structural_count: int = 12
    clique_size: int = 6
    outlier_scale: float = 10.0
    seed: int = 7
    p: float = 0.02
    ba_m: int = 3

    def validate(self) -> None:
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.base_model not in BASE_MODELS:
            raise ValueError(f"base_model must be one of {BASE_MODELS}")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.contextual_count < 0 or self.structural_count < 0:
            raise ValueError("anomaly counts must be nonnegative")
        if self.contextual_count + self.structural_count >= self.n:
            raise ValueError("contextual_count + structural_count must be < n")
        if self.structural_count and not 2 <= self.clique_size <= self.structural_count:
            raise ValueError(
                f"infeasible: clique_size {self.clique_size} needs 2 <= size <= structural_count "
                f"({self.structural_count})")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be a probability")
        if self.base_model == "barabasi_albert" and not 1 <= self.ba_m < self.n:
            raise ValueError("ba_m must be in [1, n)")


SYNTH_500 = InjectionSpec()


def _erdos_renyi(n, p, rng) -> np.ndarray:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return np.stack([iu[keep], ju[keep]], axis=1)


def _barabasi_albert(n, m, rng) -> np.ndarray:
    edges = []
    targets = list(range(m))
    repeated: list[int] = []
    for v in range(m, n):
        for t in targets:
            edges.append((t, v))
        repeated.extend(targets)
        repeated.extend([v] * m)
        pool = np.array(repeated)
        chosen: list[int] = []
        while len(chosen) < m:
            c = int(pool[rng.integers(pool.size)])
            if c not in chosen:
                chosen.append(c)
        targets = chosen
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def inject_anomalies(spec: InjectionSpec) -> Graph:
    """Base random graph with standard-normal features plus injected outliers.

    Contextual outliers get fresh ``outlier_scale``-scaled normal features;
    structural outliers are wired into cliques of ``clique_size`` (a remainder
    joins the last clique). Both kinds are labelled 1.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    if spec.base_model == "erdos_renyi":
        edges = _erdos_renyi(spec.n, spec.p, rng)
    else:
        edges = _barabasi_albert(spec.n, spec.ba_m, rng)
    X = rng.standard_normal((spec.n, spec.feature_dim))
    chosen = rng.permutation(spec.n)[:spec.contextual_count + spec.structural_count]
    contextual = chosen[:spec.contextual_count]
    structural = chosen[spec.contextual_count:]
    X[contextual] = spec.outlier_scale * rng.standard_normal((contextual.size, spec.feature_dim))
    extra = []
    if structural.size:
        groups = [structural[i:i + spec.clique_size]
                  for i in range(0, structural.size, spec.clique_size)]
        if len(groups) > 1 and len(groups[-1]) < spec.clique_size:
            groups[-2] = np.concatenate([groups[-2], groups[-1]])
            groups.pop()
        for grp in groups:
            iu, ju = np.triu_indices(len(grp), k=1)
            extra.append(np.stack([grp[iu], grp[ju]], axis=1))
    if extra:
        edges = np.concatenate([edges] + extra)
    labels = np.zeros(spec.n, dtype=np.int64)
    labels[chosen] = 1
    return Graph(spec.n, edges, X, labels)


# ------------------------------------------------------------------ fixtures

def triangle() -> Graph:
    return Graph(3, [(0, 1), (1, 2), (0, 2)], np.eye(3))


def gradcheck_graph(seed: int = 3) -> Graph:
    """10 nodes, 16 edges: a ring plus six chords, 4-dim features."""
    ring = [(i, (i + 1) % 10) for i in range(10)]
    chords = [(0, 5), (1, 6), (2, 7), (0, 3), (4, 8), (5, 9)]
    rng = np.random.default_rng(seed)
    return Graph(10, ring + chords, rng.standard_normal((10, 4)))


def small_synthetic(seed: int = 11) -> Graph:
    """30-node attributed graph with two contextual and one clique outlier group."""
    return inject_anomalies(InjectionSpec(n=30, feature_dim=6, contextual_count=2,
                                          structural_count=3, clique_size=3,
                                          outlier_scale=6.0, seed=seed, p=0.12))
