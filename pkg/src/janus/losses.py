"""Contrastive, adjacency and feature-reconstruction objectives and node scores."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .model import DualEmbedding, ForwardPass

# Minkowski signature, applied to the left factor before a Gram product
def _signature(width: int) -> np.ndarray:
    j = np.ones(width)
    j[0] = -1.0
    return j


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.01
    lambda2: float = 1.0
    tau: float = 0.6

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be nonnegative")


@dataclass
class LossParts:
    """Differentiable loss terms; any term may be None when not computed."""

    cl: ad.Tensor | None = None
    per_node_cl: ad.Tensor | None = None
    adj: ad.Tensor | None = None
    per_node_adj: ad.Tensor | None = None
    node: ad.Tensor | None = None
    per_node_node: np.ndarray | None = None


@dataclass
class LossBreakdown:
    cl: float
    adj: float
    node: float
    total: float
    per_node_cl: np.ndarray
    per_node_node: np.ndarray
    per_node_adj: np.ndarray
    objective: ad.Tensor | None = field(default=None, repr=False, compare=False)


def pairwise_geodesic(X, Y) -> ad.Tensor:
    """``G[i, j] = d_L(x_i, y_j)`` for two stacks of hyperboloid points."""
    X, Y = ad.as_tensor(X), ad.as_tensor(Y)
    gram = (X * _signature(X.shape[1])) @ Y.T
    return ad.arcosh(-gram)


def rowwise_geodesic(X, Y) -> ad.Tensor:
    X, Y = ad.as_tensor(X), ad.as_tensor(Y)
    inner = (X * Y * _signature(X.shape[1])).sum(axis=1)
    return ad.arcosh(-inner)


def product_distance_matrix(Ea, Ha, Eb, Hb) -> ad.Tensor:
    """``P[i, j] = 0.5 * (b(|Ea_i - Eb_j|) + b(d_L(Ha_i, Hb_j)))``."""
    de = ad.pairwise_dist(Ea, Eb)
    dh = pairwise_geodesic(Ha, Hb)
    return ad.scale(ad.bounded(de) + ad.bounded(dh), 0.5)


def contrastive_loss(emb: DualEmbedding, tau: float):
    """Cross-view contrastive loss with negatives only in the denominator.

    Returns ``(cl, per_node_cl)`` as tensors; ``per_node_cl`` sums to ``cl``.
    """
    n = emb.n
    if n < 2:
        raise ValueError("contrastive loss needs at least two nodes")
    if not tau > 0:
        raise ValueError("tau must be positive")
    # P[i, j] = D(h^g_i, hh^g_i, h^s_j, hh^s_j); the swapped-view matrix is P.T
    P = product_distance_matrix(emb.Hg, emb.Hhg, emb.Hs, emb.Hhs)
    pos = ad.scale(ad.diagonal(P), 1.0 / tau)
    neg = ad.scale(P, -1.0 / tau)
    off = ~np.eye(n, dtype=bool)
    l1 = pos + ad.logsumexp(neg, axis=1, mask=off)
    l2 = pos + ad.logsumexp(neg, axis=0, mask=off)
    per_node = ad.scale(l1 + l2, 1.0 / (2 * n))
    return per_node.sum(), per_node


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=np.float64)


def adjacency_loss(A, recon):
    """Sum of squared Frobenius errors of the four reconstructions.

    Returns ``(adj, per_node_adj)``; row ``i`` of each error goes to node ``i``.
    """
    A = _dense(A)
    per_node = None
    for R in recon:
        R = ad.as_tensor(R)
        if R.shape != A.shape:
            raise ValueError(f"reconstruction shape {R.shape} != adjacency {A.shape}")
        rows = ad.square(R - A).sum(axis=1)
        per_node = rows if per_node is None else per_node + rows
    return per_node.sum(), per_node


def node_feature_loss(Xs, Xg, Xs_hat, Xg_hat, Rs, Rg, Rhs, Rhg):
    """Feature reconstruction loss combined through the bounded product metric.

    The global term bounds the summed row distances; the per-node vector
    bounds each node's own distances, so it does not sum to the global term.
    Returns ``(node, per_node_node)``.
    """
    for X, R in ((Xs, Rs), (Xg, Rg), (Xs_hat, Rhs), (Xg_hat, Rhg)):
        if tuple(np.shape(X)) != tuple(ad.as_tensor(R).shape):
            raise ValueError(f"shape mismatch {np.shape(X)} vs {ad.as_tensor(R).shape}")
    e_rows = ad.row_norm(ad.as_tensor(Rg) - Xg) + ad.row_norm(ad.as_tensor(Rs) - Xs)
    h_rows = rowwise_geodesic(Xg_hat, Rhg) + rowwise_geodesic(Xs_hat, Rhs)
    node = ad.scale(ad.bounded(e_rows.sum()) + ad.bounded(h_rows.sum()), 0.5)
    e, h = e_rows.data, h_rows.data
    per_node = 0.5 * (e / (1.0 + e) + h / (1.0 + h))
    return node, per_node


def compute_parts(fp: ForwardPass, A, views, w: LossWeights, *, use_cl: bool = True) -> LossParts:
    parts = LossParts()
    if use_cl:
        parts.cl, parts.per_node_cl = contrastive_loss(fp.emb, w.tau)
    rc = fp.recon
    if rc is not None:
        if rc.adj is not None:
            parts.adj, parts.per_node_adj = adjacency_loss(A, rc.adj)
        parts.node, parts.per_node_node = node_feature_loss(
            views.Xs, views.Xg, fp.Xs_hat, fp.Xg_hat, rc.Rs, rc.Rg, rc.Rhs, rc.Rhg)
    return parts


def _value(t) -> float:
    return 0.0 if t is None else t.item()


def _vector(t, n) -> np.ndarray:
    if t is None:
        return np.zeros(n)
    return np.array(t.data if isinstance(t, ad.Tensor) else t, dtype=np.float64)


def total_loss(parts: LossParts, w: LossWeights, n: int | None = None) -> LossBreakdown:
    """``cl + lambda1 * adj + lambda2 * node`` with all per-node vectors attached."""
    if n is None:
        for t in (parts.per_node_cl, parts.per_node_adj, parts.per_node_node):
            if t is not None:
                n = len(t.data if isinstance(t, ad.Tensor) else t)
                break
    terms = []
    if parts.cl is not None:
        terms.append(parts.cl)
    if parts.adj is not None and w.lambda1 != 0:
        terms.append(ad.scale(parts.adj, w.lambda1))
    if parts.node is not None and w.lambda2 != 0:
        terms.append(ad.scale(parts.node, w.lambda2))
    objective = terms[0] if terms else ad.Tensor(0.0)
    for t in terms[1:]:
        objective = objective + t
    cl, adj, node = _value(parts.cl), _value(parts.adj), _value(parts.node)
    return LossBreakdown(
        cl=cl, adj=adj, node=node,
        total=cl + w.lambda1 * adj + w.lambda2 * node,
        per_node_cl=_vector(parts.per_node_cl, n),
        per_node_node=_vector(parts.per_node_node, n),
        per_node_adj=_vector(parts.per_node_adj, n),
        objective=objective,
    )


def anomaly_scores(breakdown: LossBreakdown, w: LossWeights) -> np.ndarray:
    """Per-node loss with the adjacency term dropped; higher is more anomalous."""
    return breakdown.per_node_cl + w.lambda2 * breakdown.per_node_node
