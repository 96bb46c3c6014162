import math

import numpy as np
import pytest

from janus import autodiff as ad
from janus import hypgeom as hg
from janus import losses as L
from janus.model import DualEmbedding


def random_embedding(rng, n, k=3, spread=1.5):
    hs, hg_ = rng.standard_normal((n, k)), rng.standard_normal((n, k))
    ths, thg = rng.standard_normal((n, k)) * spread, rng.standard_normal((n, k)) * spread
    t = ad.Tensor
    return DualEmbedding(t(hs), t(hg_), t(hg.exp_origin(ths)), t(hg.exp_origin(thg)), t(ths), t(thg))


def brute_force_cl(emb, tau):
    """Double loop over the per-node contrastive terms."""
    Hs, Hg, Hhs, Hhg = (x.data for x in (emb.Hs, emb.Hg, emb.Hhs, emb.Hhg))
    n = len(Hs)

    def D(i, j):  # g-view node i against s-view node j
        return hg.product_distance(Hg[i], Hhg[i], Hs[j], Hhs[j])

    total = 0.0
    per = []
    for i in range(n):
        num1 = math.exp(-D(i, i) / tau)
        den1 = sum(math.exp(-D(i, j) / tau) for j in range(n) if j != i)
        den2 = sum(math.exp(-D(j, i) / tau) for j in range(n) if j != i)
        l1 = -math.log(num1 / den1)
        l2 = -math.log(num1 / den2)
        per.append((l1 + l2) / (2 * n))
        total += per[-1]
    return total, np.array(per)


@pytest.mark.parametrize("n", [2, 3, 7, 30])
def test_contrastive_matches_brute_force(rng, n):
    emb = random_embedding(rng, n)
    cl, per = L.contrastive_loss(emb, 0.6)
    ref, ref_per = brute_force_cl(emb, 0.6)
    assert cl.item() == pytest.approx(ref, abs=1e-9)
    np.testing.assert_allclose(per.data, ref_per, atol=1e-9)
    assert per.data.sum() == pytest.approx(cl.item(), abs=1e-9)


def test_contrastive_two_equal_nodes_is_zero():
    t = ad.Tensor
    z = np.zeros((2, 3))
    o = np.tile(hg.origin(3), (2, 1))
    cl, per = L.contrastive_loss(DualEmbedding(t(z), t(z), t(o), t(o), t(z), t(z)), 0.6)
    assert cl.item() == 0.0 and not per.data.any()


def test_contrastive_needs_two_nodes(rng):
    with pytest.raises(ValueError):
        L.contrastive_loss(random_embedding(rng, 1), 0.6)


def test_contrastive_temperature_ratio_invariance(rng):
    # scaling every distance by c and tau by c leaves the loss unchanged
    emb = random_embedding(rng, 6)
    P = L.product_distance_matrix(emb.Hg, emb.Hhg, emb.Hs, emb.Hhs).data

    def from_matrix(P, tau):
        n = len(P)
        off = ~np.eye(n, dtype=bool)
        neg = np.where(off, -P / tau, -np.inf)
        l1 = np.diagonal(P) / tau + np.log(np.exp(neg).sum(1))
        l2 = np.diagonal(P) / tau + np.log(np.exp(neg).sum(0))
        return ((l1 + l2) / (2 * n)).sum()

    assert from_matrix(P, 0.6) == pytest.approx(L.contrastive_loss(emb, 0.6)[0].item(), abs=1e-12)
    assert from_matrix(2.5 * P, 1.5) == pytest.approx(from_matrix(P, 0.6), abs=1e-12)


def test_product_distance_matrix_matches_pointwise(rng):
    emb = random_embedding(rng, 5)
    P = L.product_distance_matrix(emb.Hg, emb.Hhg, emb.Hs, emb.Hhs).data
    for i in range(5):
        for j in range(5):
            ref = hg.product_distance(emb.Hg.data[i], emb.Hhg.data[i], emb.Hs.data[j], emb.Hhs.data[j])
            assert P[i, j] == pytest.approx(ref, abs=1e-12)


def test_adjacency_loss_example():
    half = np.full((2, 2), 0.5)
    adj, per = L.adjacency_loss(np.eye(2), (half, half, half, half))
    assert adj.item() == 4.0
    assert np.array_equal(per.data, [2.0, 2.0])


def test_adjacency_loss_decomposes(rng):
    A = (rng.random((9, 9)) < 0.3).astype(float)
    A = np.triu(A, 1) + np.triu(A, 1).T
    recon = tuple(rng.random((9, 9)) for _ in range(4))
    adj, per = L.adjacency_loss(A, recon)
    assert per.data.sum() == pytest.approx(adj.item(), abs=1e-9)
    assert adj.item() == pytest.approx(sum(((A - r) ** 2).sum() for r in recon), rel=1e-14)
    with pytest.raises(ValueError):
        L.adjacency_loss(A, (np.zeros((3, 3)),) * 4)


def _node_inputs(rng, n=5, ds=3, dg=4):
    Xs, Xg = rng.standard_normal((n, ds)), rng.standard_normal((n, dg))
    Xs_hat, Xg_hat = hg.lift_to_hyperboloid(Xs), hg.lift_to_hyperboloid(Xg)
    Rs, Rg = rng.standard_normal((n, ds)), rng.standard_normal((n, dg))
    Rhs, Rhg = hg.exp_origin(rng.standard_normal((n, ds))), hg.exp_origin(rng.standard_normal((n, dg)))
    return Xs, Xg, Xs_hat, Xg_hat, Rs, Rg, Rhs, Rhg


def test_node_loss_matches_hand_rolled_formula(rng):
    Xs, Xg, Xs_hat, Xg_hat, Rs, Rg, Rhs, Rhg = _node_inputs(rng)
    node, per = L.node_feature_loss(Xs, Xg, Xs_hat, Xg_hat, Rs, Rg, Rhs, Rhg)
    n = len(Xs)
    d_g = sum(math.dist(Xg[i], Rg[i]) for i in range(n))
    d_s = sum(math.dist(Xs[i], Rs[i]) for i in range(n))
    dh_g = sum(hg.geodesic_dist(Xg_hat[i], Rhg[i]) for i in range(n))
    dh_s = sum(hg.geodesic_dist(Xs_hat[i], Rhs[i]) for i in range(n))
    e, h = d_g + d_s, dh_g + dh_s
    assert node.item() == pytest.approx(0.5 * (e / (1 + e) + h / (1 + h)), abs=1e-12)
    assert node.item() < 1
    for i in range(n):
        ei = math.dist(Xg[i], Rg[i]) + math.dist(Xs[i], Rs[i])
        hi = hg.geodesic_dist(Xg_hat[i], Rhg[i]) + hg.geodesic_dist(Xs_hat[i], Rhs[i])
        assert per[i] == pytest.approx(0.5 * (ei / (1 + ei) + hi / (1 + hi)), abs=1e-12)


def test_node_loss_perfect_reconstruction_is_zero(rng):
    Xs, Xg, Xs_hat, Xg_hat, *_ = _node_inputs(rng)
    node, per = L.node_feature_loss(Xs, Xg, Xs_hat, Xg_hat, Xs, Xg, Xs_hat, Xg_hat)
    # arcosh(1 + k ulp) ~ sqrt(2k) 1e-8: a point's geodesic to itself sits at that floor
    assert node.item() < 1e-6
    assert per.max() < 1e-6
    os_, og = np.tile(hg.origin(3), (5, 1)), np.tile(hg.origin(4), (5, 1))
    exact, _ = L.node_feature_loss(Xs, Xg, os_, og, Xs, Xg, os_, og)
    assert exact.item() == 0.0


def _parts(rng, n=6):
    emb = random_embedding(rng, n)
    cl, pcl = L.contrastive_loss(emb, 0.6)
    half = np.full((n, n), 0.5)
    adj, padj = L.adjacency_loss(np.eye(n), (half,) * 4)
    node, pnode = L.node_feature_loss(*_node_inputs(rng, n))
    return L.LossParts(cl, pcl, adj, padj, node, pnode)


def test_total_loss_combinations(rng):
    parts = _parts(rng)
    cl, adj, node = parts.cl.item(), parts.adj.item(), parts.node.item()
    assert L.total_loss(parts, L.LossWeights(0.0, 0.0)).total == cl
    assert L.total_loss(parts, L.LossWeights(0.0, 1.0)).total == pytest.approx(cl + node, abs=1e-15)
    b1 = L.total_loss(parts, L.LossWeights(0.3, 1.0))
    b2 = L.total_loss(parts, L.LossWeights(0.6, 1.0))
    assert b2.total - b1.total == pytest.approx(0.3 * adj, abs=1e-9)
    assert b1.total == pytest.approx(cl + 0.3 * adj + node, abs=1e-9)
    assert b1.objective.item() == pytest.approx(b1.total, abs=1e-9)
    assert b1.per_node_cl.sum() == pytest.approx(b1.cl, abs=1e-9)
    assert b1.per_node_adj.sum() == pytest.approx(b1.adj, abs=1e-9)


def test_scores_sum_and_definition(rng):
    parts = _parts(rng)
    w = L.LossWeights(0.0, 1.0)
    bd = L.total_loss(parts, w)
    s = L.anomaly_scores(bd, w)
    assert np.array_equal(s, bd.per_node_cl + bd.per_node_node)
    assert s.sum() == pytest.approx(bd.cl + bd.per_node_node.sum(), abs=1e-9)


def test_scores_ignore_adjacency_reconstructions(rng):
    parts = _parts(rng)
    w = L.LossWeights(0.0, 1.0)
    base = L.anomaly_scores(L.total_loss(parts, w), w)
    n = len(base)
    shifted = L.LossParts(parts.cl, parts.per_node_cl, *L.adjacency_loss(
        np.eye(n), (np.full((n, n), 0.9),) * 4), parts.node, parts.per_node_node)
    assert np.array_equal(L.anomaly_scores(L.total_loss(shifted, w), w), base)


def test_degenerate_embeddings_give_equal_scores():
    n = 5
    t = ad.Tensor
    z = np.zeros((n, 3))
    o = np.tile(hg.origin(3), (n, 1))
    cl, pcl = L.contrastive_loss(DualEmbedding(t(z), t(z), t(o), t(o), t(z), t(z)), 0.6)
    X = np.ones((n, 2))
    Xh = hg.lift_to_hyperboloid(X)
    node, pnode = L.node_feature_loss(X, X, Xh, Xh, X, X, Xh, Xh)
    w = L.LossWeights()
    s = L.anomaly_scores(L.total_loss(L.LossParts(cl, pcl, None, None, node, pnode), w), w)
    assert np.all(s == s[0])


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        L.LossWeights(tau=0.0)
    with pytest.raises(ValueError):
        L.LossWeights(lambda1=-1.0)
