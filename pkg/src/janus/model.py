"""Euclidean and hyperbolic graph autoencoder towers.

There are eight independent towers: an encoder and a decoder for each
(geometry, view) pair. Hyperbolic towers run the same propagation
recurrence on tangent coordinates at the origin and map outputs back to the
hyperboloid with ``exp_o``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import hypgeom
from .graph import Graph, NodeViews, gin_operator, normalized_adjacency

BACKBONES = ("norm_conv", "gin")
ENCODERS = ("enc_euc_s", "enc_euc_g", "enc_hyp_s", "enc_hyp_g")
DECODERS = ("dec_euc_s", "dec_euc_g", "dec_hyp_s", "dec_hyp_g")
TOWERS = ENCODERS + DECODERS


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 3
    hidden: int = 32
    backbone: str = "norm_conv"
    activation: str = "relu"

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.activation != "relu":
            raise ValueError("only the relu activation is supported")


@dataclass
class DualEmbedding:
    """Node embeddings in both geometries.

    ``Hhs``/``Hhg`` are hyperboloid points (ambient width ``k + 1``);
    ``Ths``/``Thg`` are their tangent coordinates at the origin.
    """

    Hs: ad.Tensor
    Hg: ad.Tensor
    Hhs: ad.Tensor
    Hhg: ad.Tensor
    Ths: ad.Tensor
    Thg: ad.Tensor

    @property
    def n(self) -> int:
        return self.Hs.shape[0]


@dataclass
class Reconstruction:
    adj: tuple[ad.Tensor, ad.Tensor, ad.Tensor, ad.Tensor] | None
    Rs: ad.Tensor
    Rg: ad.Tensor
    Rhs: ad.Tensor
    Rhg: ad.Tensor


@dataclass
class ForwardPass:
    emb: DualEmbedding
    Xs_hat: np.ndarray
    Xg_hat: np.ndarray
    recon: Reconstruction | None


def operator_for(g: Graph, backbone: str) -> sp.csr_matrix:
    return gin_operator(g) if backbone == "gin" else normalized_adjacency(g)


def tower_widths(tower: str, view_dim: int, cfg: EncoderConfig) -> list[int]:
    inner = [cfg.hidden] * (cfg.layers - 1)
    if tower.startswith("enc"):
        return [view_dim] + inner + [cfg.hidden]
    return [cfg.hidden] + inner + [view_dim]


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(ds: int, dg: int, cfg: EncoderConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded Glorot-uniform weights for all eight towers."""
    rng = np.random.default_rng(seed)
    params = {}
    for tower in TOWERS:
        widths = tower_widths(tower, ds if tower.endswith("_s") else dg, cfg)
        for layer, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            params[f"{tower}.{layer}.W"] = _glorot(rng, a, b)
            if cfg.backbone == "gin":
                params[f"{tower}.{layer}.W2"] = _glorot(rng, b, b)
    return params


def tower_params(params: dict, tower: str) -> dict:
    prefix = tower + "."
    return {k: v for k, v in params.items() if k.startswith(prefix)}


def run_tower(x, op: sp.csr_matrix, params: dict, tower: str, cfg: EncoderConfig) -> ad.Tensor:
    h = ad.as_tensor(x)
    for layer in range(cfg.layers):
        w = ad.as_tensor(params[f"{tower}.{layer}.W"])
        if h.shape[1] != w.shape[0]:
            raise ValueError(f"{tower} layer {layer}: input width {h.shape[1]}, weight {w.shape}")
        if cfg.backbone == "gin":
            h = ad.relu(ad.propagate(op, h) @ w) @ ad.as_tensor(params[f"{tower}.{layer}.W2"])
        else:
            h = ad.propagate(op, h @ w)
        if layer < cfg.layers - 1:
            h = ad.relu(h)
    return h


def lift_to_hyperboloid(X) -> np.ndarray:
    return hypgeom.lift_to_hyperboloid(X)


def encode_euclidean(views: NodeViews, op, cfg: EncoderConfig, params: dict):
    hs = run_tower(views.Xs, op, params, "enc_euc_s", cfg)
    hg = run_tower(views.Xg, op, params, "enc_euc_g", cfg)
    return hs, hg


def encode_hyperbolic(views: NodeViews, op, cfg: EncoderConfig, params: dict, lifted=None):
    """Returns ``(Hhs, Hhg, Ths, Thg)``."""
    xs_hat, xg_hat = lifted if lifted is not None else (
        lift_to_hyperboloid(views.Xs), lift_to_hyperboloid(views.Xg))
    ths = run_tower(hypgeom.log_origin(xs_hat), op, params, "enc_hyp_s", cfg)
    thg = run_tower(hypgeom.log_origin(xg_hat), op, params, "enc_hyp_g", cfg)
    return ad.exp_origin(ths), ad.exp_origin(thg), ths, thg


def decode_features(H, op, cfg: EncoderConfig, params: dict, tower: str) -> ad.Tensor:
    """Run a decoder tower. Hyperbolic decoders take tangent coordinates and
    return hyperboloid points."""
    out = run_tower(H, op, params, tower, cfg)
    if tower.startswith("dec_hyp"):
        return ad.exp_origin(out)
    return out


def reconstruct_adjacency(H) -> ad.Tensor:
    H = ad.as_tensor(H)
    return ad.sigmoid(H @ H.T)


def forward(views: NodeViews, op, cfg: EncoderConfig, params: dict, *,
            decode: bool = True, adjacency: bool = True) -> ForwardPass:
    xs_hat, xg_hat = lift_to_hyperboloid(views.Xs), lift_to_hyperboloid(views.Xg)
    hs, hg = encode_euclidean(views, op, cfg, params)
    hhs, hhg, ths, thg = encode_hyperbolic(views, op, cfg, params, (xs_hat, xg_hat))
    emb = DualEmbedding(hs, hg, hhs, hhg, ths, thg)
    recon = None
    if decode:
        adj = None
        if adjacency:
            adj = (reconstruct_adjacency(hs), reconstruct_adjacency(hg),
                   reconstruct_adjacency(ths), reconstruct_adjacency(thg))
        recon = Reconstruction(
            adj,
            decode_features(hs, op, cfg, params, "dec_euc_s"),
            decode_features(hg, op, cfg, params, "dec_euc_g"),
            decode_features(ths, op, cfg, params, "dec_hyp_s"),
            decode_features(thg, op, cfg, params, "dec_hyp_g"),
        )
    return ForwardPass(emb, xs_hat, xg_hat, recon)


# ------------------------------------------------------------------ checkpoints

def _fmt(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def save_checkpoint(path, params: dict, meta: dict) -> Path:
    """Write a manifest plus one little-endian float64 buffer per parameter."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {_fmt(v)}" for k, v in meta.items()]
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        fname = f"{name}.f64"
        (path / fname).write_bytes(arr.tobytes(order="C"))
        lines.append(f"param.{name} = {'x'.join(map(str, arr.shape))} {fname}")
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    manifest = path / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest}")
    params, meta = {}, {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        if key.startswith("param."):
            shape_s, fname = value.split()
            shape = tuple(int(s) for s in shape_s.split("x"))
            buf = np.frombuffer((path / fname).read_bytes(), dtype="<f8")
            params[key[len("param."):]] = buf.reshape(shape).astype(np.float64)
        else:
            meta[key] = value
    return params, meta
