"""Self-attention feature extractor for hyperspectral patches.

Each patch is mapped per pixel to d_model channels, flattened row-major into
a pixel sequence, and a learnable token is appended. The sequence passes
through stacked encoders (multi-head self-attention, head concat + linear
merge, feedforward, post-norm residuals). The token's output is the sample
feature; the token's head-averaged attention row over the pixels - with the
self entry dropped and the rest renormalized - is the W x H attention map.
No positional encodings are used, so pixel permutations permute the map and
leave the feature unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, ShapeError


@dataclass(frozen=True)
class TransformerConfig:
    d_model: int = 100
    n_heads: int = 8
    d_head: int = 64
    d_feed: int = 1024
    n_encoders: int = 2
    patch_size: int = 9

    def __post_init__(self):
        for name in ("d_model", "n_heads", "d_head", "d_feed", "n_encoders", "patch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patch_size % 2 == 0:
            raise ConfigError(f"patch_size must be odd, got {self.patch_size}")

    @property
    def seq_len(self):
        return self.patch_size * self.patch_size + 1


def param_shapes(cfg: TransformerConfig, d_in_source=None, d_in_target=None):
    """Ordered name -> shape map of every learnable tensor.

    Domain mapping layers exist only for the domains whose band count is
    given; encoders and the token are shared across domains.
    """
    shapes: dict[str, tuple] = {}
    if d_in_source is not None:
        shapes["map.source.weight"] = (d_in_source, cfg.d_model)
        shapes["map.source.bias"] = (cfg.d_model,)
    if d_in_target is not None:
        shapes["map.target.weight"] = (d_in_target, cfg.d_model)
        shapes["map.target.bias"] = (cfg.d_model,)
    if not shapes:
        raise ConfigError("at least one of d_in_source / d_in_target is required")
    shapes["token"] = (cfg.d_model,)
    for e in range(cfg.n_encoders):
        for h in range(cfg.n_heads):
            shapes[f"enc{e}.wq{h}"] = (cfg.d_model, cfg.d_head)
            shapes[f"enc{e}.wk{h}"] = (cfg.d_model, cfg.d_head)
            shapes[f"enc{e}.wv{h}"] = (cfg.d_model, cfg.d_head)
        shapes[f"enc{e}.merge.weight"] = (cfg.n_heads * cfg.d_head, cfg.d_model)
        shapes[f"enc{e}.merge.bias"] = (cfg.d_model,)
        shapes[f"enc{e}.ff1.weight"] = (cfg.d_model, cfg.d_feed)
        shapes[f"enc{e}.ff1.bias"] = (cfg.d_feed,)
        shapes[f"enc{e}.ff2.weight"] = (cfg.d_feed, cfg.d_model)
        shapes[f"enc{e}.ff2.bias"] = (cfg.d_model,)
        shapes[f"enc{e}.ln1.gain"] = (cfg.d_model,)
        shapes[f"enc{e}.ln1.bias"] = (cfg.d_model,)
        shapes[f"enc{e}.ln2.gain"] = (cfg.d_model,)
        shapes[f"enc{e}.ln2.bias"] = (cfg.d_model,)
    return shapes


class ModelParams:
    """All learnable tensors, addressable by name."""

    def __init__(self, cfg: TransformerConfig, tensors: dict):
        self.cfg = cfg
        self.tensors = tensors
        expected = param_shapes(cfg, self.d_in("source"), self.d_in("target"))
        if set(expected) != set(tensors):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise ShapeError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if tensors[name].data.shape != shape:
                raise ShapeError(
                    f"parameter {name} has shape {tensors[name].data.shape}, expected {shape}"
                )
        for t in tensors.values():
            if not np.isfinite(t.data).all():
                raise DataError("parameters contain non-finite values")

    def __getitem__(self, name):
        return self.tensors[name]

    def d_in(self, domain):
        weight = self.tensors.get(f"map.{domain}.weight")
        return None if weight is None else weight.data.shape[0]

    @property
    def domains(self):
        return [d for d in ("source", "target") if f"map.{d}.weight" in self.tensors]

    def named_arrays(self):
        """Copy of all tensors as plain arrays (for checkpointing)."""
        return {name: t.data.copy() for name, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, cfg, named, requires_grad=True):
        return cls(cfg, {n: Tensor(a, requires_grad=requires_grad) for n, a in named.items()})


def _as_batch(x, ndim):
    """Promote a single sample to a batch of one; report whether it was single."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim == ndim - 1:
        return (x.reshape((1,) + arr.shape) if isinstance(x, Tensor) else arr[None]), True
    if arr.ndim != ndim:
        raise ShapeError(f"expected {ndim - 1}- or {ndim}-d input, got shape {arr.shape}")
    return x, False


def map_channels(patch, domain, params: ModelParams):
    """Project each pixel's spectral vector to d_model channels (1x1 affine)."""
    weight = params.tensors.get(f"map.{domain}.weight")
    if weight is None:
        raise ShapeError(f"model has no mapping layer for domain {domain!r}")
    bias = params[f"map.{domain}.bias"]
    batch, single = _as_batch(patch, 4)
    arr = batch.data if isinstance(batch, Tensor) else batch
    b, w, h, d_in = arr.shape
    if d_in != weight.data.shape[0]:
        raise ShapeError(
            f"patch has {d_in} bands but the {domain} mapping expects {weight.data.shape[0]}"
        )
    flat = ad.reshape(ad.as_tensor(batch), (b, w * h, d_in))
    mapped = ad.matmul(flat, weight) + bias
    mapped = ad.reshape(mapped, (b, w, h, params.cfg.d_model))
    return mapped[0] if single else mapped


def build_sequence(mapped, params: ModelParams):
    """Flatten pixels row-major and append the learnable token as the last item."""
    batch, single = _as_batch(mapped, 4)
    batch = ad.as_tensor(batch)
    b, w, h, d = batch.data.shape
    pixels = ad.reshape(batch, (b, w * h, d))
    token = ad.broadcast_to(ad.reshape(params["token"], (1, 1, d)), (b, 1, d))
    seq = ad.concat([pixels, token], axis=1)
    return seq[0] if single else seq


def encoder_forward(seq, params: ModelParams, encoder_index):
    """One encoder block; returns the new sequence and head-averaged attention."""
    cfg = params.cfg
    batch, single = _as_batch(seq, 3)
    x = ad.as_tensor(batch)
    prefix = f"enc{encoder_index}"
    scale = math.sqrt(cfg.d_head)
    head_outputs = []
    attn_sum = None
    for h in range(cfg.n_heads):
        q = ad.matmul(x, params[f"{prefix}.wq{h}"])
        k = ad.matmul(x, params[f"{prefix}.wk{h}"])
        v = ad.matmul(x, params[f"{prefix}.wv{h}"])
        attn = ad.softmax_rows(ad.matmul(q, ad.transpose_last(k)), scale=scale)
        head_outputs.append(ad.matmul(attn, v))
        attn_sum = attn if attn_sum is None else attn_sum + attn
    merged = ad.matmul(ad.concat(head_outputs, axis=-1), params[f"{prefix}.merge.weight"])
    merged = merged + params[f"{prefix}.merge.bias"]
    x1 = ad.layer_norm(x + merged, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])
    hidden = ad.relu(ad.matmul(x1, params[f"{prefix}.ff1.weight"]) + params[f"{prefix}.ff1.bias"])
    ff = ad.matmul(hidden, params[f"{prefix}.ff2.weight"]) + params[f"{prefix}.ff2.bias"]
    x2 = ad.layer_norm(x1 + ff, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"])
    attn_mean = attn_sum * (1.0 / cfg.n_heads)
    if single:
        return x2[0], attn_mean[0]
    return x2, attn_mean


def extract_features_and_attention(patches, domain, params: ModelParams):
    """Run the full extractor on a patch batch.

    Returns per-sample feature vectors (the token item of the last encoder
    output) and W x H attention maps (the token's head-averaged attention row
    from the last encoder, self entry dropped, renormalized to sum 1).
    """
    batch, single = _as_batch(patches, 4)
    arr = batch.data if isinstance(batch, Tensor) else batch
    if arr.shape[0] == 0:
        raise DataError("extract_features_and_attention requires a non-empty batch")
    cfg = params.cfg
    if arr.shape[1] != cfg.patch_size or arr.shape[2] != cfg.patch_size:
        raise ShapeError(
            f"patches are {arr.shape[1]}x{arr.shape[2]} but the model expects "
            f"{cfg.patch_size}x{cfg.patch_size}"
        )
    seq = build_sequence(map_channels(batch, domain, params), params)
    attn = None
    for e in range(cfg.n_encoders):
        seq, attn = encoder_forward(seq, params, e)
    n_pixels = cfg.patch_size * cfg.patch_size
    features = seq[:, n_pixels, :]
    token_row = attn[:, n_pixels, :n_pixels]
    token_row = token_row / token_row.sum(axis=-1, keepdims=True)
    maps = ad.reshape(token_row, (arr.shape[0], cfg.patch_size, cfg.patch_size))
    if single:
        return features[0], maps[0]
    return features, maps


def embed_patches(patches, domain, params: ModelParams, batch_size=256):
    """Inference-mode features for many patches, returned as a plain array.

    ``patches`` may be an array or a sequence of per-sample arrays; chunks
    are promoted to float64 one batch at a time to keep memory bounded.
    """
    n = len(patches)
    out = np.empty((n, params.cfg.d_model), dtype=np.float64)
    with ad.no_grad():
        for start in range(0, n, batch_size):
            chunk = np.asarray(patches[start:start + batch_size], dtype=np.float64)
            features, _ = extract_features_and_attention(chunk, domain, params)
            out[start:start + chunk.shape[0]] = features.data
    return out
