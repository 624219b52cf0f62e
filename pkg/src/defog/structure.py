"""Frozen structure encoder and self-similarity descriptor.

A small ViT-style patch encoder stands in for a pretrained feature
extractor: non-overlapping patches are linearly embedded, position-encoded,
and projected by the key matrix of a single attention block. Structure is
represented by the n x n cosine-dissimilarity matrix between patch keys,

    S_ij = 1 - (k_i . k_j) / (|k_i| |k_j|),

and the structure consistency loss is the Frobenius distance between the
descriptors of two images. The encoder weights are fixed at construction
(seed-deterministic) and never receive gradients; images do.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng
from .tensor import Tensor, concat

log = logging.getLogger(__name__)

KEY_NORM_FLOOR = 1e-12
DEFAULT_ENCODER_SEED = 7001


@dataclass
class StructureEncoder:
    """Frozen patch-key extractor.

    Holds the patch embedding, sinusoidal positional embedding switch, and
    one query/key/value projection block; only the key path feeds the
    descriptor. Two encoders with equal seed and config are bit-identical.
    """

    patch_size: int = 8
    key_dim: int = 64
    in_channels: int = 3
    seed: int = DEFAULT_ENCODER_SEED
    use_pos: bool = True
    w_embed: np.ndarray = field(init=False, repr=False)
    b_embed: np.ndarray = field(init=False, repr=False)
    w_q: np.ndarray = field(init=False, repr=False)
    w_k: np.ndarray = field(init=False, repr=False)
    w_v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = Rng(self.seed).split("structure-encoder")
        d = self.key_dim
        flat = self.in_channels * self.patch_size ** 2
        self.w_embed = rng.normal((flat, d), std=1.0 / np.sqrt(flat))
        self.b_embed = np.zeros(d)
        self.w_q = rng.normal((d, d), std=1.0 / np.sqrt(d))
        self.w_k = rng.normal((d, d), std=1.0 / np.sqrt(d))
        self.w_v = rng.normal((d, d), std=1.0 / np.sqrt(d))

    def weight_state(self) -> dict[str, np.ndarray]:
        return {"w_embed": self.w_embed, "b_embed": self.b_embed,
                "w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v}

    def grid_shape(self, h: int, w: int) -> tuple[int, int]:
        p = self.patch_size
        return (h + p - 1) // p, (w + p - 1) // p

    def positional_embedding(self, gh: int, gw: int) -> np.ndarray:
        """Fixed 2-d sin/cos table, (gh*gw, key_dim)."""
        d = self.key_dim
        q = d // 4
        freqs = 1.0 / (100.0 ** (np.arange(q) / max(q, 1)))
        rows = np.arange(gh)[:, None] * freqs[None, :]
        cols = np.arange(gw)[:, None] * freqs[None, :]
        row_part = np.concatenate([np.sin(rows), np.cos(rows)], axis=1)  # (gh, d/2)
        col_part = np.concatenate([np.sin(cols), np.cos(cols)], axis=1)
        pos = np.zeros((gh, gw, d))
        pos[:, :, :2 * q] = row_part[:, None, :]
        pos[:, :, 2 * q:4 * q] = col_part[None, :, :]
        return 0.1 * pos.reshape(gh * gw, d)


def extract_keys(image: Tensor | np.ndarray, enc: StructureEncoder) -> Tensor:
    """Patch keys of an image, (n, key_dim); differentiable w.r.t. the image.

    Accepts (H, W), (1, H, W) or (3, H, W); grayscale is replicated to the
    encoder's channel count. Spatial dims are zero-padded up to a multiple
    of the patch size.
    """
    t = image if isinstance(image, Tensor) else Tensor(image)
    if t.data.ndim == 2:
        t = t.reshape(1, *t.data.shape)
    c, h, w = t.data.shape
    p = enc.patch_size
    if h < p or w < p:
        raise ValueError(f"extract_keys: image {h}x{w} smaller than one {p}px patch")
    if c == 1 and enc.in_channels == 3:
        t = concat([t, t, t], axis=0)
    elif c != enc.in_channels:
        raise ValueError(f"extract_keys: {c}-channel image vs {enc.in_channels}-channel encoder")
    if h % p or w % p:
        # zero-pad bottom/right through the graph so grads still flow
        pad_h = (p - h % p) % p
        pad_w = (p - w % p) % p
        if pad_h:
            t = concat([t, Tensor(np.zeros((enc.in_channels, pad_h, w)))], axis=1)
        if pad_w:
            t = concat([t, Tensor(np.zeros((enc.in_channels, h + pad_h, pad_w)))], axis=2)
        h, w = h + pad_h, w + pad_w
    gh, gw = h // p, w // p
    # (C,H,W) -> (gh, gw, C, p, p) -> (n, C*p*p)
    patches = (t.reshape(enc.in_channels, gh, p, gw, p)
                .transpose((1, 3, 0, 2, 4))
                .reshape(gh * gw, enc.in_channels * p * p))
    x = patches @ Tensor(enc.w_embed) + Tensor(enc.b_embed)
    if enc.use_pos:
        x = x + Tensor(enc.positional_embedding(gh, gw))
    return x @ Tensor(enc.w_k)


def self_similarity(keys: Tensor | np.ndarray) -> Tensor:
    """Cosine-dissimilarity matrix S_ij = 1 - cos(k_i, k_j), shape (n, n).

    Rows with norm below 1e-12 are lifted to the first basis vector so the
    cosine stays defined; occurrences are logged.
    """
    k = keys if isinstance(keys, Tensor) else Tensor(keys)
    if k.data.ndim != 2:
        raise ValueError(f"self_similarity: expected (n, d) keys, got {k.data.shape}")
    norms = np.sqrt((k.data ** 2).sum(axis=1))
    fallback = norms <= KEY_NORM_FLOOR
    n_fallback = int(fallback.sum())
    if n_fallback:
        log.warning("self_similarity: %d zero-norm keys lifted to the unit fallback", n_fallback)
        lift = np.zeros_like(k.data)
        lift[fallback] = -k.data[fallback]
        lift[fallback, 0] += 1.0
        k = k + Tensor(lift)
    sq = (k * k).sum(axis=1, keepdims=True)
    inv_norm = 1.0 / sq.sqrt()
    unit = k * inv_norm
    return 1.0 - unit @ unit.transpose((1, 0))


def structure_loss(out_rgb: Tensor | np.ndarray, out_gray: Tensor | np.ndarray,
                   enc: StructureEncoder) -> Tensor:
    """Frobenius distance between the two images' descriptors (Eq-style).

    Differentiable w.r.t. both images; the grayscale image is channel
    replicated inside extract_keys so both pass through the same encoder.
    """
    rgb_t = out_rgb if isinstance(out_rgb, Tensor) else Tensor(out_rgb)
    gray_t = out_gray if isinstance(out_gray, Tensor) else Tensor(out_gray)
    if rgb_t.data.shape[-2:] != gray_t.data.shape[-2:]:
        raise ValueError(f"structure_loss: spatial sizes differ, "
                         f"{rgb_t.data.shape} vs {gray_t.data.shape}")
    s_rgb = self_similarity(extract_keys(rgb_t, enc))
    s_gray = self_similarity(extract_keys(gray_t, enc))
    diff = s_rgb - s_gray
    return (diff * diff).sum().sqrt()


def structure_loss_to_target(out_rgb: Tensor, s_target: np.ndarray,
                             enc: StructureEncoder) -> Tensor:
    """Structure loss against a precomputed constant descriptor."""
    s_rgb = self_similarity(extract_keys(out_rgb, enc))
    diff = s_rgb - Tensor(s_target)
    return (diff * diff).sum().sqrt()


def pca_keys_rgb(keys: np.ndarray | Tensor, grid: tuple[int, int]) -> np.ndarray:
    """Top-3 principal components of the keys as an RGB patch-grid image.

    Components are min-max normalized to [0, 1]; degenerate directions
    (covariance rank < 3) render as flat 0.5 channels.
    """
    k = keys.data if isinstance(keys, Tensor) else np.asarray(keys, dtype=np.float64)
    n, d = k.shape
    if n < 3:
        raise ValueError(f"pca_keys_rgb: need at least 3 keys, got {n}")
    if grid[0] * grid[1] != n:
        raise ValueError(f"pca_keys_rgb: grid {grid} does not hold {n} keys")
    centered = k - k.mean(axis=0)
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:3]
    out = np.full((n, 3), 0.5)
    scale = float(evals.max()) if evals.size else 0.0
    for ch, idx in enumerate(order):
        if evals[idx] <= max(scale, 1.0) * 1e-12:
            continue  # rank-degenerate: leave the 0.5 fill
        proj = centered @ evecs[:, idx]
        lo, hi = proj.min(), proj.max()
        if hi - lo < 1e-15:
            continue
        out[:, ch] = (proj - lo) / (hi - lo)
    return out.reshape(grid[0], grid[1], 3)
