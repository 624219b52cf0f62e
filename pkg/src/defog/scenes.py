"""Procedural RGB-D scenes and attenuation fields.

Stands in for an external RGB+depth corpus: each sample is a value-noise
textured background plane with 2-5 textured rectangles/ellipses at distinct
depths, painted far to near so the depth map respects occlusion. Attenuation
fields come in two families so that a held-out "real" fog process can differ
from the paired synthetic one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng


@dataclass
class SceneConfig:
    size: int = 64
    d_max: float = 4.0
    min_objects: int = 2
    max_objects: int = 5
    cell_min: int = 6
    cell_max: int = 24


@dataclass
class BetaConfig:
    lo: float = 0.2
    hi: float = 1.2
    mode: str = "nonuniform"     # "uniform" draws one constant per field
    family: str = "smooth"       # "turbulent" is the held-out real-fog family
    octaves: int = 3
    base_cell: int = 32


@dataclass
class SceneSample:
    clear: np.ndarray   # H x W x 3 in [0, 1]
    depth: np.ndarray   # H x W in [0, d_max]
    seed: int


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def value_noise(rng: Rng, h: int, w: int, cell: float) -> np.ndarray:
    """Smoothly interpolated lattice noise in [0, 1]."""
    cell = max(float(cell), 1.0)
    gh = int(np.ceil(h / cell)) + 2
    gw = int(np.ceil(w / cell)) + 2
    grid = rng.uniform((gh, gw))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    yi = np.floor(ys).astype(int)
    xi = np.floor(xs).astype(int)
    fy = _fade(ys - yi)[:, None]
    fx = _fade(xs - xi)[None, :]
    v00 = grid[np.ix_(yi, xi)]
    v01 = grid[np.ix_(yi, xi + 1)]
    v10 = grid[np.ix_(yi + 1, xi)]
    v11 = grid[np.ix_(yi + 1, xi + 1)]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return top + fy * (bot - top)


def multi_octave_noise(rng: Rng, h: int, w: int, base_cell: float,
                       octaves: int, ridged: bool = False) -> np.ndarray:
    """Sum of noise octaves, min-max normalized to [0, 1]."""
    out = np.zeros((h, w))
    amp = 1.0
    cell = float(base_cell)
    for _ in range(max(octaves, 1)):
        layer = value_noise(rng, h, w, cell)
        if ridged:
            layer = 1.0 - np.abs(2.0 * layer - 1.0)
        out += amp * layer
        amp *= 0.5
        cell = max(cell / 2.0, 2.0)
    lo, hi = out.min(), out.max()
    if hi - lo < 1e-12:
        return np.full((h, w), 0.5)
    return (out - lo) / (hi - lo)


def _textured_color(rng: Rng, h: int, w: int, cell: float) -> np.ndarray:
    """Noise-blended field between two random colors, kept off 0 and 1."""
    c0 = rng.uniform((3,), 0.05, 0.95)
    c1 = rng.uniform((3,), 0.05, 0.95)
    n = value_noise(rng, h, w, cell)[..., None]
    return np.clip(c0 + (c1 - c0) * n, 0.02, 0.98)


def generate_scene(seed: int, cfg: SceneConfig | None = None) -> SceneSample:
    """Layered scene with occlusion-consistent depth, deterministic per seed."""
    cfg = cfg or SceneConfig()
    rng = Rng(seed).split("scene")
    s = cfg.size
    clear = _textured_color(rng, s, s, rng.uniform((), cfg.cell_max / 2, cfg.cell_max))
    depth = np.full((s, s), cfg.d_max)

    n_obj = rng.integers(cfg.min_objects, cfg.max_objects + 1)
    # depth bins keep layers distinct; background sits at d_max
    bins = rng.shuffle_index(8)[:n_obj]
    depths = (0.08 + 0.72 * bins / 7.0) * cfg.d_max
    order = np.argsort(-depths)  # paint far to near

    yy, xx = np.mgrid[0:s, 0:s]
    for k in order:
        cy = rng.uniform((), 0.15 * s, 0.85 * s)
        cx = rng.uniform((), 0.15 * s, 0.85 * s)
        ry = rng.uniform((), 0.10 * s, 0.30 * s)
        rx = rng.uniform((), 0.10 * s, 0.30 * s)
        is_rect = rng.uniform(()) < 0.5
        if is_rect:
            mask = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        tex = _textured_color(rng, s, s, rng.uniform((), cfg.cell_min, cfg.cell_max))
        clear[mask] = tex[mask]
        depth[mask] = depths[k]
    return SceneSample(clear=clear, depth=depth, seed=seed)


def generate_beta_field(seed: int, cfg: BetaConfig, h: int, w: int) -> np.ndarray:
    """Attenuation field in [lo, hi]; constant in uniform mode."""
    if cfg.lo > cfg.hi:
        raise ValueError(f"generate_beta_field: empty range [{cfg.lo}, {cfg.hi}]")
    if cfg.lo < 0:
        raise ValueError("generate_beta_field: negative attenuation rejected")
    rng = Rng(seed).split(f"beta-{cfg.family}")
    if cfg.mode == "uniform":
        return np.full((h, w), rng.uniform((), cfg.lo, cfg.hi))
    if cfg.mode != "nonuniform":
        raise ValueError(f"generate_beta_field: unknown mode {cfg.mode!r}")
    ridged = cfg.family == "turbulent"
    n = multi_octave_noise(rng, h, w, cfg.base_cell, cfg.octaves, ridged=ridged)
    return cfg.lo + (cfg.hi - cfg.lo) * n
