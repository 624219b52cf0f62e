"""Atmospheric scattering model and feature-multiplier algebra.

An observed fog image decomposes into direct attenuation plus airlight:

    I(x) = J(x) * t(x) + (1 - t(x)) * A,      t(x) = exp(-beta(x) * d(x))

with per-pixel attenuation beta (non-uniform fog is the general case) and
scene depth d. The multiplier form J = I * M with

    M(x) = (I(x) + t(x) * A - A) / (I(x) * t(x))

is the same inversion written as a per-pixel enhancement factor, which is
what the networks estimate in feature space.

Images are H x W (single channel) or H x W x 3 float arrays in [0, 1].
All functions here are pure and operate on plain numpy arrays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

T_MIN = 1e-3      # transmission clamp: bounds inversion amplification
EPS_DIV = 1e-3    # floor on I before the multiplier division

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])  # BT.601 luma


@dataclass
class FogField:
    """Fog physics for one scene: atmospheric light, attenuation, depth.

    A is a scalar in (0, 1] (achromatic) or an RGB triple with each channel
    in (0, 1]. beta and depth are H x W non-negative maps.
    """

    A: float | np.ndarray
    beta: np.ndarray = field(repr=False)
    depth: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if not np.isscalar(self.A):
            self.A = np.asarray(self.A, dtype=np.float64)
            if self.A.shape != (3,):
                raise ValueError(f"FogField: A must be scalar or RGB triple, got shape {self.A.shape}")
        a = np.atleast_1d(self.A)
        if np.any(a <= 0) or np.any(a > 1):
            raise ValueError(f"FogField: A must lie in (0, 1], got {self.A}")
        if self.beta.shape != self.depth.shape or self.beta.ndim != 2:
            raise ValueError(
                f"FogField: beta {self.beta.shape} and depth {self.depth.shape} must be matching H x W maps")
        if np.any(self.beta < 0):
            raise ValueError("FogField: negative beta rejected")
        if np.any(self.depth < 0):
            raise ValueError("FogField: negative depth rejected")

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.beta == self.beta.flat[0]))


def transmission_from_depth(fld: FogField, t_min: float = T_MIN) -> np.ndarray:
    """t(x) = exp(-beta(x) * d(x)), clamped to [t_min, 1]."""
    return np.clip(np.exp(-fld.beta * fld.depth), t_min, 1.0)


def _airlight(fld: FogField, img_ndim: int):
    """A broadcastable against an image of the given rank."""
    if np.isscalar(fld.A):
        return float(fld.A)
    if img_ndim == 3:
        return fld.A[None, None, :]
    raise ValueError("FogField: RGB atmospheric light applied to a single-channel image")


def _per_pixel(t: np.ndarray, img_ndim: int) -> np.ndarray:
    return t[..., None] if img_ndim == 3 else t


def render_fog(clear: np.ndarray, fld: FogField, t_min: float = T_MIN) -> np.ndarray:
    """Compose a fog image from a clear image: I = J*t + (1-t)*A."""
    clear = np.asarray(clear, dtype=np.float64)
    if clear.shape[:2] != fld.beta.shape:
        raise ValueError(f"render_fog: image {clear.shape} vs field {fld.beta.shape} shape mismatch")
    t = _per_pixel(transmission_from_depth(fld, t_min), clear.ndim)
    a = _airlight(fld, clear.ndim)
    return np.clip(clear * t + (1.0 - t) * a, 0.0, 1.0)


def invert_fog(fog: np.ndarray, fld: FogField, t_min: float = T_MIN,
               clip: bool = True) -> np.ndarray:
    """Analytic inversion J = (I - (1-t)*A) / t.

    Transmission below t_min signals an ill-posed inversion and is rejected;
    fields passed in here always clamp at t_min, so this triggers only for
    explicitly out-of-range t_min arguments.
    """
    fog = np.asarray(fog, dtype=np.float64)
    if fog.shape[:2] != fld.beta.shape:
        raise ValueError(f"invert_fog: image {fog.shape} vs field {fld.beta.shape} shape mismatch")
    t = transmission_from_depth(fld, t_min)
    if np.any(t < T_MIN):
        raise ValueError(f"invert_fog: transmission below {T_MIN} is ill-posed")
    t = _per_pixel(t, fog.ndim)
    a = _airlight(fld, fog.ndim)
    out = (fog - (1.0 - t) * a) / t
    return np.clip(out, 0.0, 1.0) if clip else out


@dataclass
class MultiplierMap:
    """Per-pixel (or per-feature) multiplicative enhancement factors."""

    values: np.ndarray = field(repr=False)
    floored: int = 0  # pixels floored to EPS_DIV before the division

    @property
    def shape(self):
        return self.values.shape


def feature_multiplier(fog: np.ndarray, fld: FogField, t_min: float = T_MIN) -> MultiplierMap:
    """Image-space multiplier M = (I + t*A - A) / (I*t), with I floored at EPS_DIV.

    On non-floored pixels I * M equals the unclipped analytic inversion
    exactly; floored pixels trade that identity for a bounded M.
    """
    fog = np.asarray(fog, dtype=np.float64)
    if fog.shape[:2] != fld.beta.shape:
        raise ValueError(f"feature_multiplier: image {fog.shape} vs field {fld.beta.shape} shape mismatch")
    t = _per_pixel(transmission_from_depth(fld, t_min), fog.ndim)
    a = _airlight(fld, fog.ndim)
    floored = int(np.count_nonzero(fog < EPS_DIV))
    if floored:
        log.info("feature_multiplier: floored %d pixels below %g", floored, EPS_DIV)
    i_safe = np.maximum(fog, EPS_DIV)
    m = (i_safe + t * a - a) / (i_safe * t)
    return MultiplierMap(values=m, floored=floored)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma: Y = 0.299 R + 0.587 G + 0.114 B."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"to_grayscale: expected H x W x 3 input, got {img.shape}")
    return img @ GRAY_WEIGHTS
