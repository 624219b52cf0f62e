"""Generators, feedback encoder, discriminator, and checkpoint I/O.

The generator is a 3-level U-shaped encoder/decoder (16/32/64 channels,
stride-2 downsampling, nearest-upsample + conv upsampling, skip
connections). A multiplier head turns the bottleneck features into a
strictly positive enhancement map M = softplus(raw) + eps, initialized near
the identity, which scales the bottleneck before decoding. The RGB variant
is multi-task: its decoder emits the restored image (sigmoid) and a
per-pixel Laplace scale (softplus). The feedback encoder maps (image,
uncertainty) to an extra bottleneck multiplier; the discriminator is a
4-block stride-2 patch classifier over a single (grayscale) channel.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .rng import Rng
from .tensor import Tensor, concat, conv2d, upsample2x

EPS_M = 1e-3
LEAKY_SLOPE = 0.2


def inv_softplus(y: float) -> float:
    """x with softplus(x) = y, for bias initialization."""
    return float(np.log(np.expm1(y)))


class Conv:
    """Conv layer owning its weight and bias tensors."""

    def __init__(self, name: str, in_ch: int, out_ch: int, rng: Rng,
                 stride: int = 1, k: int = 3, bias_init: float = 0.0):
        self.name = name
        self.stride = stride
        self.pad = k // 2
        fan_in = in_ch * k * k
        self.w = Tensor(rng.normal((out_ch, in_ch, k, k), std=np.sqrt(2.0 / fan_in)),
                        requires_grad=True)
        self.b = Tensor(np.full(out_ch, bias_init), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.pad)

    def params(self) -> dict[str, Tensor]:
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}


class _Net:
    """Shared parameter bookkeeping."""

    layers: list[Conv]

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        for k, v in params.items():
            if k not in state:
                raise KeyError(f"load_state: missing parameter {k}")
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != v.data.shape:
                raise ValueError(f"load_state: {k} shape {arr.shape} != {v.data.shape}")
            v.data = arr.copy()

    def set_trainable(self, flag: bool) -> None:
        for v in self.params().values():
            v.requires_grad = flag
            v.grad = None


def _check_image_input(x: Tensor, channels: int, who: str, divisor: int = 8) -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{who}: expected NCHW input, got shape {x.data.shape}")
    if x.data.shape[1] != channels:
        raise ValueError(f"{who}: expected {channels}-channel input, got {x.data.shape[1]}")
    if x.data.shape[2] % divisor or x.data.shape[3] % divisor:
        raise ValueError(f"{who}: spatial dims must be divisible by {divisor}, got {x.data.shape}")


class GeneratorNet(_Net):
    """Encoder/decoder with a bottleneck multiplier head.

    forward() returns (image, M) for the single-channel variant and
    (image, M, theta) when built with an uncertainty head.
    """

    def __init__(self, in_channels: int, seed: int, uncertainty_head: bool = False,
                 widths: tuple[int, int, int] = (16, 32, 64), eps_m: float = EPS_M):
        rng = Rng(seed).split(f"generator-{in_channels}ch")
        w1, w2, w3 = widths
        self.in_channels = in_channels
        self.widths = widths
        self.eps_m = eps_m
        self.has_uncertainty = uncertainty_head
        self.enc1 = Conv("enc1", in_channels, w1, rng, stride=2)
        self.enc2 = Conv("enc2", w1, w2, rng, stride=2)
        self.enc3 = Conv("enc3", w2, w3, rng, stride=2)
        # bias puts softplus(raw) + eps at ~1 so M starts near identity
        self.m_head = Conv("m_head", w3, w3, rng, bias_init=inv_softplus(1.0 - eps_m))
        self.dec3 = Conv("dec3", w3 + w2, w2, rng)
        self.dec2 = Conv("dec2", w2 + w1, w1, rng)
        self.dec1 = Conv("dec1", w1, w1, rng)
        self.img_head = Conv("img_head", w1, in_channels, rng)
        self.layers = [self.enc1, self.enc2, self.enc3, self.m_head,
                       self.dec3, self.dec2, self.dec1, self.img_head]
        if uncertainty_head:
            self.unc_head = Conv("unc_head", w1, 1, rng)
            self.layers.append(self.unc_head)

    def encode(self, x: Tensor):
        f1 = self.enc1(x).leaky_relu(LEAKY_SLOPE)
        f2 = self.enc2(f1).leaky_relu(LEAKY_SLOPE)
        f3 = self.enc3(f2).leaky_relu(LEAKY_SLOPE)
        return f1, f2, f3

    def multiplier(self, f3: Tensor) -> Tensor:
        return self.m_head(f3).softplus() + self.eps_m

    def decode(self, feats: Tensor, f1: Tensor, f2: Tensor):
        d3 = self.dec3(concat([upsample2x(feats), f2], axis=1)).leaky_relu(LEAKY_SLOPE)
        d2 = self.dec2(concat([upsample2x(d3), f1], axis=1)).leaky_relu(LEAKY_SLOPE)
        d1 = self.dec1(upsample2x(d2)).leaky_relu(LEAKY_SLOPE)
        image = self.img_head(d1).sigmoid()
        if self.has_uncertainty:
            return image, self.unc_head(d1).softplus()
        return image, None

    def forward(self, x: Tensor):
        _check_image_input(x, self.in_channels, "generator")
        f1, f2, f3 = self.encode(x)
        m = self.multiplier(f3)
        image, theta = self.decode(f3 * m, f1, f2)
        if self.has_uncertainty:
            return image, m, theta
        return image, m


class FeedbackEncoder(_Net):
    """Maps (RGB image, uncertainty map) to a bottleneck multiplier M_FB."""

    def __init__(self, seed: int, widths: tuple[int, int, int] = (16, 32, 64),
                 eps_m: float = EPS_M):
        rng = Rng(seed).split("feedback-encoder")
        w1, w2, w3 = widths
        self.eps_m = eps_m
        self.force_unit = False  # ablation hook: emit M_FB = 1 exactly
        self.enc1 = Conv("enc1", 4, w1, rng, stride=2)
        self.enc2 = Conv("enc2", w1, w2, rng, stride=2)
        self.enc3 = Conv("enc3", w2, w3, rng, stride=2)
        self.head = Conv("head", w3, w3, rng, bias_init=inv_softplus(1.0 - eps_m))
        self.layers = [self.enc1, self.enc2, self.enc3, self.head]

    def forward(self, image: Tensor, theta: Tensor) -> Tensor:
        _check_image_input(image, 3, "feedback_encoder")
        if theta.data.shape[0] != image.data.shape[0] or theta.data.shape[2:] != image.data.shape[2:]:
            raise ValueError(f"feedback_encoder: uncertainty {theta.data.shape} does not "
                             f"match image {image.data.shape} spatially")
        if self.force_unit:
            n, _, h, w = image.data.shape
            return Tensor(np.ones((n, self.head.w.data.shape[0], h // 8, w // 8)))
        x = concat([image, theta], axis=1)
        f = self.enc1(x).leaky_relu(LEAKY_SLOPE)
        f = self.enc2(f).leaky_relu(LEAKY_SLOPE)
        f = self.enc3(f).leaky_relu(LEAKY_SLOPE)
        return self.head(f).softplus() + self.eps_m


class Discriminator(_Net):
    """Patch discriminator: 4 stride-2 conv blocks over one channel."""

    def __init__(self, seed: int, widths: tuple[int, int, int] = (16, 32, 64)):
        rng = Rng(seed).split("discriminator")
        w1, w2, w3 = widths
        self.d1 = Conv("d1", 1, w1, rng, stride=2)
        self.d2 = Conv("d2", w1, w2, rng, stride=2)
        self.d3 = Conv("d3", w2, w3, rng, stride=2)
        self.d4 = Conv("d4", w3, 1, rng, stride=2)
        self.layers = [self.d1, self.d2, self.d3, self.d4]

    def forward(self, y: Tensor) -> Tensor:
        _check_image_input(y, 1, "discriminator", divisor=16)
        f = self.d1(y).leaky_relu(LEAKY_SLOPE)
        f = self.d2(f).leaky_relu(LEAKY_SLOPE)
        f = self.d3(f).leaky_relu(LEAKY_SLOPE)
        return self.d4(f)  # raw logit map, H/16 x W/16


def feedback_forward(rgb_net: GeneratorNet, fb: FeedbackEncoder,
                     x: Tensor, theta_prev: Tensor):
    """One uncertainty-feedback refinement pass.

    Bottleneck features are scaled by both the RGB multiplier and the
    feedback multiplier, then decoded by the (shared) RGB decoder into a
    refined image and a new uncertainty map.
    """
    _check_image_input(x, 3, "feedback_forward")
    f1, f2, f3 = rgb_net.encode(x)
    m_i = rgb_net.multiplier(f3)
    m_fb = fb.forward(x, theta_prev)
    image, theta = rgb_net.decode(f3 * m_i * m_fb, f1, f2)
    return image, theta, m_fb


def to_grayscale_nchw(x: Tensor) -> Tensor:
    """Differentiable BT.601 luma for NCHW RGB tensors."""
    if x.data.shape[1] != 3:
        raise ValueError(f"to_grayscale_nchw: expected 3 channels, got {x.data.shape}")
    return x[:, 0:1] * 0.299 + x[:, 1:2] * 0.587 + x[:, 2:3] * 0.114


# -- checkpoint container --------------------------------------------------
#
# Layout (all integers little-endian):
#   magic  b"DFCK" | u32 format version | u64 header length | header JSON
#   u64 manifest length | manifest JSON [{"name", "shape"}, ...]
#   concatenated raw float64 little-endian blobs in manifest order

CKPT_MAGIC = b"DFCK"
CKPT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict) -> None:
    header = dict(meta)
    header["format_version"] = CKPT_VERSION
    header_json = json.dumps(header, sort_keys=True).encode()
    manifest = [{"name": k, "shape": list(np.asarray(v).shape)} for k, v in params.items()]
    manifest_json = json.dumps(manifest).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<Q", len(header_json)))
        fh.write(header_json)
        fh.write(struct.pack("<Q", len(manifest_json)))
        fh.write(manifest_json)
        for k in params:
            fh.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a defog checkpoint (bad magic)")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    (hlen,) = struct.unpack("<Q", blob[pos:pos + 8])
    pos += 8
    meta = json.loads(blob[pos:pos + hlen])
    pos += hlen
    (mlen,) = struct.unpack("<Q", blob[pos:pos + 8])
    pos += 8
    manifest = json.loads(blob[pos:pos + mlen])
    pos += mlen
    params = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
        params[entry["name"]] = arr.reshape(shape).astype(np.float64)
        pos += count * 8
    return params, meta
