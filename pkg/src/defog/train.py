"""Two-stage semi-supervised training and feedback inference.

Stage 1 trains the grayscale generator with MSE (paired batches) plus a
least-squares adversarial term (all batches), co-training a grayscale patch
discriminator. Stage 2 freezes the grayscale net and trains the RGB
generator, feedback encoder, and a fresh discriminator under the full
objective; the frozen net supplies the multiplier target M_Y and the
structure target S(J_Y). Feedback passes run on real batches and receive
only the adversarial term. Every stochastic choice draws from named
splitmix64 streams, so a (config, seed, data) triple fixes the whole
trajectory bit for bit.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .dataio import read_manifest
from .fog import to_grayscale
from .losses import (LossWeights, TelemetryWriter, mse_loss,
                     multiplier_consistency, uncertainty_loss)
from .nets import (Discriminator, FeedbackEncoder, GeneratorNet,
                   feedback_forward, to_grayscale_nchw)
from .pngio import load_image
from .rng import Rng
from .structure import StructureEncoder, extract_keys, self_similarity, structure_loss_to_target
from .tensor import Tensor, concat

MAX_FEEDBACK_ITERS = 3


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 1000
    batch_size: int = 2          # paired images per step
    real_ratio: float = 1.0      # real images per paired image
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    feedback_iters: int = 2      # K; 0 disables feedback (ablation)
    weights: LossWeights = field(default_factory=LossWeights)
    crop: int | None = None      # None trains on full images
    feedback_full_losses: bool = False  # paired feedback passes reuse mse/structure/multiplier
    enc_patch: int = 8
    enc_key_dim: int = 64
    enc_seed: int = 7001

    def __post_init__(self):
        if not 0 <= self.feedback_iters <= MAX_FEEDBACK_ITERS:
            raise ValueError(f"TrainConfig: feedback_iters must be 0..{MAX_FEEDBACK_ITERS}, "
                             f"got {self.feedback_iters}")
        if self.batch_size < 1:
            raise ValueError("TrainConfig: batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("TrainConfig: steps must be >= 0")

    @property
    def real_batch_size(self) -> int:
        return max(1, round(self.batch_size * self.real_ratio))

    def echo(self) -> dict:
        d = {k: getattr(self, k) for k in ("seed", "steps", "batch_size", "real_ratio",
                                           "lr", "beta1", "beta2", "adam_eps",
                                           "feedback_iters", "crop", "feedback_full_losses",
                                           "enc_patch", "enc_key_dim", "enc_seed")}
        d["weights"] = {"multiplier": self.weights.multiplier,
                        "structure": self.weights.structure,
                        "uncertainty": self.weights.uncertainty,
                        "adversarial": self.weights.adversarial}
        return d


@dataclass
class Batch:
    kind: str                     # "paired" | "real"
    fog: np.ndarray               # (N, H, W, 3)
    clear: np.ndarray | None      # ground truths for paired batches only
    indices: np.ndarray

    def __post_init__(self):
        if self.kind == "paired" and self.clear is None:
            raise ValueError("Batch: paired batch without ground truths")
        if self.kind == "real" and self.clear is not None:
            raise ValueError("Batch: unpaired batch must not carry ground truths")


@dataclass
class TrainData:
    paired_fog: np.ndarray        # (P, H, W, 3)
    paired_clear: np.ndarray
    real_fog: np.ndarray          # (R, H, W, 3)
    refs: np.ndarray              # (Q, H, W, 3) clear reference pool

    def __post_init__(self):
        if len(self.paired_fog) == 0 or len(self.real_fog) == 0 or len(self.refs) == 0:
            raise ValueError("TrainData: paired, real, and reference pools must be non-empty")
        shape = self.paired_fog.shape[1:]
        for name in ("paired_clear", "real_fog", "refs"):
            if getattr(self, name).shape[1:] != shape:
                raise ValueError(f"TrainData: {name} images do not match shape {shape}")
        h, w = shape[:2]
        if h % 16 or w % 16:
            raise ValueError(f"TrainData: image size {h}x{w} must be divisible by 16")

    @property
    def image_size(self) -> tuple[int, int]:
        return self.paired_fog.shape[1:3]


def load_train_data(paired_manifest, real_manifest, refs_manifest) -> TrainData:
    """Load datasets from manifests.

    The reference pool takes the clear side of paired records plus the image
    column of unpaired records (for refs manifests that list bare clear
    images as unpaired rows).
    """
    paired = [r for r in read_manifest(paired_manifest) if r.kind == "paired"]
    if not paired:
        raise ValueError(f"{paired_manifest}: no paired records")
    real_recs = read_manifest(real_manifest)
    refs_recs = read_manifest(refs_manifest)
    paired_fog = np.stack([load_image(r.fog) for r in paired])
    paired_clear = np.stack([load_image(r.clear) for r in paired])
    real_fog = np.stack([load_image(r.fog) for r in real_recs])
    ref_imgs = [load_image(r.clear) for r in refs_recs if r.kind == "paired"]
    ref_imgs += [load_image(r.fog) for r in refs_recs if r.kind == "unpaired"]
    return TrainData(paired_fog=paired_fog, paired_clear=paired_clear,
                     real_fog=real_fog, refs=np.stack(ref_imgs))


class BatchSampler:
    """Seed-determined index streams for paired/real/reference draws."""

    def __init__(self, data: TrainData, cfg: TrainConfig, label: str):
        root = Rng(cfg.seed).split(f"batches-{label}")
        self._paired = root.split("paired")
        self._real = root.split("real")
        self._refs = root.split("refs")
        self.data = data
        self.cfg = cfg

    def next(self) -> tuple[Batch, Batch, np.ndarray]:
        d, cfg = self.data, self.cfg
        ip = self._paired.integers(0, len(d.paired_fog), (cfg.batch_size,))
        ir = self._real.integers(0, len(d.real_fog), (cfg.real_batch_size,))
        nrefs = cfg.batch_size + cfg.real_batch_size
        iq = self._refs.integers(0, len(d.refs), (nrefs,))
        paired = Batch("paired", d.paired_fog[ip], d.paired_clear[ip], ip)
        real = Batch("real", d.real_fog[ir], None, ir)
        return paired, real, d.refs[iq]


class Adam:
    """Adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.lr = cfg.lr
        self.b1 = cfg.beta1
        self.b2 = cfg.beta2
        self.eps = cfg.adam_eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _nchw(batch_hwc: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(batch_hwc.transpose(0, 3, 1, 2))


def _gray_nchw(batch_hwc: np.ndarray) -> np.ndarray:
    return np.stack([to_grayscale(img) for img in batch_hwc])[:, None, :, :]


def _crop_batch(arrs: list[np.ndarray], crop: int | None, rng: Rng):
    if crop is None:
        return arrs
    h, w = arrs[0].shape[1:3]
    n = arrs[0].shape[0]
    ys = rng.integers(0, h - crop + 1, (n,))
    xs = rng.integers(0, w - crop + 1, (n,))
    return [np.stack([a[i, ys[i]:ys[i] + crop, xs[i]:xs[i] + crop] for i in range(n)])
            for a in arrs]


def _progress(stage: str, step: int, total: int, loss: float):
    if step % 100 == 0 or step == total - 1:
        print(f"[{stage}] step {step + 1}/{total} total_loss={loss:.4f}", file=sys.stderr)


# -- stage 1: grayscale ------------------------------------------------------


def train_grayscale(data: TrainData, cfg: TrainConfig,
                    telemetry_path=None) -> dict[str, np.ndarray]:
    """Train the grayscale generator + discriminator; returns named weights."""
    root = Rng(cfg.seed)
    gen = GeneratorNet(1, seed=root.split("gray-gen").seed)
    disc = Discriminator(seed=root.split("gray-disc").seed)
    opt_g = Adam(gen.params(), cfg)
    opt_d = Adam(disc.params(), cfg)
    sampler = BatchSampler(data, cfg, "gray")
    crop_rng = root.split("gray-crops")
    telemetry = TelemetryWriter(telemetry_path, cfg.weights) if telemetry_path else None

    for step in range(cfg.steps):
        paired, real, refs = sampler.next()
        fog_p, clear_p = _crop_batch([paired.fog, paired.clear], cfg.crop, crop_rng)
        (fog_r,) = _crop_batch([real.fog], cfg.crop, crop_rng)
        (refs_c,) = _crop_batch([refs], cfg.crop, crop_rng)

        x_p = Tensor(_gray_nchw(fog_p))
        y_p = _gray_nchw(clear_p)
        x_r = Tensor(_gray_nchw(fog_r))
        refs_y = Tensor(_gray_nchw(refs_c))

        fake_p, _ = gen.forward(x_p)
        fake_r, _ = gen.forward(x_r)
        l_mse = mse_loss(fake_p, y_p)
        fakes = concat([fake_p, fake_r], axis=0)
        d_fake = disc.forward(fakes)
        l_adv_gen = ((d_fake - 1.0) * (d_fake - 1.0)).mean()
        gen_total = l_mse + cfg.weights.adversarial * l_adv_gen

        opt_g.zero_grad()
        gen_total.backward()
        opt_g.step()

        d_fake_det = disc.forward(fakes.detach())
        d_real = disc.forward(refs_y)
        l_adv_disc = (((d_real - 1.0) * (d_real - 1.0)).mean()
                      + (d_fake_det * d_fake_det).mean())
        opt_d.zero_grad()
        l_adv_disc.backward()
        opt_d.step()

        raw = {"mse": l_mse.item(), "adv_gen": l_adv_gen.item(),
               "adv_disc": l_adv_disc.item()}
        total = telemetry.log(step, raw) if telemetry else gen_total.item()
        _progress("gray", step, cfg.steps, total)

    if telemetry:
        telemetry.close()
    state = {f"gen/{k}": v for k, v in gen.state().items()}
    state.update({f"disc/{k}": v for k, v in disc.state().items()})
    return state


# -- stage 2: rgb + feedback --------------------------------------------------


def _load_frozen_gray(gray_state: dict[str, np.ndarray]) -> GeneratorNet:
    gen = GeneratorNet(1, seed=0)
    gen.load_state({k.split("/", 1)[1]: v for k, v in gray_state.items()
                    if k.startswith("gen/")})
    gen.set_trainable(False)
    return gen


def _gray_targets(gray: GeneratorNet, enc: StructureEncoder,
                  fog_hwc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Frozen-net multiplier target and structure descriptor for one image."""
    x = Tensor(_gray_nchw(fog_hwc[None]))
    j_y, m_y = gray.forward(x)
    s_y = self_similarity(extract_keys(j_y[0], enc)).data
    return m_y.data[0], s_y


def train_rgb(gray_state: dict[str, np.ndarray], data: TrainData, cfg: TrainConfig,
              telemetry_path=None, gray_image_size: tuple[int, int] | None = None
              ) -> dict[str, np.ndarray]:
    """Train RGB generator, feedback encoder, and discriminator; gray net frozen."""
    if gray_image_size is not None and tuple(gray_image_size) != tuple(data.image_size):
        raise ValueError(f"train_rgb: grayscale checkpoint was trained at "
                         f"{gray_image_size}, data is {data.image_size}")
    root = Rng(cfg.seed)
    gray = _load_frozen_gray(gray_state)
    rgb = GeneratorNet(3, seed=root.split("rgb-gen").seed, uncertainty_head=True)
    fb = FeedbackEncoder(seed=root.split("rgb-fb").seed)
    disc = Discriminator(seed=root.split("rgb-disc").seed)
    if rgb.widths != gray.widths:
        raise ValueError(f"train_rgb: bottleneck widths differ, gray {gray.widths} "
                         f"vs rgb {rgb.widths}")
    enc = StructureEncoder(patch_size=cfg.enc_patch, key_dim=cfg.enc_key_dim,
                           seed=cfg.enc_seed)

    gen_params = rgb.params()
    gen_params.update({f"fb:{k}": v for k, v in fb.params().items()})
    opt_g = Adam(gen_params, cfg)
    opt_d = Adam(disc.params(), cfg)
    sampler = BatchSampler(data, cfg, "rgb")
    crop_rng = root.split("rgb-crops")
    telemetry = TelemetryWriter(telemetry_path, cfg.weights) if telemetry_path else None

    # the gray net is frozen, so its per-image targets are constants; cache
    # them when training on full images (bitwise identical to recomputing)
    cache: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]] | None = None
    if cfg.crop is None:
        cache = {}

    def targets(kind: str, idx: int, fog_img: np.ndarray):
        if cache is None:
            return _gray_targets(gray, enc, fog_img)
        key = (kind, idx)
        if key not in cache:
            cache[key] = _gray_targets(gray, enc, fog_img)
        return cache[key]

    def batch_losses(batch: Batch, fog_hwc: np.ndarray):
        """Forward pass + multiplier/structure terms for one batch."""
        x = Tensor(_nchw(fog_hwc))
        j, m_i, theta = rgb.forward(x)
        l_mult = 0.0
        l_struct = 0.0
        n = fog_hwc.shape[0]
        s_targets = []
        for i in range(n):
            m_y, s_y = targets(batch.kind, int(batch.indices[i]), fog_hwc[i])
            s_targets.append(s_y)
            l_mult = l_mult + multiplier_consistency(m_i[i], m_y)
            l_struct = l_struct + structure_loss_to_target(j[i], s_y, enc)
        return x, j, m_i, theta, l_mult * (1.0 / n), l_struct * (1.0 / n), s_targets

    for step in range(cfg.steps):
        paired, real, refs = sampler.next()
        fog_p, clear_p = _crop_batch([paired.fog, paired.clear], cfg.crop, crop_rng)
        (fog_r,) = _crop_batch([real.fog], cfg.crop, crop_rng)
        (refs_c,) = _crop_batch([refs], cfg.crop, crop_rng)

        x_p, j_p, _, theta_p, l_mult_p, l_struct_p, s_targets_p = batch_losses(paired, fog_p)
        x_r, j_r, _, theta_r, l_mult_r, l_struct_r, _ = batch_losses(real, fog_r)

        clear_nchw = _nchw(clear_p)
        l_unc = uncertainty_loss(j_p, clear_nchw, theta_p)
        l_mse = mse_loss(j_p, clear_nchw)
        l_mult = (l_mult_p + l_mult_r) * 0.5
        l_struct = (l_struct_p + l_struct_r) * 0.5

        fake_pool = [to_grayscale_nchw(j_p), to_grayscale_nchw(j_r)]
        fakes_initial = concat(fake_pool, axis=0)
        d_fake = disc.forward(fakes_initial)
        l_adv_gen = ((d_fake - 1.0) * (d_fake - 1.0)).mean()

        # feedback refinement: adversarial term only, on real batches
        l_adv_fb = Tensor(0.0)
        theta_prev = theta_r
        j_fb_final = None
        for _ in range(cfg.feedback_iters):
            j_fb, theta_fb, _ = feedback_forward(rgb, fb, x_r, theta_prev)
            d_fb = disc.forward(to_grayscale_nchw(j_fb))
            l_adv_fb = l_adv_fb + ((d_fb - 1.0) * (d_fb - 1.0)).mean()
            theta_prev = theta_fb
            j_fb_final = j_fb
        if cfg.feedback_full_losses and cfg.feedback_iters > 0:
            # optional paired feedback supervision: mse + structure of the
            # final refined output (the multiplier term is pass-invariant)
            theta_fp = theta_p
            j_fp = None
            for _ in range(cfg.feedback_iters):
                j_fp, theta_fp, _ = feedback_forward(rgb, fb, x_p, theta_fp)
            l_mse = l_mse + mse_loss(j_fp, clear_nchw)
            fb_struct = 0.0
            for i in range(fog_p.shape[0]):
                fb_struct = fb_struct + structure_loss_to_target(j_fp[i], s_targets_p[i], enc)
            l_struct = l_struct + fb_struct * (1.0 / fog_p.shape[0])

        w = cfg.weights
        gen_total = (w.multiplier * l_mult + w.structure * l_struct
                     + w.uncertainty * l_unc + l_mse
                     + w.adversarial * (l_adv_gen + l_adv_fb))

        opt_g.zero_grad()
        gen_total.backward()
        opt_g.step()

        refs_y = Tensor(_gray_nchw(refs_c))
        disc_fakes = [fakes_initial.detach()]
        if j_fb_final is not None:
            disc_fakes.append(to_grayscale_nchw(j_fb_final.detach()))
        fakes_det = concat(disc_fakes, axis=0)
        d_fake_det = disc.forward(fakes_det)
        d_real = disc.forward(refs_y)
        l_adv_disc = (((d_real - 1.0) * (d_real - 1.0)).mean()
                      + (d_fake_det * d_fake_det).mean())
        opt_d.zero_grad()
        l_adv_disc.backward()
        opt_d.step()

        raw = {"multiplier": l_mult.item(), "structure": l_struct.item(),
               "uncertainty": l_unc.item(), "mse": l_mse.item(),
               "adv_gen": l_adv_gen.item(), "adv_fb": l_adv_fb.item(),
               "adv_disc": l_adv_disc.item()}
        total = telemetry.log(step, raw) if telemetry else gen_total.item()
        _progress("rgb", step, cfg.steps, total)

    if telemetry:
        telemetry.close()
    state = {f"rgb/{k}": v for k, v in rgb.state().items()}
    state.update({f"fb/{k}": v for k, v in fb.state().items()})
    state.update({f"disc/{k}": v for k, v in disc.state().items()})
    return state


# -- inference ----------------------------------------------------------------


def nets_from_state(state: dict[str, np.ndarray]) -> tuple[GeneratorNet, FeedbackEncoder]:
    rgb = GeneratorNet(3, seed=0, uncertainty_head=True)
    fb = FeedbackEncoder(seed=0)
    rgb.load_state({k.split("/", 1)[1]: v for k, v in state.items() if k.startswith("rgb/")})
    fb.load_state({k.split("/", 1)[1]: v for k, v in state.items() if k.startswith("fb/")})
    rgb.set_trainable(False)
    fb.set_trainable(False)
    return rgb, fb


def defog(rgb: GeneratorNet, fb: FeedbackEncoder, image_hwc: np.ndarray,
          iters: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Defog one H x W x 3 image with K feedback iterations.

    Returns the final output and the uncertainty trace theta_0..theta_K
    (K + 1 maps of shape H x W).
    """
    if not 0 <= iters <= MAX_FEEDBACK_ITERS:
        raise ValueError(f"defog: iters must be 0..{MAX_FEEDBACK_ITERS}, got {iters}")
    x = Tensor(_nchw(np.asarray(image_hwc, dtype=np.float64)[None]))
    out, _, theta = rgb.forward(x)
    trace = [theta.data[0, 0].copy()]
    for _ in range(iters):
        out, theta, _ = feedback_forward(rgb, fb, x, theta)
        trace.append(theta.data[0, 0].copy())
    return out.data[0].transpose(1, 2, 0), trace
