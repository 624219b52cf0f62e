"""Training objectives and loss telemetry.

The overall objective is a weighted sum

    L = lm * L_multiplier + ls * L_structure + lu * L_uncertainty
        + L_MSE + ld * L_adversarial

with published defaults lm = 1, lu = 1, ls = 0.1, ld = 0.005. MSE and the
uncertainty term apply only to paired synthetic batches; the multiplier,
structure, and adversarial terms apply everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor, as_tensor

EPS_THETA = 1e-6  # guards the theta division; the log term is guarded by +1


@dataclass
class LossWeights:
    multiplier: float = 1.0
    structure: float = 0.1
    uncertainty: float = 1.0
    adversarial: float = 0.005

    def __post_init__(self):
        for name in ("multiplier", "structure", "uncertainty", "adversarial"):
            if getattr(self, name) < 0:
                raise ValueError(f"LossWeights: negative weight {name}={getattr(self, name)}")


def multiplier_consistency(m_i: Tensor, m_y: Tensor | np.ndarray) -> Tensor:
    """L2 norm of (M_I - M_Y); M_Y is a frozen target and gets no gradient."""
    m_i = as_tensor(m_i)
    m_y_data = m_y.data if isinstance(m_y, Tensor) else np.asarray(m_y, dtype=np.float64)
    if m_i.data.shape != m_y_data.shape:
        raise ValueError(f"multiplier_consistency: shape mismatch "
                         f"{m_i.data.shape} vs {m_y_data.shape}")
    diff = m_i - Tensor(m_y_data)
    return (diff * diff).sum().sqrt()


def uncertainty_loss(pred: Tensor, target: Tensor | np.ndarray, theta: Tensor,
                     eps_theta: float = EPS_THETA) -> Tensor:
    """Laplace negative log-likelihood variant, averaged over pixels.

    Per pixel: |pred - target|_1 (summed over channels) / (theta + eps)
    + ln(theta + 1). theta is a single-channel map broadcast over channels.
    """
    pred = as_tensor(pred)
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    theta = as_tensor(theta)
    if pred.data.shape != target_data.shape:
        raise ValueError(f"uncertainty_loss: prediction {pred.data.shape} vs "
                         f"target {target_data.shape} shape mismatch")
    if np.any(theta.data < 0):
        raise ValueError("uncertainty_loss: negative theta rejected")
    if pred.data.ndim != 4 or theta.data.ndim != 4 or theta.data.shape[1] != 1:
        raise ValueError(f"uncertainty_loss: expected NCHW prediction and N1HW theta, "
                         f"got {pred.data.shape} and {theta.data.shape}")
    l1 = (pred - Tensor(target_data)).abs().sum(axis=1, keepdims=True)
    per_pixel = l1 / (theta + eps_theta) + (theta + 1.0).log()
    return per_pixel.mean()


def mse_loss(pred: Tensor, target: Tensor | np.ndarray) -> Tensor:
    pred = as_tensor(pred)
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.data.shape != target_data.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.data.shape} vs {target_data.shape}")
    diff = pred - Tensor(target_data)
    return (diff * diff).mean()


def adversarial_losses(disc, fake_y: Tensor, real_y: Tensor) -> tuple[Tensor, Tensor]:
    """Least-squares GAN pair (generator term, discriminator term).

    The discriminator term sees the fake detached, so its gradient never
    reaches the generator; the generator term backpropagates through the
    discriminator into the fake.
    """
    fake_y = as_tensor(fake_y)
    real_y = as_tensor(real_y)
    for name, t in (("fake", fake_y), ("real", real_y)):
        if t.data.ndim != 4 or t.data.shape[1] != 1:
            raise ValueError(f"adversarial_losses: {name} input must be N1HW grayscale, "
                             f"got {t.data.shape}")
    d_fake = disc.forward(fake_y)
    gen_loss = ((d_fake - 1.0) * (d_fake - 1.0)).mean()
    d_fake_det = disc.forward(fake_y.detach())
    d_real = disc.forward(real_y)
    disc_loss = ((d_real - 1.0) * (d_real - 1.0)).mean() + (d_fake_det * d_fake_det).mean()
    return gen_loss, disc_loss


def total_loss(parts: dict[str, Tensor | float], w: LossWeights) -> Tensor:
    """Weighted sum of the objective parts; absent parts count as zero.

    Recognized keys: multiplier, structure, uncertainty, mse, adversarial.
    """
    known = {"multiplier", "structure", "uncertainty", "mse", "adversarial"}
    unknown = set(parts) - known
    if unknown:
        raise ValueError(f"total_loss: unknown parts {sorted(unknown)}")

    def get(name):
        return as_tensor(parts.get(name, 0.0))

    return (w.multiplier * get("multiplier")
            + w.structure * get("structure")
            + w.uncertainty * get("uncertainty")
            + get("mse")
            + w.adversarial * get("adversarial"))


# -- telemetry ---------------------------------------------------------------

TELEMETRY_PARTS = ("multiplier", "structure", "uncertainty", "mse",
                   "adv_gen", "adv_fb", "adv_disc")
# adv_disc trains the discriminator and is logged unweighted, outside the total
_PART_WEIGHT = {"multiplier": "multiplier", "structure": "structure",
                "uncertainty": "uncertainty", "mse": None,
                "adv_gen": "adversarial", "adv_fb": "adversarial", "adv_disc": None}


class TelemetryWriter:
    """Line-delimited TSV loss log: step, raw parts, weighted parts, total."""

    def __init__(self, path, weights: LossWeights):
        self.path = Path(path)
        self.weights = weights
        cols = (["step"] + [f"raw_{p}" for p in TELEMETRY_PARTS]
                + [f"wt_{p}" for p in TELEMETRY_PARTS] + ["total"])
        self._fh = open(self.path, "w")
        self._fh.write("# " + "\t".join(cols) + "\n")

    def weighted(self, name: str, value: float) -> float:
        wname = _PART_WEIGHT[name]
        return value if wname is None else getattr(self.weights, wname) * value

    def log(self, step: int, raw: dict[str, float]) -> float:
        vals = [float(raw.get(p, 0.0)) for p in TELEMETRY_PARTS]
        weighted = [self.weighted(p, v) for p, v in zip(TELEMETRY_PARTS, vals)]
        total = sum(wv for p, wv in zip(TELEMETRY_PARTS, weighted) if p != "adv_disc")
        fields = [str(step)] + [repr(v) for v in vals + weighted] + [repr(total)]
        self._fh.write("\t".join(fields) + "\n")
        self._fh.flush()
        return total

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_telemetry(path) -> tuple[list[str], np.ndarray]:
    """Columns and rows of a telemetry log."""
    lines = Path(path).read_text().splitlines()
    cols = lines[0].lstrip("# ").split("\t")
    rows = np.array([[float(v) for v in line.split("\t")] for line in lines[1:]])
    return cols, rows
