import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch

from errors import ConfigurationError
from network import ModelOutput

logger = logging.getLogger(__name__)

POW_EPS = 1e-6
TensorLike = Union[torch.Tensor, np.ndarray, float]
LOSS_COLUMNS = ['epoch', 'step', 'gain_real', 'gain_imag', 'snr', 'strength', 'total']
BASELINE_COLUMNS = ['epoch', 'step', 'gain_real', 'gain_imag', 'strength', 'total']


@dataclass
class LossConfig:
    """
    Weights and exponents of the training objectives

    Args:
        lam: Compression exponent applied to gains and strengths
        c1: Weight of the fourth-power gain term
        alpha: Gain weight of the baseline loss
        beta: Strength weight of the baseline loss
        delta: Mix between the gain loss and the over-attenuation loss
        c2: Weight of each complex gain loss
        c3: Weight of the SNR loss
        c4: Weight of the strength loss
        oa_on_warped: Apply the over-attenuation penalty to compressed gains
        strength_plus_form: Use the sum form of the strength loss instead of the difference form
    """
    lam: float = 0.5
    c1: float = 10.0
    alpha: float = 4.0
    beta: float = 1.0
    delta: float = 0.7
    c2: float = 4.0
    c3: float = 1.0
    c4: float = 1.0
    oa_on_warped: bool = False
    strength_plus_form: bool = False

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ConfigurationError(f"lam must lie in (0, 1], got {self.lam}")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError(f"delta must lie in [0, 1], got {self.delta}")
        for name in ('c1', 'alpha', 'beta', 'c2', 'c3', 'c4'):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative, got {getattr(self, name)}")


class _SafePow(torch.autograd.Function):
    """x ** lam whose derivative is evaluated at x + POW_EPS so it stays finite at 0"""

    @staticmethod
    def forward(ctx, x, lam):
        ctx.save_for_backward(x)
        ctx.lam = lam
        return x.clamp_min(0.0).pow(lam)

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        grad = grad_output * ctx.lam * (x.clamp_min(0.0) + POW_EPS).pow(ctx.lam - 1.0)
        return grad, None


def _warp(x: torch.Tensor, lam: float) -> torch.Tensor:
    return _SafePow.apply(x, lam)


def _as_tensor(x: TensorLike) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _check_range(name: str, x: torch.Tensor):
    if not torch.isfinite(x).all() or (x < 0).any() or (x > 1).any():
        raise ValueError(f"{name} must lie in [0, 1]")


def _prepare(target: TensorLike, predicted: TensorLike, training: bool):
    target, predicted = _as_tensor(target), _as_tensor(predicted)
    if target.shape != predicted.shape:
        raise ValueError(f"Target shape {tuple(target.shape)} differs from prediction {tuple(predicted.shape)}")
    if training:
        _check_range('target', target)
        _check_range('prediction', predicted)
    return target, predicted


def _frame_mean(per_frame: torch.Tensor, mask: Optional[TensorLike] = None) -> torch.Tensor:
    if mask is None:
        return per_frame.mean() if per_frame.ndim else per_frame
    mask = _as_tensor(mask).to(per_frame.dtype)
    if mask.shape != per_frame.shape:
        raise ValueError(f"Mask shape {tuple(mask.shape)} differs from frames {tuple(per_frame.shape)}")
    # frames with zero weight are padding
    return (per_frame * mask).sum() / mask.sum().clamp_min(1.0)


def loss_gain(g: TensorLike, g_hat: TensorLike, cfg: LossConfig = LossConfig(),
              training: bool = False, mask: Optional[TensorLike] = None) -> torch.Tensor:
    """
    Compressed gain error with a fourth-power term

    Sum over bands of d^2 + C1 * d^4 with d = g^lam - g_hat^lam, averaged
    over any leading frame axes.
    """
    g, g_hat = _prepare(g, g_hat, training)
    diff = _warp(g, cfg.lam) - _warp(g_hat, cfg.lam)
    return _frame_mean((diff ** 2 + cfg.c1 * diff ** 4).sum(-1), mask)


def loss_oa(g: TensorLike, g_hat: TensorLike, cfg: LossConfig = LossConfig(),
            training: bool = False, mask: Optional[TensorLike] = None) -> torch.Tensor:
    """Over-attenuation penalty: only predictions below the target cost anything"""
    g, g_hat = _prepare(g, g_hat, training)
    if cfg.oa_on_warped:
        g, g_hat = _warp(g, cfg.lam), _warp(g_hat, cfg.lam)
    return _frame_mean(torch.relu(g - g_hat).pow(2).sum(-1), mask)


def loss_gain_combined(g: TensorLike, g_hat: TensorLike, cfg: LossConfig = LossConfig(),
                       training: bool = False, mask: Optional[TensorLike] = None) -> torch.Tensor:
    return (cfg.delta * loss_gain(g, g_hat, cfg, training, mask)
            + (1.0 - cfg.delta) * loss_oa(g, g_hat, cfg, training, mask))


def loss_strength(r: TensorLike, r_hat: TensorLike, cfg: LossConfig = LossConfig(),
                  training: bool = False, mask: Optional[TensorLike] = None) -> torch.Tensor:
    """
    Pitch strength loss on (1 - r)^lam

    The difference form is zero exactly at r_hat = r. The sum form,
    selected by strength_plus_form, is never zero for r < 1.
    """
    r, r_hat = _prepare(r, r_hat, training)
    target = _warp(1.0 - r, cfg.lam)
    predicted = _warp(1.0 - r_hat, cfg.lam)
    combined = target + predicted if cfg.strength_plus_form else target - predicted
    return _frame_mean(combined.pow(2).sum(-1), mask)


def loss_snr(s: TensorLike, s_hat: TensorLike, training: bool = False,
             mask: Optional[TensorLike] = None) -> torch.Tensor:
    """Mean squared error of the normalized SNR"""
    s, s_hat = _prepare(s, s_hat, training)
    return _frame_mean((s - s_hat).pow(2), mask)


def loss_components(targets: ModelOutput, predictions: ModelOutput, cfg: LossConfig = LossConfig(),
                    training: bool = False, include_snr: bool = True,
                    mask: Optional[TensorLike] = None) -> Dict[str, torch.Tensor]:
    """
    Weighted terms of the multi-objective loss and their sum

    Returns:
        Dict with gain_real, gain_imag, snr, strength and total
    """
    parts = {
        'gain_real': cfg.c2 * loss_gain_combined(targets.gain_real, predictions.gain_real, cfg, training, mask),
        'gain_imag': cfg.c2 * loss_gain_combined(targets.gain_imag, predictions.gain_imag, cfg, training, mask),
        'strength': cfg.c4 * loss_strength(targets.strength, predictions.strength, cfg, training, mask),
    }
    if include_snr:
        parts['snr'] = cfg.c3 * loss_snr(targets.snr, predictions.snr, training, mask)
    else:
        parts['snr'] = torch.zeros((), dtype=parts['gain_real'].dtype)
    parts['total'] = parts['gain_real'] + parts['gain_imag'] + parts['snr'] + parts['strength']
    return parts


def loss_total(targets: ModelOutput, predictions: ModelOutput, cfg: LossConfig = LossConfig(),
               training: bool = False, include_snr: bool = True) -> torch.Tensor:
    """C2 * L'g(real) + C2 * L'g(imag) + C3 * L_snr + C4 * L_r"""
    return loss_components(targets, predictions, cfg, training, include_snr)['total']


def loss_baseline(g: TensorLike, g_hat: TensorLike, r: TensorLike, r_hat: TensorLike,
                  cfg: LossConfig = LossConfig(), training: bool = False) -> torch.Tensor:
    """alpha * L_g + beta * L_r, without over-attenuation or SNR terms"""
    return cfg.alpha * loss_gain(g, g_hat, cfg, training) + cfg.beta * loss_strength(r, r_hat, cfg, training)


def baseline_components(targets: ModelOutput, predictions: ModelOutput, cfg: LossConfig = LossConfig(),
                        training: bool = False, mask: Optional[TensorLike] = None) -> Dict[str, torch.Tensor]:
    """Baseline loss on complex gains: the gain term averages the real and imaginary pairs"""
    parts = {
        'gain_real': 0.5 * cfg.alpha * loss_gain(targets.gain_real, predictions.gain_real, cfg, training, mask),
        'gain_imag': 0.5 * cfg.alpha * loss_gain(targets.gain_imag, predictions.gain_imag, cfg, training, mask),
        'strength': cfg.beta * loss_strength(targets.strength, predictions.strength, cfg, training, mask),
    }
    parts['total'] = parts['gain_real'] + parts['gain_imag'] + parts['strength']
    return parts


class LossCurveWriter:
    """
    Appends loss components to a CSV file, one row per logged step

    Args:
        path: CSV file; created with a header when missing
        columns: epoch, step and the component names to record
    """

    def __init__(self, path: Union[str, Path], columns: Sequence[str] = tuple(LOSS_COLUMNS)):
        self.path = Path(path)
        self.columns = list(columns)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, epoch: int, step: int, components: Dict[str, Union[torch.Tensor, float]]):
        row = {'epoch': epoch, 'step': step}
        for name in self.columns[2:]:
            value = components.get(name, 0.0)
            row[name] = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        frame = pd.DataFrame([row], columns=self.columns)
        frame.to_csv(self.path, mode='a', header=not self.path.exists(), index=False)

    def read(self) -> pd.DataFrame:
        if not self.path.exists():
            return pd.DataFrame(columns=self.columns)
        return pd.read_csv(self.path)
