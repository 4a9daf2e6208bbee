from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from uflossmri.config.schemas import UflossConfig
from uflossmri.eval.metrics import nrmse
from uflossmri.eval.perturb import StudyCurve, perturb_blur
from uflossmri.shared.tensors import channels_to_complex, complex_dtype_for, complex_to_channels
from uflossmri.shared.tools import Logger, null_logger
from uflossmri.ufloss.loss import frozen, ufloss

DIVERGENCE_PATIENCE = 10


def _descent(
    x_o: np.ndarray,
    start: np.ndarray,
    alpha: float,
    steps: int,
    net: nn.Module,
    cfg: UflossConfig,
) -> tuple[np.ndarray, list[float], list[float]]:
    parameter = next(net.parameters())
    dtype = complex_dtype_for(parameter.dtype)
    target = torch.as_tensor(np.asarray(x_o)).to(dtype=dtype, device=parameter.device)
    current = complex_to_channels(
        torch.as_tensor(np.asarray(start)).to(dtype=dtype, device=parameter.device)
    ).detach()

    losses: list[float] = []
    errors: list[float] = []
    rises = 0
    for step in range(steps + 1):
        leaf = current.clone().requires_grad_(True)
        loss = ufloss(target, channels_to_complex(leaf), net, cfg, (0, 0))
        value = float(loss.detach())
        if not np.isfinite(value):
            raise RuntimeError(f"Non-finite UFLoss at descent step {step}; reduce alpha (currently {alpha})")
        if losses and value > losses[-1]:
            rises += 1
            if rises >= DIVERGENCE_PATIENCE:
                raise RuntimeError(
                    f"UFLoss descent diverged: loss rose {rises} consecutive steps at step {step}; "
                    f"use a smaller alpha than {alpha}"
                )
        else:
            rises = 0
        losses.append(value)
        errors.append(nrmse(channels_to_complex(current).cpu().numpy(), x_o))
        if step == steps:
            break
        (grad,) = torch.autograd.grad(loss, leaf)
        current = (current - alpha * grad).detach()
    return channels_to_complex(current).cpu().numpy().astype(np.complex128), losses, errors


def deblur_descent(
    x_o: np.ndarray,
    R0: float = 4.0,
    alpha: float = 20.0,
    steps: int = 200,
    net: nn.Module | None = None,
    cfg: UflossConfig | None = None,
    x_start: np.ndarray | None = None,
    logger: Logger = null_logger,
) -> tuple[np.ndarray, StudyCurve]:
    """Gradient descent on UFLoss(x_o, x_p) starting from the k-space blurred x_o.

    The grid shift is fixed at (0, 0). The returned curve has the iteration
    index as x, UFLoss as y and NRMSE to x_o alongside.
    """
    if net is None or cfg is None:
        raise ValueError("deblur_descent needs a feature net and a UFLoss config")
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    x_o = np.asarray(x_o)
    start = perturb_blur(x_o, R0) if x_start is None else np.asarray(x_start)
    with frozen(net):
        final, losses, errors = _descent(x_o, start, alpha, steps, net, cfg)
    logger(
        f"deblur: R0={R0} alpha={alpha} steps={steps} "
        f"ufloss {losses[0]:.5f} -> {losses[-1]:.5f}, nrmse {errors[0]:.4f} -> {errors[-1]:.4f}"
    )
    curve = StudyCurve(
        tuple(float(k) for k in range(len(losses))),
        tuple(losses),
        tuple(errors),
        label="deblur",
    )
    return final, curve


def line_search_alpha(
    x_o: np.ndarray,
    net: nn.Module,
    cfg: UflossConfig,
    alpha: float = 20.0,
    R0: float = 4.0,
    trial_steps: int = 10,
    factors: Sequence[float] = (0.1, 1.0, 10.0),
) -> float:
    """Pick the step size among ``alpha * factors`` with the lowest UFLoss after a short trial run.

    Candidates that diverge are skipped; falls back to the smallest candidate.
    """
    x_o = np.asarray(x_o)
    start = perturb_blur(x_o, R0)
    candidates = sorted(alpha * factor for factor in factors)
    best_alpha, best_loss = candidates[0], float("inf")
    with frozen(net):
        for candidate in candidates:
            try:
                _, losses, _ = _descent(x_o, start, candidate, trial_steps, net, cfg)
            except RuntimeError:
                continue
            if losses[-1] < best_loss:
                best_alpha, best_loss = candidate, losses[-1]
    return float(best_alpha)
