"""Langevin sampling of negatives from the model's input density.

Chains start from a Gaussian mixture fitted to the training pool (or uniform
noise) and follow x' = x - (alpha/2) * grad E(x) + noise_std * eta. An
optional mode freezes the upper-stage adjoint for several consecutive
updates, so only the first-stage backward pass runs per update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import NumericError, ValidationError
from .models import ModelState

# chain components beyond this magnitude abort when clamping is off
DIVERGENCE_BOUND = 100.0

VARIANCE_FLOOR = 1e-4


@dataclass(frozen=True)
class SGLDConfig:
    """Chain settings.

    step_size is the alpha of the update rule; the gradient coefficient is
    alpha/2, so the practical default alpha=2.0 walks one unit per unit
    gradient with small decoupled noise. Matched-noise chains set
    noise_std=sqrt(alpha) instead.
    """

    steps: int = 20
    step_size: float = 2.0
    noise_std: float = 0.01
    init_mode: str = "informative"
    yopo: bool = False
    yopo_inner_steps: int = 5
    clamp: bool = True

    def __post_init__(self):
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if self.step_size <= 0:
            raise ValidationError("step_size must be positive")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be nonnegative")
        if self.init_mode not in ("informative", "uniform-noise"):
            raise ValidationError(f"unknown init_mode '{self.init_mode}'")
        if self.yopo_inner_steps < 1:
            raise ValidationError("yopo_inner_steps must be >= 1")


@dataclass(frozen=True)
class GaussianMixtureInit:
    """Per-component diagonal Gaussians for chain initialization."""

    means: np.ndarray      # (C, D)
    variances: np.ndarray  # (C, D), floored
    weights: np.ndarray    # (C,), sums to 1

    def __post_init__(self):
        m = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if m.ndim != 2 or v.shape != m.shape or w.shape != (m.shape[0],):
            raise ValidationError("mixture component shapes are inconsistent")
        if np.any(v < VARIANCE_FLOOR - 1e-15):
            raise ValidationError(f"variances must be >= {VARIANCE_FLOOR}")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValidationError("weights must be a probability vector")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw count points; component choice then a diagonal Gaussian."""
        comp = rng.choice(len(self.weights), size=count, p=self.weights)
        eps = rng.standard_normal((count, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp]) * eps

    def mean(self) -> np.ndarray:
        return self.weights @ self.means


def fit_informative_init(features: np.ndarray,
                         labels: np.ndarray | None = None) -> GaussianMixtureInit:
    """Per-class empirical moments when labels exist, else one component.

    Variances are per-dimension and floored so degenerate pools still give
    usable chains.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValidationError("informative init needs at least one sample")
    if labels is None:
        means = x.mean(axis=0, keepdims=True)
        var = x.var(axis=0, keepdims=True)
        weights = np.array([1.0])
    else:
        y = np.asarray(labels)
        if y.shape != (x.shape[0],):
            raise ValidationError("labels length does not match features")
        classes = np.unique(y)
        means = np.stack([x[y == k].mean(axis=0) for k in classes])
        var = np.stack([x[y == k].var(axis=0) for k in classes])
        weights = np.array([(y == k).sum() for k in classes], dtype=np.float64)
        weights /= weights.sum()
    return GaussianMixtureInit(means=means,
                               variances=np.maximum(var, VARIANCE_FLOOR),
                               weights=weights)


def sgld_step(x: np.ndarray, grad_e: np.ndarray, step_size: float,
              noise_std: float, rng: np.random.Generator | None = None,
              clamp: bool = False) -> np.ndarray:
    """One Langevin update; rng is consumed only when noise_std > 0."""
    x = np.asarray(x, dtype=np.float64)
    grad_e = np.asarray(grad_e, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(grad_e))):
        raise NumericError("non-finite chain state or gradient")
    out = x - 0.5 * step_size * grad_e
    if noise_std > 0:
        out = out + noise_std * rng.standard_normal(x.shape)
    if clamp:
        out = np.clip(out, -1.0, 1.0)
    return out


def _energy_grad_x(net, xt: torch.Tensor, adjoint: torch.Tensor | None):
    """Gradient of summed energy w.r.t. inputs, split at the stage boundary.

    The upper-stage adjoint dE/dh is computed only when not supplied, so a
    caller can reuse it across consecutive updates; the first-stage backward
    always runs. Recomputing the adjoint every call gives the exact full
    gradient through the same code.
    """
    xt = xt.detach().requires_grad_(True)
    h = net.first_stage(xt)
    if adjoint is None:
        hd = h.detach().requires_grad_(True)
        energy = -torch.logsumexp(net.upper_stage(hd), dim=1).sum()
        (adjoint,) = torch.autograd.grad(energy, hd)
        adjoint = adjoint.detach()
    (grad_x,) = torch.autograd.grad(h, xt, grad_outputs=adjoint)
    return grad_x.detach(), adjoint


def run_chain(state: ModelState, config: SGLDConfig, batch: int,
              rng: np.random.Generator,
              init: GaussianMixtureInit | None = None) -> np.ndarray:
    """Run one batch of chains and return the final particles (batch, D).

    Informative mode draws starts from the supplied mixture; uniform mode
    from U[-1,1]^D. Model parameters are read-only throughout.
    """
    if batch < 1:
        raise ValidationError("batch must be >= 1")
    dim = state.arch.in_dim
    if config.init_mode == "informative":
        if init is None:
            raise ValidationError("informative init requires a fitted mixture")
        if init.dim != dim:
            raise ValidationError("mixture dimension does not match model input")
        x = init.sample(batch, rng)
    else:
        x = rng.uniform(-1.0, 1.0, size=(batch, dim))
    if config.clamp:
        x = np.clip(x, -1.0, 1.0)

    refresh = config.yopo_inner_steps if config.yopo else 1
    adjoint = None
    for step in range(config.steps):
        if step % refresh == 0:
            adjoint = None
        xt = torch.as_tensor(x, dtype=state.arch.torch_dtype)
        grad_t, adjoint = _energy_grad_x(state.net, xt, adjoint)
        grad = grad_t.numpy().astype(np.float64)
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite chain gradient at step {step}")
        x = sgld_step(x, grad, config.step_size, config.noise_std, rng,
                      clamp=config.clamp)
        if not config.clamp and np.max(np.abs(x)) > DIVERGENCE_BOUND:
            raise NumericError(f"chain diverged at step {step}")
    return x
