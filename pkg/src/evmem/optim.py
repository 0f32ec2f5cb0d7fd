"""Adam with decoupled weight decay, global-norm clipping, lr schedules.

Weight decay multiplies parameters by (1 - lr * wd) directly instead of
entering the gradient, so decay strength does not pass through the
moment estimates. Per-parameter lr multipliers support layer-wise decay
during finetuning.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale all gradient arrays in place so their joint L2 norm is at
    most max_norm; returns the scale that was applied (1.0 if none)."""
    grads = [g for g in grads if g is not None]
    if max_norm is None or not grads:
        return 1.0
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm or total == 0.0:
        return 1.0
    scale = max_norm / total
    for g in grads:
        g *= scale
    return scale


class Adam:
    """Adam over a name -> Tensor parameter dict.

    step() consumes .grad buffers (parameters with grad None are left
    untouched, including their decay). lr_scale maps parameter names to
    multipliers on the step's learning rate.
    """

    def __init__(
        self,
        params: dict,
        lr: float,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        clip_norm: float | None = None,
        lr_scale: dict | None = None,
    ):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.clip_norm = clip_norm
        self.lr_scale = dict(lr_scale or {})
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> float:
        """One update; returns the clip scale that was applied."""
        lr = self.lr if lr is None else float(lr)
        # norm accumulation in sorted-name order, so a params dict rebuilt
        # from a (sorted) checkpoint clips bit-identically to the original
        scale = clip_global_norm(
            [self.params[k].grad for k in sorted(self.params)], self.clip_norm
        )
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            lr_p = lr * self.lr_scale.get(name, 1.0)
            p.data -= lr_p * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                p.data *= 1.0 - lr_p * self.weight_decay
        return scale

    def state_dict(self) -> dict:
        """Optimizer state as flat named float64 arrays (checkpointable)."""
        state = {"opt.step": np.array(float(self.step_count))}
        for name in self.params:
            state[f"opt.m.{name}"] = self.m[name].copy()
            state[f"opt.v.{name}"] = self.v[name].copy()
        return state

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(np.asarray(state["opt.step"]).item())
        for name in self.params:
            self.m[name] = np.array(state[f"opt.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(state[f"opt.v.{name}"], dtype=np.float64)


def cosine_warmup_lr(
    step: int, total_steps: int, base_lr: float, warmup_steps: int, min_lr: float = 0.0
) -> float:
    """Linear warmup to base_lr over warmup_steps, then half-cosine decay
    to min_lr at total_steps. step is 0-based."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    if total_steps <= warmup_steps:
        return min_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    progress = min(max(progress, 0.0), 1.0)
    return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def exponential_lr(
    step: int, steps_per_epoch: int, base_lr: float, decay: float = 0.99
) -> float:
    """base_lr * decay^(completed epochs)."""
    if steps_per_epoch <= 0:
        raise ValueError("steps_per_epoch must be > 0")
    return base_lr * decay ** (step // steps_per_epoch)


def constant_lr(step: int, base_lr: float) -> float:
    return base_lr


def make_schedule(kind: str, base_lr: float, total_steps: int, warmup_steps: int = 0,
                  steps_per_epoch: int = 1, decay: float = 0.99, min_lr: float = 0.0):
    """Bind a named schedule into a step -> lr callable."""
    if kind == "cosine":
        return lambda s: cosine_warmup_lr(s, total_steps, base_lr, warmup_steps, min_lr)
    if kind == "exponential":
        return lambda s: exponential_lr(s, steps_per_epoch, base_lr, decay)
    if kind == "constant":
        return lambda s: base_lr
    raise ValueError(f"unknown schedule {kind!r}")
