"""Adam optimizer with the step-decay learning-rate schedule used in training."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import NonFiniteGradientError, ShapeError


class StepDecaySchedule:
    """Piecewise-constant learning rate.

    Starts at ``base`` and switches to ``rates[i]`` once the step counter
    passes ``boundaries[i]``.  Defaults follow the training recipe: 1e-4
    decaying to 1e-5 after 20k steps and 5e-6 after 40k.
    """

    def __init__(self, base: float = 1e-4, boundaries=(20_000, 40_000), rates=(1e-5, 5e-6)):
        if len(boundaries) != len(rates):
            raise ValueError("boundaries and rates must have equal length")
        self.base = float(base)
        self.boundaries = tuple(int(b) for b in boundaries)
        self.rates = tuple(float(r) for r in rates)

    def __call__(self, step: int) -> float:
        lr = self.base
        for boundary, rate in zip(self.boundaries, self.rates):
            if step > boundary:
                lr = rate
        return lr


class Adam:
    """Bias-corrected Adam over a fixed list of leaf parameters.

    ``step`` consumes a ``{tensor: ndarray}`` gradient map (missing entries
    count as zero).  A non-finite gradient rejects the whole step before any
    parameter is touched.
    """

    def __init__(self, params, schedule: StepDecaySchedule | None = None,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        self.schedule = schedule if schedule is not None else StepDecaySchedule()
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros(p.shape) for p in self.params]
        self._v = [np.zeros(p.shape) for p in self.params]

    def step(self, grads) -> float:
        """Apply one update; returns the learning rate used."""
        resolved = []
        for p in self.params:
            g = grads.get(p)
            if g is None:
                g = np.zeros(p.shape)
            else:
                g = np.asarray(g, dtype=np.float64)
                if g.shape != p.shape:
                    raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
                if not np.all(np.isfinite(g)):
                    raise NonFiniteGradientError("non-finite gradient; step rejected")
            resolved.append(g)

        self.step_count += 1
        t = self.step_count
        lr = self.schedule(t)
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for i, (p, g) in enumerate(zip(self.params, resolved)):
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self._m[i] / c1
            v_hat = self._v[i] / c2
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return lr
