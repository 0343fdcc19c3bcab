"""Partial monotonicity design
===============================

Synthetic data for the continuous-pair instrument ``Z = (C, W)``. The
thresholds are ``K_1* ~ U[w_lo, w_hi]`` and ``K_0* = w_lo + V (K_1* - w_lo)``
with ``V ~ U[0, 1]``, so ``K_0* <= K_1*``; ``C`` is Bernoulli, ``W`` is
uniform on ``[w_lo, w_hi]`` and ``T = 1{K_C* > W}``.

``Y*(1) = y1_intercept + y1_slope K_1* + noise`` and ``Y*(0)`` is pure
noise, both with standard deviation ``noise``. A binary covariate is drawn
independently of everything else.

Because ``K_1*`` is uniform and ``Y*(1)`` is linear in it, the smoothed
targets of threshold functionals of ``K_1*`` equal their unsmoothed values
whenever ``[a - h, b + h]`` lies inside the support.
"""
from dataclasses import dataclass, field
from typing import Tuple, Optional

import numpy as np

from po_forge.base import ModelError
from po_forge.model import ModelSpec, preset_models
from po_forge.estimate import Dataset
from po_forge.utils import rng_stream

__all__ = ('ThresholdTruth', 'PartialMonotonicityDgp')


@dataclass(frozen=True)
class ThresholdTruth:

    k0: np.ndarray

    k1: np.ndarray

    potential: np.ndarray
    '''``n x 2`` potential outcomes ``Y*(0), Y*(1)``.
    '''


@dataclass(frozen=True)
class PartialMonotonicityDgp:

    model: ModelSpec = field(
        default_factory=lambda: preset_models()['pmono'])

    c_probability: float = 0.5

    x_probability: float = 0.5

    y1_intercept: float = 1.

    y1_slope: float = 1.

    noise: float = 1.

    seed: int = 0

    name: str = 'pmono'

    @property
    def support(self) -> Tuple[float, float]:
        inst = self.model.instruments
        return inst.w_lo, inst.w_hi

    def generate(self, n: int, seed: Optional[int] = None
                 ) -> Tuple[Dataset, ThresholdTruth]:
        if n < 1:
            raise ModelError(f'Cannot generate {n} observations')
        w_lo, w_hi = self.support
        rng = rng_stream(self.seed if seed is None else seed)
        x = (rng.random(n) < self.x_probability).astype(float)
        k1 = rng.uniform(w_lo, w_hi, n)
        k0 = w_lo + rng.random(n) * (k1 - w_lo)
        c = (rng.random(n) < self.c_probability).astype(int)
        w = rng.uniform(w_lo, w_hi, n)
        t = (np.where(c == 1, k1, k0) > w).astype(int)

        potential = np.empty((n, 2))
        potential[:, 0] = self.noise * rng.standard_normal(n)
        potential[:, 1] = self.y1_intercept + self.y1_slope * k1 + \
            self.noise * rng.standard_normal(n)
        y = potential[np.arange(n), t]

        data = Dataset.from_arrays(
            y, t, c, x[:, np.newaxis], w=w,
            treatments=self.model.treatments.labels,
            instruments=self.model.instruments.values)
        return data, ThresholdTruth(k0=k0, k1=k1, potential=potential)

    def _check_window(self, a: float, b: float, h: float):
        w_lo, w_hi = self.support
        if not w_lo <= a - h < b + h <= w_hi:
            raise ModelError(
                f'The smoothing window [{a - h}, {b + h}] leaves the '
                f'support [{w_lo}, {w_hi}]')

    def threshold_probability(self, a: float, b: float, h: float = 0.
                              ) -> float:
        """``P(a <= K_1* <= b)``, also the value of its smoothed version at
        bandwidth ``h``.
        """
        self._check_window(a, b, h)
        w_lo, w_hi = self.support
        return (b - a) / (w_hi - w_lo)

    def threshold_outcome(self, a: float, b: float, treatment: str = '1',
                          h: float = 0.) -> float:
        """``E[Y*(treatment) 1{a <= K_1* <= b}]`` (unclipped outcomes).
        """
        self._check_window(a, b, h)
        if treatment == '0':
            return 0.
        if treatment != '1':
            raise ModelError(f'Unknown treatment "{treatment}"')
        w_lo, w_hi = self.support
        return (self.y1_intercept * (b - a) +
                self.y1_slope * (b ** 2 - a ** 2) / 2) / (w_hi - w_lo)
