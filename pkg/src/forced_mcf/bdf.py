"""Linearly implicit BDF: coefficients, discrete derivative, extrapolation.

Coefficient sequences are indexed backwards in time: ``delta[j]`` multiplies
``u^{n-j}`` and ``gamma[j]`` multiplies ``u^{n-1-j}``.
"""
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

MAX_ORDER = 5


def _delta_exact(q):
    # sum_{l=1}^q (1/l) (1 - z)^l
    coeffs = [Fraction(0)] * (q + 1)
    for l in range(1, q + 1):
        for j in range(l + 1):
            coeffs[j] += Fraction((-1) ** j * comb(l, j), l)
    return coeffs


def _gamma_exact(q):
    # (1 - (1 - z)^q) / z
    return [Fraction((-1) ** j * comb(q, j + 1)) for j in range(q)]


def coefficients(q, allow_order_6=False):
    """``(delta, gamma)`` of the q-step method as float arrays."""
    top = 6 if allow_order_6 else MAX_ORDER
    if not (1 <= q <= top):
        raise ValueError(f"BDF order must be in 1..{top}, got {q}")
    delta = np.array([float(c) for c in _delta_exact(q)])
    gamma = np.array([float(c) for c in _gamma_exact(q)])
    return delta, gamma


@dataclass(frozen=True)
class BdfScheme:
    q: int
    tau: float
    allow_order_6: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("time step must be positive")
        coefficients(self.q, self.allow_order_6)

    @property
    def delta(self):
        return coefficients(self.q, self.allow_order_6)[0]

    @property
    def gamma(self):
        return coefficients(self.q, self.allow_order_6)[1]


def discrete_derivative(values, delta, tau):
    """``(1/tau) sum_j delta_j u^{n-j}`` with ``values = [u^{n-q}, ..., u^n]``."""
    q = len(delta) - 1
    if len(values) < q + 1:
        raise ValueError(f"need {q + 1} values, got {len(values)}")
    vals = values[-(q + 1):]
    acc = delta[0] * np.asarray(vals[-1], dtype=float)
    for j in range(1, q + 1):
        acc = acc + delta[j] * np.asarray(vals[-1 - j])
    return acc / tau


def extrapolate(values, gamma):
    """``sum_j gamma_j u^{n-1-j}`` with ``values = [u^{n-q}, ..., u^{n-1}]``."""
    q = len(gamma)
    if len(values) < q:
        raise ValueError(f"need {q} values, got {len(values)}")
    vals = values[-q:]
    acc = gamma[0] * np.asarray(vals[-1], dtype=float)
    for j in range(1, q):
        acc = acc + gamma[j] * np.asarray(vals[-1 - j])
    return acc


def history_sum(values, delta):
    """``sum_{j>=1} delta_j u^{n-j}`` for past values ``[u^{n-q}, ..., u^{n-1}]``."""
    q = len(delta) - 1
    vals = values[-q:]
    acc = delta[1] * np.asarray(vals[-1], dtype=float)
    for j in range(2, q + 1):
        acc = acc + delta[j] * np.asarray(vals[-j])
    return acc


class History:
    """Sliding window of the last ``q`` states (oldest first)."""

    def __init__(self, q):
        self.q = q
        self._items = deque(maxlen=q)

    def push(self, item):
        self._items.append(item)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __iter__(self):
        return iter(self._items)

    @property
    def full(self):
        return len(self._items) == self.q

    def values(self, attr):
        return [getattr(s, attr) for s in self._items]
