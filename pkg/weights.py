"""weights.py - dyadic weight constants

weight_condition evaluates the vector weight condition for the weighted BHT bound
L^q1(w1^q1) x L^q2(w2^q2) -> L^q(w^q), w = w1 w2, as a supremum over every dyadic Q of the grid.
muckenhoupt_ap and reverse_holder give the dyadic A_p and RH_q characteristics.
"""
from __future__ import annotations
import logging
import math
from typing import Any, Iterator

import numpy as np

from grid import GridSpec, as_signal
from operators import dual_exponent

log = logging.getLogger(__name__)


def _weight(w: Any, name: str) -> np.ndarray:
    arr = as_signal(w)
    if np.iscomplexobj(arr):
        raise ValueError(f'weight {name} must be real')
    arr = arr.astype(float)
    if np.any(arr <= 0):
        raise ValueError(f'weight {name} must be strictly positive')
    return arr


def _dyadic_averages(a: np.ndarray) -> Iterator[np.ndarray]:
    """avg_Q a for every dyadic Q, one array per scale k = 0..J."""
    g = GridSpec.for_signal(a)
    for k in range(g.j_levels + 1):
        yield a.reshape(1 << k, -1).mean(axis=1)


def _power_average(a: np.ndarray, inner: float, outer: float) -> Iterator[np.ndarray]:
    """(avg_Q a^inner)^outer, computed per scale."""
    for means in _dyadic_averages(a ** inner):
        yield means ** outer


def weight_condition(w1: Any, w2: Any, q1: float, q2: float, q: float,
                     s1: float, s2: float, s3: float) -> float:
    """sup_Q of the three-factor product

        (avg_Q w1^(1/(1/q1-1/s1)))^(1/s1-1/q1) (avg_Q w2^(1/(1/q2-1/s2)))^(1/s2-1/q2)
        (avg_Q w^(1/(1/s3-1/(q**)')))^(1/s3-1/(q**)')

    with q** = max(1, q). For q <= 1 the last factor is (avg_Q w^s3)^(1/s3).
    """
    a = _weight(w1, 'w1')
    b = _weight(w2, 'w2')
    if len(a) != len(b):
        raise ValueError('weights live on different grids')
    for name, value in (('q1', q1), ('q2', q2), ('q', q), ('s1', s1), ('s2', s2), ('s3', s3)):
        if not value > 0:
            raise ValueError(f'{name} must be positive, got {value}')
    e1 = 1 / s1 - 1 / q1
    e2 = 1 / s2 - 1 / q2
    e3 = 1 / s3 - (0.0 if q <= 1 else 1 / dual_exponent(q))
    if not e1 > 0:
        raise ValueError(f'need 1/q1 < 1/s1, got q1={q1}, s1={s1}')
    if not e2 > 0:
        raise ValueError(f'need 1/q2 < 1/s2, got q2={q2}, s2={s2}')
    if not e3 > 0:
        raise ValueError(f'need 1/s3 > 1/(q**)\', got s3={s3}, q={q}')
    factors = zip(_power_average(a, -1 / e1, e1), _power_average(b, -1 / e2, e2),
                  _power_average(a * b, 1 / e3, e3))
    best = max(float(np.max(x * y * z)) for x, y, z in factors)
    log.debug('weight condition (%s, %s, %s; %s, %s, %s) = %.6g', q1, q2, q, s1, s2, s3, best)
    return best


def muckenhoupt_ap(w: Any, p: float) -> float:
    """Dyadic [w]_{A_p} = sup_Q (avg_Q w)(avg_Q w^(1-p'))^(p-1); p = 1 uses avg_Q w / min_Q w."""
    arr = _weight(w, 'w')
    if p < 1:
        raise ValueError(f'A_p needs p >= 1, got {p}')
    best = 0.0
    g = GridSpec.for_signal(arr)
    for k, means in enumerate(_dyadic_averages(arr)):
        if p == 1:
            dual = 1 / arr.reshape(1 << k, -1).min(axis=1)
        elif math.isinf(p):
            dual = np.exp(-np.log(arr).reshape(1 << k, -1).mean(axis=1))
        else:
            dual = (arr ** (-1 / (p - 1))).reshape(1 << k, -1).mean(axis=1) ** (p - 1)
        best = max(best, float(np.max(means * dual)))
    log.debug('A_%s constant over %d scales = %.6g', p, g.j_levels + 1, best)
    return best


def reverse_holder(w: Any, q: float) -> float:
    """Dyadic RH_q constant sup_Q (avg_Q w^q)^(1/q) / avg_Q w."""
    arr = _weight(w, 'w')
    if not q >= 1:
        raise ValueError(f'RH_q needs q >= 1, got {q}')
    best = 0.0
    for k, means in enumerate(_dyadic_averages(arr)):
        blocks = arr.reshape(1 << k, -1)
        top = blocks.max(axis=1) if math.isinf(q) else (blocks ** q).mean(axis=1) ** (1 / q)
        best = max(best, float(np.max(top / means)))
    return best
