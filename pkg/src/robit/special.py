"""Digamma, trigamma and log-gamma.

Recurrence shifts the argument above 10 and an asymptotic (Bernoulli) series
finishes the job; the truncation error there is below 1e-16.
"""
import math

from .errors import InvalidArgument

_SHIFT = 10.0

# B_{2k} / (2k) for k = 1..7
_DIGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)

# B_{2k} for k = 1..7
_TRIGAMMA_COEF = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def _check(x):
    x = float(x)
    if not (x > 0.0 and math.isfinite(x)):
        raise InvalidArgument(f"argument must be positive and finite, got {x}")
    return x


def log_gamma_fn(x):
    return math.lgamma(_check(x))


def digamma(x):
    x = _check(x)
    acc = 0.0
    while x < _SHIFT:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for c in _DIGAMMA_COEF:
        series += c * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x):
    x = _check(x)
    acc = 0.0
    while x < _SHIFT:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv2 * inv  # x^-(2k+1)
    for c in _TRIGAMMA_COEF:
        series += c * power
        power *= inv2
    return acc + inv + 0.5 * inv2 + series
