"""Random variates used by the samplers.

Every sampler takes a ``numpy.random.Generator``; :func:`rng_stream` builds the
generator for a given (seed, stream id) pair so chains never share a stream.
"""
import math

import numpy as np
from scipy import linalg
from scipy.special import ndtr, ndtri

from .errors import InvalidArgument, NumericalError
from .special import digamma, log_gamma_fn, trigamma  # noqa: F401  (re-exported)

# below this untruncated mass the inverse-CDF route loses all precision
_MIN_CDF_MASS = 1e-10


def rng_stream(seed, stream_id=0):
    """Independent, reproducible generator for chain ``stream_id`` of run ``seed``."""
    seed = int(seed)
    stream_id = int(stream_id)
    if seed < 0 or stream_id < 0:
        raise InvalidArgument("seed and stream id must be non-negative integers")
    ss = np.random.SeedSequence(seed, spawn_key=(stream_id,))
    return np.random.Generator(np.random.PCG64(ss))


def _tail_rejection(lo, hi, rng):
    """Standard normal restricted to [lo, hi] with 0 <= lo < hi (hi may be inf).

    Uniform proposals for narrow intervals, exponential proposals
    (Robert, 1995) otherwise.
    """
    out = np.empty(lo.shape)
    narrow = (hi - lo) * np.maximum(lo, 1.0) <= 1.0
    lam = 0.5 * (lo + np.sqrt(lo * lo + 4.0))
    pending = np.arange(lo.size)
    while pending.size:
        a, b = lo[pending], hi[pending]
        nar = narrow[pending]
        z = np.empty(pending.size)
        width = np.where(nar, b - a, 0.0)
        z[nar] = a[nar] + width[nar] * rng.random(int(nar.sum()))
        wide = ~nar
        z[wide] = a[wide] + rng.exponential(size=int(wide.sum())) / lam[pending][wide]
        log_acc = np.where(
            nar,
            0.5 * (a * a - z * z),
            -0.5 * (z - lam[pending]) ** 2,
        )
        ok = (z <= b) & (np.log(rng.random(pending.size)) <= log_acc)
        out[pending[ok]] = z[ok]
        pending = pending[~ok]
    return out


def truncated_normal(mu, sigma, lower, upper, rng):
    """Vectorised draws from N(mu, sigma^2) restricted to [lower, upper].

    Arguments broadcast against each other. ``sigma`` is a standard deviation.
    """
    mu, sigma, lower, upper = np.broadcast_arrays(
        np.asarray(mu, float), np.asarray(sigma, float),
        np.asarray(lower, float), np.asarray(upper, float))
    shape = mu.shape
    mu, sigma = mu.ravel(), sigma.ravel()
    lower, upper = lower.ravel(), upper.ravel()

    a = (lower - mu) / sigma
    b = (upper - mu) / sigma
    # work on the side of zero where the CDF keeps relative precision
    flip = a > 0
    a, b = np.where(flip, -b, a), np.where(flip, -a, b)
    pa, pb = ndtr(a), ndtr(b)
    mass = pb - pa

    z = np.empty(mu.size)
    easy = mass >= _MIN_CDF_MASS
    if easy.any():
        u = rng.random(int(easy.sum()))
        z[easy] = ndtri(pa[easy] + u * mass[easy])
    hard = ~easy
    if hard.any():
        ah, bh = a[hard], b[hard]
        straddle = (ah < 0) & (bh > 0)
        # map one-sided regions into the right tail
        lo = np.where(straddle, ah, -bh)
        hi = np.where(straddle, bh, -ah)
        zh = np.empty(ah.size)
        if straddle.any():
            # tiny mass across zero means a tiny interval: uniform proposal
            zh[straddle] = _narrow_uniform(lo[straddle], hi[straddle], rng)
        side = ~straddle
        if side.any():
            zh[side] = -_tail_rejection(lo[side], hi[side], rng)
        z[hard] = zh
    z = np.clip(z, a, b)
    z = np.where(flip, -z, z)
    x = np.clip(mu + sigma * z, lower, upper)
    return x.reshape(shape)


def _narrow_uniform(lo, hi, rng):
    out = np.empty(lo.shape)
    pending = np.arange(lo.size)
    while pending.size:
        a, b = lo[pending], hi[pending]
        z = a + (b - a) * rng.random(pending.size)
        ok = np.log(rng.random(pending.size)) <= -0.5 * z * z
        out[pending[ok]] = z[ok]
        pending = pending[~ok]
    return out


def sample_truncated_normal(mu, sigma2, lower, upper, rng):
    """One draw from N(mu, sigma2) restricted to [lower, upper]."""
    if not math.isfinite(mu):
        raise InvalidArgument(f"mu must be finite, got {mu}")
    if not (sigma2 > 0 and math.isfinite(sigma2)):
        raise InvalidArgument(f"sigma2 must be positive, got {sigma2}")
    if not lower < upper:
        raise InvalidArgument(f"need lower < upper, got [{lower}, {upper}]")
    return float(truncated_normal(mu, math.sqrt(sigma2), lower, upper, rng))


def sample_gamma(shape, rate, rng, size=None):
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise InvalidArgument("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / np.asarray(rate, float), size=size)


def sample_scaled_chi2(nu, rng, size=None):
    """chi^2_nu / nu, i.e. Gamma(nu/2, rate nu/2)."""
    nu = np.asarray(nu, float)
    if np.any(~(nu > 0)):
        raise InvalidArgument(f"degrees of freedom must be positive, got {nu}")
    return rng.gamma(nu / 2.0, 2.0 / nu, size=size)


def cholesky_spd(matrix, what="matrix"):
    matrix = np.asarray(matrix, float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidArgument(f"{what} must be square, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidArgument(f"{what} has non-finite entries")
    scale = max(1.0, np.abs(matrix).max())
    if np.abs(matrix - matrix.T).max() > 1e-12 * scale:
        raise InvalidArgument(f"{what} is not symmetric")
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise InvalidArgument(f"{what} is not positive definite") from None


def sample_mvn(mean, cov, rng):
    mean = np.asarray(mean, float)
    chol = cholesky_spd(cov, "covariance")
    return mean + chol @ rng.standard_normal(mean.size)


def sample_inverse_wishart(df, scale, rng):
    """Inverse-Wishart draw with mean scale / (df - d - 1).

    Bartlett decomposition of the Wishart(df, scale^-1) precision, inverted
    through its triangular factor.
    """
    scale = np.asarray(scale, float)
    d = scale.shape[0] if scale.ndim == 2 else -1
    chol_scale = cholesky_spd(scale, "inverse-Wishart scale")
    if not df > d - 1:
        raise InvalidArgument(f"inverse-Wishart df must exceed {d - 1}, got {df}")
    # L L^T = scale^{-1}; Wishart precision = (L A)(L A)^T with Bartlett factor A
    inv_scale = linalg.cho_solve((chol_scale, True), np.eye(d))
    chol_prec = np.linalg.cholesky(0.5 * (inv_scale + inv_scale.T))
    bart = np.zeros((d, d))
    bart[np.diag_indices(d)] = np.sqrt(rng.chisquare(df - np.arange(d)))
    low = np.tril_indices(d, -1)
    bart[low] = rng.standard_normal(len(low[0]))
    factor = chol_prec @ bart
    if not np.all(np.abs(np.diag(factor)) > 0):
        raise NumericalError("inverse-Wishart draw is singular", df=df)
    inv_factor = linalg.solve_triangular(factor, np.eye(d), lower=True)
    sigma = inv_factor.T @ inv_factor
    return 0.5 * (sigma + sigma.T)
