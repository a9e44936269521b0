"""Gamma proposals for the non-conjugate conditionals of the DOF and of the NECT scales.

Both conditionals are log-concave-ish densities on (0, inf). The proposal is
the Gamma density whose log has the same mode and the same curvature at the
mode as the target; it is then used inside a Metropolised independence step.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ModeNotFound, NumericalError
from .special import digamma, log_gamma_fn, trigamma

log = logging.getLogger(__name__)

NU_MIN, NU_MAX = 0.05, 500.0


@dataclass(frozen=True)
class GammaProposal:
    alpha_star: float
    beta_star: float

    def __post_init__(self):
        if not (self.alpha_star > 0 and self.beta_star > 0):
            raise NumericalError("degenerate Gamma proposal",
                                 alpha_star=self.alpha_star, beta_star=self.beta_star)

    def log_kernel(self, x):
        """Unnormalised log density (alpha*-1) log x - beta* x."""
        return (self.alpha_star - 1.0) * np.log(x) - self.beta_star * x

    @property
    def mode(self):
        return (self.alpha_star - 1.0) / self.beta_star

    def draw(self, rng, size=None):
        return rng.gamma(self.alpha_star, 1.0 / self.beta_star, size=size)


# -- degrees of freedom -------------------------------------------------------

@dataclass(frozen=True)
class NuTargetParams:
    """Sufficient statistics of the DOF conditional given the latent scales."""

    N: int
    xi: float
    alpha0: float

    def __post_init__(self):
        if self.N < 0 or not self.alpha0 > 0:
            raise InvalidArgument("need N >= 0 and alpha0 > 0")
        if not math.isfinite(nu_log_target(1.0, self)):
            raise NumericalError("DOF log target is not finite", N=self.N, xi=self.xi)

    @classmethod
    def from_scales(cls, q, alpha0, beta0):
        q = np.asarray(q, float)
        xi = beta0 + 0.5 * q.sum() - 0.5 * np.log(q).sum()
        return cls(N=int(q.size), xi=float(xi), alpha0=float(alpha0))


def nu_log_target(nu, p):
    if not nu > 0:
        raise InvalidArgument(f"nu must be positive, got {nu}")
    half = 0.5 * nu
    return (p.N * half * math.log(half) - p.N * log_gamma_fn(half)
            + (p.alpha0 - 1.0) * math.log(nu) - p.xi * nu)


def nu_log_target_d1(nu, p):
    half = 0.5 * nu
    return 0.5 * p.N * (math.log(half) + 1.0 - digamma(half)) + (p.alpha0 - 1.0) / nu - p.xi


def nu_log_target_d2(nu, p):
    return 0.5 * p.N * (1.0 / nu - 0.5 * trigamma(0.5 * nu)) - (p.alpha0 - 1.0) / nu ** 2


def find_nu_mode(p, start=None, lo=NU_MIN, hi=NU_MAX, tol=1e-9, max_iter=100):
    """Root of the DOF score on (lo, hi) by safeguarded Newton with bisection fallback."""
    g_lo, g_hi = nu_log_target_d1(lo, p), nu_log_target_d1(hi, p)
    if not (g_lo > 0 > g_hi):
        where = "below" if g_lo <= 0 else "above"
        raise ModeNotFound(f"DOF mode lies {where} the search interval ({lo}, {hi})")
    nu = start if start is not None and lo < start < hi else math.sqrt(lo * hi)
    for _ in range(max_iter):
        g = nu_log_target_d1(nu, p)
        if abs(g) < tol:
            return nu
        if g > 0:
            lo = nu
        else:
            hi = nu
        h = nu_log_target_d2(nu, p)
        step_ok = h < 0
        if step_ok:
            cand = min(max(nu - g / h, 0.5 * nu), 2.0 * nu)
            step_ok = lo < cand < hi
        nu = cand if step_ok else 0.5 * (lo + hi)
        if hi - lo <= 1e-14 * hi:
            return nu
    g = nu_log_target_d1(nu, p)
    if abs(g) < 1e3 * tol:
        return nu
    raise ModeNotFound(f"Newton/bisection did not converge (score {g:.3g} at nu={nu:.6g})")


def build_nu_proposal(p, start=None):
    """Mode- and curvature-matched Gamma proposal; returns (proposal, mode)."""
    mode = find_nu_mode(p, start=start)
    curv = nu_log_target_d2(mode, p)
    if not (math.isfinite(curv) and curv < 0):
        raise NumericalError("DOF log target is not concave at its mode", mode=mode, curvature=curv)
    return GammaProposal(1.0 - mode * mode * curv, -mode * curv), mode


# -- NECT scales ------------------------------------------------------------

@dataclass(frozen=True)
class QTargetParams:
    """Conditional of one latent scale: exp(-q u/2 - sqrt(q) c + (nu+dim-2)/2 log q).

    ``dim`` is the number of latent coordinates sharing the scale; with
    dim = 1 the exponent of log q is (nu - 1)/2.
    """

    u: float
    c: float
    nu_j: float
    dim: int = 1

    def __post_init__(self):
        if not self.u > 0:
            raise InvalidArgument(f"u must be positive, got {self.u}")
        if self.u < self.nu_j * (1 - 1e-12):
            raise InvalidArgument(f"u = {self.u} is below nu_j = {self.nu_j}")

    @property
    def shape_term(self):
        return self.nu_j + self.dim - 2.0


def q_log_target(q, p):
    q = np.asarray(q, float)
    return -0.5 * q * p.u - np.sqrt(q) * p.c + 0.5 * p.shape_term * np.log(q)


def q_log_target_d1(q, p):
    return -0.5 * p.u - p.c / (2.0 * np.sqrt(q)) + p.shape_term / (2.0 * q)


def q_log_target_d2(q, p):
    return p.c / (4.0 * q ** 1.5) - p.shape_term / (2.0 * q * q)


def q_mode_array(u, c, shape_term):
    """Closed-form mode of the scale conditional; valid where shape_term > 0."""
    half_c = 0.5 * c
    root = half_c + np.sqrt(half_c * half_c + u * shape_term)
    return (root / shape_term) ** -2


def q_mode(p):
    if not p.shape_term > 0:
        raise InvalidArgument(f"mode undefined for nu_j = {p.nu_j} with dim = {p.dim}")
    return float(q_mode_array(p.u, p.c, p.shape_term))


def q_proposal_arrays(u, c, shape_term):
    """Vectorised proposal parameters (alpha*, beta*) for arrays of targets."""
    u = np.asarray(u, float)
    c = np.asarray(c, float)
    shape_term = np.broadcast_to(np.asarray(shape_term, float), u.shape)
    alpha = np.ones(u.shape)
    beta = 0.5 * u
    inner = shape_term > 0
    if np.any(inner):
        s, uu, cc = shape_term[inner], u[inner], c[inner]
        m = q_mode_array(uu, cc, s)
        curv = cc / (4.0 * m ** 1.5) - s / (2.0 * m * m)
        alpha[inner] = 1.0 - m * m * curv
        beta[inner] = -m * curv
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        bad = int(np.flatnonzero(~(np.isfinite(alpha) & np.isfinite(beta)))[0])
        raise NumericalError("non-finite scale proposal", index=bad)
    return alpha, beta


def build_q_proposal(p):
    alpha, beta = q_proposal_arrays(np.array([p.u]), np.array([p.c]), p.shape_term)
    return GammaProposal(float(alpha[0]), float(beta[0]))


def mh_accept(log_f_new, log_g_new, log_f_old, log_g_old, uniform_draw):
    """Metropolised independence acceptance: u < exp(min(0, log ratio))."""
    vals = (log_f_new, log_g_new, log_f_old, log_g_old)
    if any(math.isnan(v) for v in vals):
        raise NumericalError("NaN in Metropolis ratio")
    ratio = (log_f_new - log_g_new) - (log_f_old - log_g_old)
    if math.isnan(ratio):
        # -inf - -inf: both states impossible under the target
        return False
    return uniform_draw < math.exp(min(0.0, ratio))
