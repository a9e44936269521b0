"""Choice data, model specifications, priors and the Gibbs state."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import cholesky_spd
from .errors import DataError, InvalidArgument

KERNELS = ("MNP", "MNR", "GenMNR")

_KERNEL_ALIASES = {
    "mnp": "MNP", "probit": "MNP",
    "mnr": "MNR", "robit": "MNR",
    "genmnr": "GenMNR", "gen-mnr": "GenMNR", "gen_mnr": "GenMNR",
}


def normalize_kernel(name):
    try:
        return _KERNEL_ALIASES[str(name).lower()]
    except KeyError:
        raise InvalidArgument(
            f"unknown kernel {name!r}; valid kernels: {', '.join(KERNELS)}") from None


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ChoiceDataset:
    """Differenced design matrices and observed choices.

    ``X`` has shape (N, J-1, K); row j of ``X[i]`` is the attribute vector of
    the j-th non-base alternative minus that of the base alternative. ``y``
    holds 1-based alternative indices.
    """

    X: np.ndarray
    y: np.ndarray
    base_alternative: int
    alternative_names: tuple = ()
    coef_names: tuple = ()
    attributes: np.ndarray | None = None

    def __post_init__(self):
        X = _frozen(self.X)
        y = _frozen(self.y, dtype=np.int64)
        if X.ndim != 3:
            raise InvalidArgument(f"X must be (N, J-1, K), got shape {X.shape}")
        N, d, K = X.shape
        J = d + 1
        if J < 2:
            raise InvalidArgument("need at least two alternatives")
        if y.shape != (N,):
            raise InvalidArgument(f"y must have shape ({N},), got {y.shape}")
        if not 1 <= self.base_alternative <= J:
            raise InvalidArgument(f"base alternative {self.base_alternative} not in 1..{J}")
        bad = np.flatnonzero((y < 1) | (y > J))
        if bad.size:
            raise DataError(f"choice {y[bad[0]]} out of range 1..{J}", row=int(bad[0]))
        names = tuple(self.alternative_names) or tuple(str(j) for j in range(1, J + 1))
        if len(names) != J:
            raise InvalidArgument(f"expected {J} alternative names, got {len(names)}")
        coefs = tuple(self.coef_names) or tuple(f"beta_{k}" for k in range(1, K + 1))
        if len(coefs) != K:
            raise InvalidArgument(f"expected {K} coefficient names, got {len(coefs)}")
        if self.attributes is not None:
            attrs = _frozen(self.attributes)
            if attrs.shape != (N, J, K):
                raise InvalidArgument(f"attributes must be ({N}, {J}, {K}), got {attrs.shape}")
            object.__setattr__(self, "attributes", attrs)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "alternative_names", names)
        object.__setattr__(self, "coef_names", coefs)

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def J(self):
        return self.X.shape[1] + 1

    @property
    def K(self):
        return self.X.shape[2]

    @property
    def non_base(self):
        """1-based indices of the alternatives behind each latent coordinate."""
        return tuple(j for j in range(1, self.J + 1) if j != self.base_alternative)

    @property
    def latent_choice(self):
        """Choice as a latent coordinate index in 0..J-2, or -1 for the base alternative."""
        lookup = np.full(self.J + 1, -1, dtype=np.int64)
        for pos, alt in enumerate(self.non_base):
            lookup[alt] = pos
        return lookup[self.y]

    def subset(self, rows):
        rows = np.asarray(rows)
        attrs = None if self.attributes is None else self.attributes[rows]
        return ChoiceDataset(self.X[rows], self.y[rows], self.base_alternative,
                             self.alternative_names, self.coef_names, attrs)

    def with_attributes(self, attributes):
        """Same choices, design rebuilt from new undifferenced (N, J, K) attributes."""
        attributes = np.asarray(attributes, float)
        keep = [j - 1 for j in self.non_base]
        b = self.base_alternative - 1
        X = attributes[:, keep, :] - attributes[:, b:b + 1, :]
        return ChoiceDataset(X, self.y, self.base_alternative, self.alternative_names,
                             self.coef_names, attributes)


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters. ``B0`` is a prior precision; the prior mean of beta is zero."""

    zeta0: np.ndarray
    B0: np.ndarray
    rho: float
    S: np.ndarray
    alpha0: float = 2.0
    beta0: float = 0.1

    def __post_init__(self):
        zeta0 = _frozen(self.zeta0)
        B0 = _frozen(self.B0)
        S = _frozen(self.S)
        if np.any(zeta0 != 0):
            raise InvalidArgument("only a zero prior mean for beta is supported")
        if B0.shape != (zeta0.size, zeta0.size):
            raise InvalidArgument(f"B0 must be {zeta0.size}x{zeta0.size}")
        cholesky_spd(B0, "B0")
        cholesky_spd(S, "S")
        if not self.rho > S.shape[0] - 1:
            raise InvalidArgument(f"rho must exceed J-2 = {S.shape[0] - 1}, got {self.rho}")
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise InvalidArgument("alpha0 and beta0 must be positive")
        object.__setattr__(self, "zeta0", zeta0)
        object.__setattr__(self, "B0", B0)
        object.__setattr__(self, "S", S)

    @classmethod
    def default(cls, J, K, *, b0_precision=1e-2, rho=None, alpha0=2.0, beta0=0.1):
        return cls(
            zeta0=np.zeros(K),
            B0=b0_precision * np.eye(K),
            rho=float(J + 1 if rho is None else rho),
            S=np.eye(J - 1),
            alpha0=alpha0,
            beta0=beta0,
        )

    @property
    def K(self):
        return self.zeta0.size

    @property
    def d(self):
        return self.S.shape[0]


@dataclass(frozen=True)
class ModelSpec:
    kernel: str
    priors: PriorSpec
    dof_groups: tuple | None = None

    def __post_init__(self):
        kernel = normalize_kernel(self.kernel)
        object.__setattr__(self, "kernel", kernel)
        d = self.priors.d
        groups = self.dof_groups
        if kernel == "GenMNR":
            if groups is None:
                groups = (1,) * d
            groups = tuple(int(p) for p in groups)
            if any(p < 1 for p in groups) or sum(groups) != d:
                raise InvalidArgument(f"dof groups {groups} must be positive and sum to {d}")
            if not 1 < len(groups) <= d:
                raise InvalidArgument(f"GenMNR needs 1 < S <= {d} groups, got {len(groups)}")
        elif groups is not None:
            raise InvalidArgument(f"dof_groups only apply to GenMNR, not {kernel}")
        object.__setattr__(self, "dof_groups", groups)

    @property
    def J(self):
        return self.priors.d + 1

    @property
    def n_dof(self):
        return {"MNP": 0, "MNR": 1, "GenMNR": len(self.dof_groups or ())}[self.kernel]

    @property
    def group_of(self):
        """Group index of every latent coordinate (GenMNR), else None."""
        if self.dof_groups is None:
            return None
        return np.repeat(np.arange(len(self.dof_groups)), self.dof_groups)

    def parameter_names(self, coef_names=None):
        K, d = self.priors.K, self.priors.d
        coef_names = tuple(coef_names or (f"beta_{k}" for k in range(1, K + 1)))
        names = list(coef_names)
        names += [f"Sigma_{a}_{b}" for a, b in zip(*lower_triangle(d))]
        if self.kernel == "MNR":
            names.append("nu")
        elif self.kernel == "GenMNR":
            names += [f"nu_{s}" for s in range(1, self.n_dof + 1)]
        return tuple(names)


def lower_triangle(d):
    """1-based (row, col) of the unique Sigma entries, row-major over the lower triangle."""
    rows, cols = np.tril_indices(d)
    return rows + 1, cols + 1


@dataclass
class ParameterState:
    """One Gibbs state. Exclusively owned by a single chain."""

    beta: np.ndarray
    Sigma: np.ndarray
    w: np.ndarray
    nu: np.ndarray | float | None = None
    q: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def flat(self):
        """beta, unique Sigma entries, nu: the vector recorded per retained draw."""
        d = self.Sigma.shape[0]
        parts = [np.ravel(self.beta), self.Sigma[np.tril_indices(d)]]
        if self.nu is not None:
            parts.append(np.atleast_1d(self.nu))
        return np.concatenate(parts)


def build_dataset(observed_attributes, choices, base_alternative, asc_alternatives=(),
                  alternative_names=(), attribute_names=()):
    """Difference observed attributes against the base alternative.

    ``observed_attributes`` is (N, J, K_obs). Alternative-specific constants
    are prepended as indicator columns for every alternative listed in
    ``asc_alternatives`` (1-based, base excluded).
    """
    obs = np.asarray(observed_attributes, float)
    if obs.ndim != 3:
        raise InvalidArgument(f"observed attributes must be (N, J, K), got {obs.shape}")
    N, J, _ = obs.shape
    choices = np.asarray(choices)
    if choices.shape != (N,):
        raise InvalidArgument(f"choices must have shape ({N},), got {choices.shape}")
    if not 1 <= base_alternative <= J:
        raise InvalidArgument(f"base alternative {base_alternative} not in 1..{J}")
    bad = np.flatnonzero((choices < 1) | (choices > J))
    if bad.size:
        raise DataError(f"choice {choices[bad[0]]} out of range 1..{J}", row=int(bad[0]))
    asc = tuple(int(a) for a in asc_alternatives)
    if base_alternative in asc or any(not 1 <= a <= J for a in asc):
        raise InvalidArgument(f"invalid ASC alternatives {asc} for base {base_alternative}")
    if asc:
        asc_block = np.zeros((N, J, len(asc)))
        for col, alt in enumerate(asc):
            asc_block[:, alt - 1, col] = 1.0
        obs = np.concatenate([asc_block, obs], axis=2)
    keep = [j for j in range(J) if j != base_alternative - 1]
    X = obs[:, keep, :] - obs[:, base_alternative - 1: base_alternative, :]
    names = tuple(f"asc_{a}" for a in asc) + tuple(
        attribute_names or (f"x_{k}" for k in range(1, obs.shape[2] - len(asc) + 1)))
    return ChoiceDataset(X, choices, base_alternative, alternative_names, names, obs)


def undifference(dataset, base_attributes):
    """Rebuild (N, J, K) observed attributes from X and the base alternative's rows."""
    base_attributes = np.asarray(base_attributes, float)
    N, J, K = dataset.N, dataset.J, dataset.K
    out = np.empty((N, J, K))
    out[:, dataset.base_alternative - 1, :] = base_attributes
    for pos, alt in enumerate(dataset.non_base):
        out[:, alt - 1, :] = dataset.X[:, pos, :] + base_attributes
    return out


def choice_from_latent(w):
    """Observed choice (1-based) implied by latent utility differences.

    Ties go to the lowest index; a maximum of exactly zero counts as choosing
    the maximising non-base alternative. The base alternative is reported as J.
    """
    w = np.asarray(w, float)
    j = int(np.argmax(w))
    return j + 1 if w[j] >= 0 else w.size + 1


def choices_from_latent(w):
    """Vectorised :func:`choice_from_latent` over rows of an (N, J-1) array.

    Returns latent coordinate positions (0..J-2) or -1 for the base.
    """
    w = np.asarray(w, float)
    j = np.argmax(w, axis=1)
    top = w[np.arange(w.shape[0]), j]
    return np.where(top >= 0, j, -1)


@dataclass
class Diagnostic:
    severity: str  # "info", "warning" or "error"
    message: str


def validate(dataset, spec=None):
    """Data checks: class shares, degenerate columns, non-finite entries."""
    out = []
    X = dataset.X
    bad = np.argwhere(~np.isfinite(X))
    for i, j, k in bad[:20]:
        out.append(Diagnostic("error", f"non-finite X at observation {i}, row {j}, column {k}"))
    shares = np.bincount(dataset.y, minlength=dataset.J + 1)[1:] / max(dataset.N, 1)
    out.append(Diagnostic("info", "class shares: " + ", ".join(
        f"{n}={100 * s:.1f}%" for n, s in zip(dataset.alternative_names, shares))))
    if np.count_nonzero(shares) <= 1:
        out.append(Diagnostic("warning", "degenerate: single observed class"))
    for k in range(dataset.K):
        col = X[:, :, k]
        if np.all(np.isfinite(col)) and np.ptp(col) == 0:
            out.append(Diagnostic(
                "warning", f"degenerate column {dataset.coef_names[k]}: constant across data"))
    if spec is not None:
        if spec.J != dataset.J:
            out.append(Diagnostic("error", f"model has J={spec.J}, data has J={dataset.J}"))
        if spec.priors.K != dataset.K:
            out.append(Diagnostic("error", f"model has K={spec.priors.K}, data has K={dataset.K}"))
    return out


def class_shares(dataset):
    return np.bincount(dataset.y, minlength=dataset.J + 1)[1:] / dataset.N
