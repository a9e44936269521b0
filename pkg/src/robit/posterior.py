"""Posterior draws, summaries, split-R-hat and willingness to pay."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument


@dataclass
class PosteriorDraws:
    """Retained draws, shape (n_chains, n_retained, n_params)."""

    names: tuple
    values: np.ndarray
    iterations: np.ndarray | None = None
    telemetry: list = field(default_factory=list)

    def __post_init__(self):
        self.names = tuple(self.names)
        self.values = np.asarray(self.values, float)
        if self.values.ndim != 3:
            raise InvalidArgument(f"draws must be (chains, draws, params), got {self.values.shape}")
        if self.values.shape[2] != len(self.names):
            raise InvalidArgument("draw width does not match parameter names")
        if len(set(self.names)) != len(self.names):
            raise InvalidArgument("parameter names must be unique")
        if self.iterations is None:
            self.iterations = np.arange(1, self.values.shape[1] + 1)

    @property
    def n_chains(self):
        return self.values.shape[0]

    @property
    def n_retained(self):
        return self.values.shape[1]

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidArgument(f"unknown parameter {name!r}") from None

    def __getitem__(self, name):
        """Pooled draws of one parameter."""
        return self.values[:, :, self.index(name)].ravel()

    def pooled(self):
        return self.values.reshape(-1, self.values.shape[2])

    def select(self, prefix):
        idx = [i for i, n in enumerate(self.names) if n.startswith(prefix)]
        return [self.names[i] for i in idx], self.values[:, :, idx]

    # CSV: chain, iteration, then the named parameters
    def to_csv(self, path_or_buf):
        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            writer = csv.writer(fh)
            writer.writerow(("chain", "iteration") + self.names)
            for c in range(self.n_chains):
                for r in range(self.n_retained):
                    writer.writerow([c + 1, int(self.iterations[r])]
                                    + [repr(float(v)) for v in self.values[c, r]])
        finally:
            if own:
                fh.close()

    @classmethod
    def from_csv(cls, path_or_buf):
        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = open(path_or_buf, newline="") if own else path_or_buf
        try:
            rows = list(csv.reader(fh))
        finally:
            if own:
                fh.close()
        header, body = rows[0], rows[1:]
        if header[:2] != ["chain", "iteration"]:
            raise InvalidArgument("draws CSV must start with chain,iteration columns")
        names = tuple(header[2:])
        chains = sorted({int(r[0]) for r in body})
        per_chain = [[r for r in body if int(r[0]) == c] for c in chains]
        n = {len(rows_c) for rows_c in per_chain}
        if len(n) != 1:
            raise InvalidArgument("chains in the draws file have unequal lengths")
        values = np.array([[[float(v) for v in r[2:]] for r in rows_c] for rows_c in per_chain])
        iterations = np.array([int(r[1]) for r in per_chain[0]])
        return cls(names, values, iterations)


@dataclass(frozen=True)
class SummaryRow:
    name: str
    mean: float
    sd: float
    q025: float
    q975: float


def summarize(draws):
    """Mean, SD and 2.5%/97.5% quantiles per parameter, pooled across chains."""
    if draws.n_retained * draws.n_chains < 2:
        raise InvalidArgument("need at least two retained draws to summarise")
    pooled = draws.pooled()
    mean = pooled.mean(axis=0)
    sd = pooled.std(axis=0, ddof=1)
    lo, hi = np.quantile(pooled, [0.025, 0.975], axis=0, method="linear")
    return [SummaryRow(n, float(m), float(s), float(a), float(b))
            for n, m, s, a, b in zip(draws.names, mean, sd, lo, hi)]


def summary_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["parameter", "mean", "sd", "q0.025", "q0.975"])
    for r in rows:
        writer.writerow([r.name, f"{r.mean:.6f}", f"{r.sd:.6f}", f"{r.q025:.6f}", f"{r.q975:.6f}"])
    return buf.getvalue()


def summary_to_text(rows):
    width = max([len("Parameter")] + [len(r.name) for r in rows])
    head = f"{'Parameter':<{width}}  {'Mean':>9} {'Std. dev.':>9} {'[0.025':>9} {'0.975]':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.mean:9.3f} {r.sd:9.3f} {r.q025:9.3f} {r.q975:9.3f}")
    return "\n".join(lines) + "\n"


def psrf(draws):
    """Split R-hat per parameter.

    Each chain is cut into halves (odd lengths drop the middle draw). The
    between-half variance uses the 1/m (not 1/(m-1)) normalisation so that
    duplicating chains leaves R-hat unchanged. A parameter with zero within-
    and between-chain variance gets 1.0.
    """
    n_total = draws.n_retained
    if n_total < 4:
        raise InvalidArgument("split R-hat needs at least 4 retained draws per chain")
    n = n_total // 2
    halves = np.concatenate([draws.values[:, :n, :], draws.values[:, n_total - n:, :]], axis=0)
    chain_means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean(axis=0)
    B = n * chain_means.var(axis=0)
    var_plus = (n - 1) / n * W + B / n
    out = {}
    for name, w, v in zip(draws.names, W, var_plus):
        if w <= 0:
            out[name] = 1.0 if v <= 0 else math.inf
        else:
            out[name] = float(math.sqrt(v / w))
    return out


@dataclass(frozen=True)
class WtpResult:
    ratio_of_means: float
    mean: float
    sd: float
    q025: float
    q975: float
    warning: str | None = None


def wtp(draws, numerator_name, cost_name):
    """Willingness to pay: numerator coefficient over the cost coefficient.

    ``ratio_of_means`` is what tables report; the remaining fields summarise
    the per-draw ratio.
    """
    num = draws[numerator_name]
    cost = draws[cost_name]
    message = None
    if np.any(cost > 0) and np.any(cost < 0):
        message = f"cost coefficient {cost_name!r} changes sign across draws; per-draw ratios are unstable"
        warnings.warn(message, RuntimeWarning, stacklevel=2)
    ratio = num / cost
    lo, hi = np.quantile(ratio, [0.025, 0.975], method="linear")
    return WtpResult(
        ratio_of_means=float(num.mean() / cost.mean()),
        mean=float(ratio.mean()),
        sd=float(ratio.std(ddof=1)) if ratio.size > 1 else 0.0,
        q025=float(lo),
        q975=float(hi),
        warning=message,
    )
