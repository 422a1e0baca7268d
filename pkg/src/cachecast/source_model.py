"""Gaussian source library, demand distributions and the expected-distortion
objective.

All rates and cache sizes are in bits per source sample. File and receiver
indices are 0-based everywhere in the library; the CLI keeps the same
convention.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

PROB_TOL = 1e-9
EXACT_DEMAND_CAP = 10**6
DEFAULT_MC_SAMPLES = 10**4


class CapacityError(ValueError):
    """Raised when an exact enumeration would exceed its hard size cap."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SourceLibrary:
    """Catalog of ``m`` Gaussian sources with variances ``variances``."""

    variances: np.ndarray
    samples_per_file: int = 1

    def __post_init__(self):
        v = np.array(self.variances, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("library must contain at least one file")
        if not np.all(v > 0) or not np.all(np.isfinite(v)):
            raise ValueError("source variances must be positive and finite")
        if int(self.samples_per_file) < 1:
            raise ValueError("samples_per_file must be a positive integer")
        object.__setattr__(self, "variances", _frozen(v))
        object.__setattr__(self, "samples_per_file", int(self.samples_per_file))

    @property
    def m(self) -> int:
        return self.variances.size

    @classmethod
    def uniform_random(cls, m: int, lo: float, hi: float, seed: int, samples_per_file: int = 1):
        """Variances drawn i.i.d. from U[lo, hi] with a fixed seed."""
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(lo, hi, size=m), samples_per_file)

    @classmethod
    def constant(cls, m: int, variance: float, samples_per_file: int = 1):
        return cls(np.full(m, float(variance)), samples_per_file)


@dataclass(frozen=True)
class DemandModel:
    """Per-receiver request distribution ``q[i, j]``."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim == 1:
            q = q[None, :]
        if q.ndim != 2 or q.size == 0:
            raise ValueError("demand matrix must be 2-D and non-empty")
        if np.any(q < 0):
            raise ValueError("demand probabilities must be non-negative")
        rows = q.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > PROB_TOL):
            raise ValueError(f"every demand row must sum to 1 (got {rows})")
        object.__setattr__(self, "q", _frozen(q))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.q.shape[1]

    def is_symmetric(self, tol: float = PROB_TOL) -> bool:
        return bool(np.all(np.abs(self.q - self.q[0]) <= tol))

    def file_request_probability(self) -> np.ndarray:
        """P(file f is requested by at least one receiver)."""
        return 1.0 - np.prod(1.0 - self.q, axis=0)


@dataclass(frozen=True)
class CachePlan:
    """Cached rates ``rates[i, j]`` under per-receiver budgets ``budgets[i]``."""

    rates: np.ndarray
    budgets: np.ndarray = field(default=None)

    def __post_init__(self):
        r = np.array(self.rates, dtype=float)
        if r.ndim != 2:
            raise ValueError("cache rates must be an n x m matrix")
        if np.any(r < 0):
            raise ValueError("cached rates must be non-negative")
        b = r.sum(axis=1) if self.budgets is None else np.array(self.budgets, dtype=float).ravel()
        if b.size == 1 and r.shape[0] > 1:
            b = np.full(r.shape[0], b.item())
        if b.shape != (r.shape[0],):
            raise ValueError("need one cache budget per receiver")
        if np.any(r.sum(axis=1) > b + PROB_TOL):
            raise ValueError("cache placement exceeds a receiver budget")
        object.__setattr__(self, "rates", _frozen(r))
        object.__setattr__(self, "budgets", _frozen(b))

    @property
    def n(self) -> int:
        return self.rates.shape[0]

    @property
    def m(self) -> int:
        return self.rates.shape[1]

    def distribution(self) -> np.ndarray:
        """Caching distribution p[i, j] = M[i, j] / M[i] (zero rows when M[i] = 0)."""
        p = np.zeros_like(self.rates)
        pos = self.budgets > 0
        p[pos] = self.rates[pos] / self.budgets[pos, None]
        return p

    @classmethod
    def empty(cls, n: int, m: int):
        return cls(np.zeros((n, m)), np.zeros(n))


@dataclass(frozen=True)
class Expectation:
    """An expected value together with its Monte Carlo standard error.

    ``stderr`` is 0 for exact (enumerated or closed-form) values.
    """

    value: float
    stderr: float = 0.0
    samples: int = 0
    exact: bool = True

    def __float__(self):
        return float(self.value)


def zipf_demand(m: int, alpha: float, n: int = 1) -> DemandModel:
    """Identical Zipf rows, q_j proportional to j^-alpha for j = 1..m."""
    if m < 1 or n < 1:
        raise ValueError("need m >= 1 and n >= 1")
    if alpha < 0:
        raise ValueError("Zipf exponent must be non-negative")
    w = np.arange(1, m + 1, dtype=float) ** (-float(alpha))
    q = w / w.sum()
    return DemandModel(np.tile(q, (n, 1)))


def distortion(variance, rate):
    """Gaussian distortion-rate function ``variance * 2**(-2 rate)``."""
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0):
        raise ValueError("rate must be non-negative")
    out = np.asarray(variance, dtype=float) * np.exp2(-2.0 * rate)
    return out.item() if out.ndim == 0 else out


def check_demand(model: DemandModel, d) -> np.ndarray:
    d = np.asarray(d)
    if d.shape != (model.n,):
        raise IndexError(f"demand must have one entry per receiver ({model.n})")
    if not np.issubdtype(d.dtype, np.integer):
        if not np.all(d == np.round(d)):
            raise IndexError("demand entries must be integer file indices")
        d = d.astype(int)
    if np.any(d < 0) or np.any(d >= model.m):
        raise IndexError(f"file index out of range [0, {model.m})")
    return d


def demand_probability(model: DemandModel, d) -> float:
    """Probability of demand ``d`` under independent requests."""
    d = check_demand(model, d)
    return float(np.prod(model.q[np.arange(model.n), d]))


def sample_demand(model: DemandModel, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw one demand (shape ``(n,)``) or ``size`` demands (shape ``(size, n)``).

    Each receiver's request is drawn by inverse-CDF sampling from its own row,
    using one uniform per receiver per draw.
    """
    k = 1 if size is None else int(size)
    cdf = np.cumsum(model.q, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((k, model.n))
    d = np.empty((k, model.n), dtype=np.int64)
    for i in range(model.n):
        # side="right" never lands on a zero-probability file (flat CDF step)
        d[:, i] = np.searchsorted(cdf[i], u[:, i], side="right")
    np.minimum(d, model.m - 1, out=d)
    return d[0] if size is None else d


def enumerate_demands(model: DemandModel, cap: int = EXACT_DEMAND_CAP):
    """All demands with their probabilities, as ``(D, probs)`` arrays."""
    total = model.m**model.n
    if total > cap:
        raise CapacityError(f"m^n = {model.m}^{model.n} exceeds the exact enumeration cap {cap}")
    d = np.array(list(itertools.product(range(model.m), repeat=model.n)), dtype=np.int64)
    probs = np.prod(model.q[np.arange(model.n)[None, :], d], axis=1)
    return d, probs


@dataclass(frozen=True)
class MonteCarlo:
    samples: int = DEFAULT_MC_SAMPLES
    seed: int = 0


def parse_mode(text: str):
    """``"exact"`` or ``"mc:<samples>:<seed>"``."""
    if text == "exact":
        return "exact"
    parts = text.split(":")
    if parts[0] == "mc" and len(parts) in (1, 2, 3):
        samples = int(parts[1]) if len(parts) > 1 else DEFAULT_MC_SAMPLES
        seed = int(parts[2]) if len(parts) > 2 else 0
        if samples < 2:
            raise ValueError("Monte Carlo needs at least 2 samples")
        return MonteCarlo(samples, seed)
    raise ValueError(f"unknown evaluation mode {text!r}; use 'exact' or 'mc:<samples>:<seed>'")


RateFn = Callable[[np.ndarray], np.ndarray]


def expected_distortion(
    lib: SourceLibrary,
    model: DemandModel,
    cache: CachePlan,
    per_user_rate: RateFn | None = None,
    mode="exact",
    batch_rate: Callable[[np.ndarray], np.ndarray] | None = None,
) -> Expectation:
    """Expected per-receiver distortion over the demand distribution.

    Parameters
    ----------
    per_user_rate : callable
        Maps a demand vector ``d`` (shape ``(n,)``) to the delivered rates of
        all ``n`` receivers. ``None`` means nothing is transmitted.
    mode : "exact" or MonteCarlo
        Exact enumeration is limited to ``m**n <= 1e6`` demands.
    batch_rate : callable, optional
        Vectorised alternative to ``per_user_rate`` taking a ``(k, n)`` demand
        array and returning ``(k, n)`` rates.
    """
    if isinstance(mode, str):
        mode = parse_mode(mode)
    if lib.m != model.m or cache.m != model.m or cache.n != model.n:
        raise ValueError("library, demand model and cache plan dimensions disagree")

    def per_demand(d):
        rows = np.arange(model.n)
        base = cache.rates[rows[None, :], d]
        if batch_rate is not None:
            extra = np.asarray(batch_rate(d), dtype=float)
        elif per_user_rate is not None:
            extra = np.array([per_user_rate(di) for di in d], dtype=float)
        else:
            extra = 0.0
        if np.any(np.asarray(extra) < 0):
            raise ValueError("delivered rates must be non-negative")
        return np.mean(lib.variances[d] * np.exp2(-2.0 * (base + extra)), axis=1)

    if mode == "exact":
        d, probs = enumerate_demands(model)
        vals = np.concatenate([per_demand(d[k : k + 65536]) for k in range(0, len(d), 65536)])
        return Expectation(float(np.dot(probs, vals)), 0.0, len(d), True)

    rng = np.random.default_rng(mode.seed)
    d = sample_demand(model, rng, mode.samples)
    vals = per_demand(d)
    se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    return Expectation(float(vals.mean()), se, len(vals), False)


def expected_distortion_separable(lib: SourceLibrary, model: DemandModel, rates: np.ndarray) -> float:
    """Exact expectation when receiver i's total rate depends only on (i, d_i).

    ``rates[i, j]`` is the total (cached + delivered) rate receiver ``i`` gets
    when it requests file ``j``. Independence of requests makes the expectation
    factor into a single weighted sum, valid for any ``n``.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.shape != model.q.shape:
        raise ValueError("rate matrix must be n x m")
    return float(np.sum(model.q * lib.variances[None, :] * np.exp2(-2.0 * rates)) / model.n)


def as_demand_model(q: Sequence[float] | np.ndarray, n: int) -> DemandModel:
    q = np.asarray(q, dtype=float)
    return DemandModel(np.tile(q, (n, 1)) if q.ndim == 1 else q)
