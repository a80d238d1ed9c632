"""Obfuscated range generation with distance-based indistinguishability.

A predicted position window [lo, hi] is widened into the range actually
disclosed to the server.  Each side draws an offset from the positive tail
of the discrete Laplace distribution with scale ``lambda = 2 t / eps_dp``
and walks that many positions outward along a cyclic ordering of the
domain; the two noisy boundaries are then classified into a contiguous,
wrapped, or full range.  The module also provides the exact folded
boundary distribution used by the deterministic privacy-ratio verifier,
the exponential-mechanism reference sampler, and the expected-length
calculators for both item-granularity and page-granularity indexes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng

DEFAULT_EPS_DP = 2.0**-6


@dataclass(frozen=True)
class PrivacyParams:
    """Noise parameters: ``t`` is the indistinguishability distance in
    positions and ``eps_dp`` the privacy level; ``lam = 2 t / eps_dp``.

    ``t`` here is the raw noise distance.  Callers that follow the
    adjusted convention (reserving 2*eps_data positions for index error)
    must convert before constructing params; see
    :func:`effective_noise_distance`.
    """

    t: int
    eps_dp: float = DEFAULT_EPS_DP

    def __post_init__(self):
        if self.t <= 0:
            raise ValueError("t must be a positive integer distance")
        if self.eps_dp <= 0:
            raise ValueError("eps_dp must be positive")

    @property
    def lam(self) -> float:
        return 2.0 * self.t / self.eps_dp


def effective_noise_distance(t: int, eps_data: int, adjusted: bool = True) -> int:
    """Noise distance for a user-facing ``t``.

    In adjusted mode the index error band is reserved out of the distance
    budget (t' = t - 2*eps_data), so the guarantee covers query positions
    rather than predicted positions; raw mode passes ``t`` through.
    """
    if not adjusted:
        return t
    t_eff = t - 2 * eps_data
    if t_eff <= 0:
        raise ValueError(
            f"adjusted mode requires t > 2*eps_data (= {2 * eps_data}), got {t}"
        )
    return t_eff


@dataclass(frozen=True)
class ObfuscatedRange:
    """Noise-expanded position range disclosed to the server.

    kind ``contiguous`` covers [l, r]; ``wrapped`` covers
    [l, n-1] union [0, r] with r < l; ``full`` covers [0, n-1].
    """

    kind: str
    l: int
    r: int
    n: int

    def __post_init__(self):
        if self.kind not in ("contiguous", "wrapped", "full"):
            raise ValueError(f"unknown range kind {self.kind!r}")

    @property
    def covered_count(self) -> int:
        if self.kind == "full":
            return self.n
        if self.kind == "contiguous":
            return self.r - self.l + 1
        return (self.n - self.l) + (self.r + 1)

    def covers(self, lo: int, hi: int) -> bool:
        """Whether the contiguous position block [lo, hi] is covered."""
        if self.kind == "full":
            return True
        if self.kind == "contiguous":
            return self.l <= lo and hi <= self.r
        return lo >= self.l or hi <= self.r


# -- samplers ------------------------------------------------------------


def sample_discrete_laplace(lam: float, rng: Rng, count: int | None = None):
    """Discrete Laplace draw(s): P[X = x] ∝ exp(-|x| / lam).

    Sampled as the difference of two geometric variables with success
    probability 1 - exp(-1/lam), which realises the target distribution
    exactly (no inverse-CDF truncation).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    rho = math.exp(-1.0 / lam)
    m = 1 if count is None else count
    draws = rng.geometric0(rho, m) - rng.geometric0(rho, m)
    return int(draws[0]) if count is None else draws


def discrete_laplace_pmf(x, lam: float):
    """Closed-form pmf of the discrete Laplace distribution."""
    e = math.exp(1.0 / lam)
    return (e - 1.0) / (e + 1.0) * np.exp(-np.abs(x) / lam)


def sample_boundary_offset(lam: float, rng: Rng, count: int | None = None):
    """Positive-tail discrete Laplace draw(s): support {1, 2, ...}.

    This is the per-boundary extension of the range generator; its mean is
    1 / (1 - exp(-1/lam)).  Tests monkeypatch this hook to force specific
    offsets (a forced 0 reproduces the noiseless predicted range).
    """
    rho = math.exp(-1.0 / lam)
    m = 1 if count is None else count
    draws = rng.geometric0(rho, m) + 1
    return int(draws[0]) if count is None else draws


# -- Algorithm: cyclic noisy boundaries -----------------------------------


def _classify(l: int, r: int, lo: int, hi: int, n: int) -> ObfuscatedRange:
    """Classification of noisy boundaries into the three range kinds."""
    if l <= lo and hi <= r:
        return ObfuscatedRange("contiguous", l, r, n)
    if (r < l <= lo) or (hi <= r < l):
        return ObfuscatedRange("wrapped", l, r, n)
    return ObfuscatedRange("full", 0, n - 1, n)


def obfuscate_range_from_offsets(
    lo: int, hi: int, n: int, off_l: int, off_r: int
) -> ObfuscatedRange:
    """Deterministic core: map two boundary offsets to the output range.

    The left ordering runs lo, lo-1, ..., 0, n-1, ..., hi and the right
    ordering hi, hi+1, ..., n-1, 0, ..., lo (both of length
    n - (hi - lo) + 1); each offset is reduced modulo that length before
    indexing.
    """
    if n == 1:
        return ObfuscatedRange("full", 0, 0, 1)
    size = n - (hi - lo) + 1
    il = off_l % size
    ir = off_r % size
    l = (lo - il) % n
    r = (hi + ir) % n
    return _classify(l, r, lo, hi, n)


def obfuscate_range(pred, n: int, params: PrivacyParams, rng: Rng) -> ObfuscatedRange:
    """Expand a predicted range into a privacy-preserving one.

    Args:
        pred: object with ``lo``/``hi`` clamped positions (a
            :class:`~veilkv.pgm.PredictedRange` or equivalent).
        n: domain size in positions.
        params: noise parameters.
        rng: randomness source.
    """
    lo, hi = int(pred.lo), int(pred.hi)
    if not 0 <= lo <= hi <= n - 1:
        raise ValueError(f"predicted range [{lo}, {hi}] invalid for n={n}")
    off_l = sample_boundary_offset(params.lam, rng)
    off_r = sample_boundary_offset(params.lam, rng)
    return obfuscate_range_from_offsets(lo, hi, n, off_l, off_r)


KIND_CONTIGUOUS, KIND_WRAPPED, KIND_FULL = 0, 1, 2


def obfuscate_many(
    lo: int, hi: int, n: int, params: PrivacyParams, rng: Rng, trials: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised obfuscation: (l, r, kind_code) arrays over ``trials``.

    Kind codes: 0 contiguous, 1 wrapped, 2 full (l/r forced to 0/n-1).
    """
    if n == 1:
        zero = np.zeros(trials, dtype=np.int64)
        return zero, zero, np.full(trials, KIND_FULL, dtype=np.int64)
    size = n - (hi - lo) + 1
    il = sample_boundary_offset(params.lam, rng, trials) % size
    ir = sample_boundary_offset(params.lam, rng, trials) % size
    l = (lo - il) % n
    r = (hi + ir) % n
    contiguous = (l <= lo) & (hi <= r)
    wrapped = ((r < l) & (l <= lo)) | ((hi <= r) & (r < l))
    kind = np.full(trials, KIND_FULL, dtype=np.int64)
    kind[wrapped] = KIND_WRAPPED
    kind[contiguous] = KIND_CONTIGUOUS
    full = kind == KIND_FULL
    l[full] = 0
    r[full] = n - 1
    return l, r, kind


def covered_length(l: np.ndarray, r: np.ndarray, kind: np.ndarray, n: int) -> np.ndarray:
    """Covered position counts for (l, r, kind) arrays."""
    lengths = np.full(len(l), n, dtype=np.int64)
    cont = kind == KIND_CONTIGUOUS
    wrap = kind == KIND_WRAPPED
    lengths[cont] = (r - l + 1)[cont]
    lengths[wrap] = (n - l + r + 1)[wrap]
    return lengths


def obfuscate_range_batch(
    lo: int, hi: int, n: int, params: PrivacyParams, rng: Rng, trials: int
) -> np.ndarray:
    """Covered lengths of ``trials`` independent obfuscations."""
    l, r, kind = obfuscate_many(lo, hi, n, params, rng, trials)
    return covered_length(l, r, kind, n)


# -- page-granularity comparator ------------------------------------------


@dataclass(frozen=True)
class PredLike:
    """Minimal lo/hi carrier for callers without a full PredictedRange."""

    lo: int
    hi: int


def btree_obfuscate_range(
    page_id_range: tuple[int, int],
    page_count: int,
    page_m: int,
    params: PrivacyParams,
    rng: Rng,
) -> ObfuscatedRange:
    """Range generation at page granularity (B+tree comparator).

    Noise is added in page units with distance t' = ceil(t / page_m); the
    returned range is in page IDs.
    """
    t_pages = max(1, math.ceil(params.t / page_m))
    page_params = PrivacyParams(t=t_pages, eps_dp=params.eps_dp)
    lo, hi = page_id_range
    return obfuscate_range(PredLike(lo, hi), page_count, page_params, rng)


def btree_range_lengths_batch(
    page_count: int, page_m: int, params: PrivacyParams, rng: Rng, trials: int
) -> np.ndarray:
    """Covered lengths in items of page-granularity obfuscation trials.

    The base range is a single page (the page holding the key)."""
    t_pages = max(1, math.ceil(params.t / page_m))
    page_params = PrivacyParams(t=t_pages, eps_dp=params.eps_dp)
    page = page_count // 2
    pages = obfuscate_range_batch(page, page, page_count, page_params, rng, trials)
    return pages * page_m


# -- analytic verifiers and expectations ----------------------------------


def boundary_pmf(boundary_position: int, n: int, lam: float) -> np.ndarray:
    """Exact distribution of one noisy boundary folded onto [0, n).

    Entry at absolute position p is sum over k in Z of
    P[Lap_Z(lam) = d + k*n] with d the cyclic ordering index of p for a
    boundary anchored at ``boundary_position`` (descending orientation).
    Closed form via geometric series; relative error <= 1e-12.
    """
    if n < 1 or n > 1 << 16:
        raise ValueError("verifier supports 1 <= n <= 65536")
    folded = boundary_pmf_indexed(n, lam)
    # index d sits at absolute position (boundary_position - d) mod n
    out = np.empty(n, dtype=np.float64)
    pos = (boundary_position - np.arange(n)) % n
    out[pos] = folded
    return out


def boundary_pmf_indexed(n: int, lam: float) -> np.ndarray:
    """Folded boundary distribution over cyclic-ordering indices [0, n)."""
    idx = np.arange(n, dtype=np.float64)
    e1 = math.exp(1.0 / lam)
    const = (e1 - 1.0) / (e1 + 1.0)
    denom = 1.0 - math.exp(-n / lam)
    return const * (np.exp(-idx / lam) + np.exp(-(n - idx) / lam)) / denom


def exponential_mechanism_boundary(
    x: int, domain: np.ndarray, params: PrivacyParams, rng: Rng
) -> int:
    """Sample one boundary via the exponential mechanism.

    Probability of picking ``i`` is proportional to
    exp(-|x - i| * eps_dp / (4 t)) over the given domain.
    """
    domain = np.asarray(domain, dtype=np.int64)
    if len(domain) == 0 or len(domain) > 1 << 16:
        raise ValueError("domain must be non-empty and at most 2**16 points")
    weights = exponential_mechanism_weights(x, domain, params)
    u = float(rng.uniform(1)[0])
    cum = np.cumsum(weights)
    return int(domain[np.searchsorted(cum, u * cum[-1], side="left")])


def exponential_mechanism_weights(
    x: int, domain: np.ndarray, params: PrivacyParams
) -> np.ndarray:
    """Normalised selection probabilities of the exponential mechanism."""
    domain = np.asarray(domain, dtype=np.int64)
    scale = params.eps_dp / (4.0 * params.t)
    dist = np.abs(domain - int(x)).astype(np.float64)
    w = np.exp(-(dist - dist.min()) * scale)
    return w / w.sum()


def expected_range_length(t: int, eps_dp: float, eps_data: int, n: int) -> float:
    """Expected covered length at item granularity, capped at ``n``."""
    return min(float(n), 4.0 * t / eps_dp + 2.0 * eps_data + 1.0)


def btree_expected_range_length(t: int, eps_dp: float, page_m: int) -> float:
    """Expected covered length in items at page granularity."""
    return (4.0 * page_m / eps_dp) * math.ceil(t / page_m) + page_m


def expected_boundary_offset(lam: float) -> float:
    """Mean one-sided extension added to each boundary."""
    return 1.0 / (1.0 - math.exp(-1.0 / lam))
