"""Deterministic numerical substrate: matrices, RNG streams, singular values, erfi.

Everything here is pure and platform-stable: the RNG is counter-based so that
independent streams can be split from one master seed without correlation, and
two runs with equal seeds produce bit-identical draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidInputError

_MASK64 = (1 << 64) - 1
_PHI = 0x9E3779B97F4A7C15
_PHI_U = np.uint64(_PHI)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = float(2.0 ** -53)


def _mix_int(z: int) -> int:
    """SplitMix64 finalizer on Python ints (used for keys, not bulk draws)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _mix_u64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over a uint64 array."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@dataclass
class RngStream:
    """Counter-based random stream identified by (seed, stream_id).

    Draw i of the stream is a pure function of (seed, stream_id, i), so equal
    streams replay identical sequences on any platform and distinct stream ids
    give independent sequences.  Each draw method advances ``counter`` by a
    documented, fixed amount: ``uniform``/``randint`` consume one counter slot
    per value, ``normal`` consumes ``2 * ceil(n / 2)`` slots (Box-Muller
    pairs), ``permutation(k)`` consumes ``k - 1`` slots (Fisher-Yates).
    """

    seed: int
    stream_id: int = 0
    counter: int = 0
    _key: int = field(init=False, repr=False)

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.stream_id = int(self.stream_id) & _MASK64
        self._key = _mix_int(_mix_int(self.seed ^ _PHI) + _mix_int(self.stream_id))

    def child(self, tag: int) -> "RngStream":
        """Derive an independent stream; (seed, stream_id, tag) determines it."""
        new_id = _mix_int(self.stream_id * _PHI + _mix_int(tag + 1))
        return RngStream(self.seed, new_id)

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self._key) + idx * _PHI_U
            out = _mix_u64(z)
        self.counter += n
        return out

    def uniform(self, a: float, b: float, n: int) -> np.ndarray:
        """n iid draws from U[a, b); degenerate a == b returns a exactly."""
        if n < 1:
            raise InvalidInputError("n must be >= 1")
        if not a <= b:
            raise InvalidInputError(f"uniform bounds must satisfy a <= b, got ({a}, {b})")
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return a + u * (b - a)

    def normal(self, mu: float, sigma: float, n: int) -> np.ndarray:
        """n iid draws from N(mu, sigma^2) via Box-Muller; sigma == 0 returns mu."""
        if n < 1:
            raise InvalidInputError("n must be >= 1")
        if sigma < 0:
            raise InvalidInputError(f"sigma must be >= 0, got {sigma}")
        m = (n + 1) // 2
        raw = self._raw(2 * m)
        # u1 in (0, 1] so log is finite; u2 in [0, 1)
        u1 = ((raw[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (raw[m:] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * math.pi * u2)
        z[1::2] = r * np.sin(2.0 * math.pi * u2)
        return mu + sigma * z[:n]

    def randint(self, bound: int, n: int = 1) -> np.ndarray:
        """n integers uniform on [0, bound)."""
        if bound < 1:
            raise InvalidInputError(f"bound must be >= 1, got {bound}")
        u = self.uniform(0.0, 1.0, n)
        return np.minimum((u * bound).astype(np.int64), bound - 1)

    def permutation(self, k: int) -> np.ndarray:
        """Fisher-Yates permutation of range(k), consuming k - 1 draws."""
        perm = np.arange(k)
        for i in range(k - 1, 0, -1):
            j = int(self.randint(i + 1)[0])
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def rng_draw(stream: RngStream, dist: tuple, n: int) -> np.ndarray:
    """Draw n values from a distribution spec: ("uniform", a, b) or ("normal", mu, sigma)."""
    kind = dist[0]
    if kind == "uniform":
        return stream.uniform(dist[1], dist[2], n)
    if kind == "normal":
        return stream.normal(dist[1], dist[2], n)
    raise InvalidInputError(f"unknown distribution kind {kind!r}")


def ensure_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array or raise InvalidInputError."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {m.shape}")
    if m.size == 0:
        raise InvalidInputError(f"{name} must be non-empty")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return m


def svd_values(m) -> np.ndarray:
    """Singular values of a matrix, sorted descending.

    Returns exactly min(rows, cols) non-negative values.  Backed by LAPACK;
    the test suite cross-checks against a brute-force Jacobi eigensolver on
    m^T m.
    """
    m = ensure_matrix(m)
    return np.linalg.svd(m, compute_uv=False)


_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_SERIES_CUTOFF = 3.0
_ERFI_DOMAIN = 6.0


def _erfi_series(x: float) -> float:
    """Maclaurin series (2/sqrt(pi)) * sum x^(2n+1) / (n! (2n+1)), Kahan-summed.

    All terms share the sign of x, so there is no cancellation anywhere in the
    supported domain.
    """
    x2 = x * x
    term = x  # x^(2n+1) / n!
    total = x
    comp = 0.0
    for n in range(1, 300):
        term *= x2 / n
        contrib = term / (2 * n + 1)
        y = contrib - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if abs(contrib) <= 1e-18 * abs(total):
            break
    return _TWO_OVER_SQRT_PI * total


def _gauss_legendre_exp_sq(lo: float, hi: float) -> float:
    """Integral of exp(t^2) over [lo, hi] by composite 24-node Gauss-Legendre."""
    panels = max(1, int(math.ceil((hi - lo) / 0.25)))
    nodes, weights = np.polynomial.legendre.leggauss(24)
    edges = np.linspace(lo, hi, panels + 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        t = mid + half * nodes
        total += half * float(np.sum(weights * np.exp(t * t)))
    return total


_ERFI_AT_CUTOFF = _erfi_series(_SERIES_CUTOFF)


def erfi(x: float) -> float:
    """The imaginary error function (2/sqrt(pi)) * integral_0^x exp(t^2) dt.

    Supported for |x| <= 6 (the range the scale tuners need); odd in x.
    Maclaurin series below |x| = 3, series value at 3 plus Gauss-Legendre
    quadrature of the tail beyond.
    """
    if not math.isfinite(x):
        raise DomainError(f"erfi argument must be finite, got {x}")
    ax = abs(x)
    if ax > _ERFI_DOMAIN:
        raise DomainError(f"erfi argument out of domain: |{x}| > {_ERFI_DOMAIN}")
    if ax <= _SERIES_CUTOFF:
        return _erfi_series(x)
    tail = _TWO_OVER_SQRT_PI * _gauss_legendre_exp_sq(_SERIES_CUTOFF, ax)
    return math.copysign(_ERFI_AT_CUTOFF + tail, x)
