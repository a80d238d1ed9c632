"""Compact piecewise-linear learned index with bounded rank-prediction error.

The index is a stack of segment arrays.  Leaf segments predict the rank of
a key within ``eps_data``; internal segments predict the position of the
child segment within ``eps_model``.  Construction is a single left-to-right
pass per level that maintains the feasible slope interval of the current
segment with exact integer arithmetic, so the corridor guarantee cannot be
lost to floating-point drift.  Evaluation applies the slope to the key
offset from the segment's minimum key, which stays accurate even for keys
near 2**63 where a raw slope*key product would not.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DEFAULT_EPS_DATA = 64
DEFAULT_EPS_MODEL = 4

_MAGIC = b"FPGM"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIQI")
_LEVEL_HEADER = struct.Struct("<Q")


class PgmFormatError(ValueError):
    """Serialized index blob is malformed."""


@dataclass(frozen=True)
class LinearSegment:
    """One linear model: predicts ``slope * (key - min_key) + intercept``."""

    min_key: int
    slope: float
    intercept: float


@dataclass(frozen=True)
class PredictedRange:
    """Leaf prediction ``y_hat`` and the clamped search window around it."""

    y_hat: int
    lo: int
    hi: int


class _Level:
    """Column-major segment storage for one index level."""

    __slots__ = ("min_keys", "slopes", "intercepts")

    def __init__(self, min_keys, slopes, intercepts):
        self.min_keys = np.asarray(min_keys, dtype=np.uint64)
        self.slopes = np.asarray(slopes, dtype=np.float64)
        self.intercepts = np.asarray(intercepts, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.min_keys)

    def segment(self, j: int) -> LinearSegment:
        return LinearSegment(
            int(self.min_keys[j]), float(self.slopes[j]), float(self.intercepts[j])
        )


def _fit_level(xs: np.ndarray, eps: int) -> _Level:
    """Greedy corridor fit of points (xs[i], i) with max error <= eps.

    The feasible slope interval is tracked as exact rationals
    (numerator, denominator); when the interval empties, the segment is
    closed with the midpoint slope and a new one starts at the violating
    point.  Any slope in the final interval satisfies every covered
    point's |slope*dx - dy| <= eps constraint, and the midpoint rounded to
    float64 stays within eps + 0.5 ulp, which the caller's integer
    rounding absorbs.
    """
    n = len(xs)
    keys = [int(v) for v in xs]
    min_keys: list[int] = []
    slopes: list[float] = []
    intercepts: list[float] = []

    start = 0
    # (num, den) with den > 0; interval [lo, hi]
    lo_n, lo_d = -1, 0  # -inf
    hi_n, hi_d = 1, 0  # +inf

    def emit(end: int):
        x0 = keys[start]
        if end - start == 1 or hi_d == 0 or lo_d == 0:
            if hi_d != 0:
                slope = hi_n / hi_d
            elif lo_d != 0:
                slope = lo_n / lo_d
            else:
                slope = 0.0
        else:
            slope = 0.5 * (lo_n / lo_d + hi_n / hi_d)
        min_keys.append(x0)
        slopes.append(max(slope, 0.0))
        intercepts.append(float(start))

    i = 1
    while i < n:
        dx = keys[i] - keys[start]
        dy = i - start
        # candidate bounds (dy - eps)/dx <= slope <= (dy + eps)/dx
        new_lo_n, new_lo_d = dy - eps, dx
        new_hi_n, new_hi_d = dy + eps, dx
        cand_lo = (new_lo_n, new_lo_d) if (lo_d == 0 or new_lo_n * lo_d > lo_n * new_lo_d) else (lo_n, lo_d)
        cand_hi = (new_hi_n, new_hi_d) if (hi_d == 0 or new_hi_n * hi_d < hi_n * new_hi_d) else (hi_n, hi_d)
        if cand_lo[0] * cand_hi[1] > cand_hi[0] * cand_lo[1]:
            emit(i)
            start = i
            lo_n, lo_d = -1, 0
            hi_n, hi_d = 1, 0
        else:
            lo_n, lo_d = cand_lo
            hi_n, hi_d = cand_hi
        i += 1
    emit(n)
    return _Level(np.array(min_keys, dtype=np.uint64), slopes, intercepts)


class PgmIndex:
    """Multi-level learned index over a strictly increasing key array.

    ``levels`` is ordered top (single segment) to bottom (leaf level over
    the data ranks).
    """

    def __init__(self, levels: list[_Level], eps_data: int, eps_model: int, n: int):
        self.levels = levels
        self.eps_data = eps_data
        self.eps_model = eps_model
        self.n = n

    # -- construction -------------------------------------------------

    @classmethod
    def build(
        cls,
        keys: np.ndarray,
        eps_data: int = DEFAULT_EPS_DATA,
        eps_model: int = DEFAULT_EPS_MODEL,
    ) -> "PgmIndex":
        """Fit the index over sorted unique keys.

        Args:
            keys: strictly increasing uint64 array.
            eps_data: leaf-level max rank error, >= 1.
            eps_model: internal-level max rank error, >= 1.
        """
        keys = np.asarray(keys, dtype=np.uint64)
        if eps_data < 1 or eps_model < 1:
            raise ValueError("error bounds must be >= 1")
        if len(keys) < 1:
            raise ValueError("cannot index an empty key set")
        levels = [_fit_level(keys, eps_data)]
        while len(levels[-1]) > 1:
            levels.append(_fit_level(levels[-1].min_keys, eps_model))
        levels.reverse()
        return cls(levels, eps_data, eps_model, len(keys))

    # -- evaluation ----------------------------------------------------

    @staticmethod
    def _eval(level: _Level, j: int, key: int, limit: int) -> int:
        """Evaluate segment j at key, clamped by the next segment's start.

        Clamping by the successor's intercept bounds extrapolation between
        a segment's last covered point and the next segment's minimum key.
        """
        off = float(int(key) - int(level.min_keys[j]))
        pred = level.slopes[j] * off + level.intercepts[j]
        if j + 1 < len(level):
            pred = min(pred, float(level.intercepts[j + 1]))
        y = int(round(pred))
        return min(max(y, 0), limit - 1)

    def _descend(self, key: int) -> int:
        """Leaf segment index for a key via the top-down bounded search."""
        key = int(key)
        j = 0
        for lvl in range(len(self.levels) - 1):
            level = self.levels[lvl]
            child = self.levels[lvl + 1]
            c_hat = self._eval(level, j, key, len(child))
            j = self._window_predecessor(child.min_keys, key, c_hat)
        return j

    def _window_predecessor(self, min_keys: np.ndarray, key: int, c_hat: int) -> int:
        """Largest j with min_keys[j] <= key, scanning a +-eps_model window.

        The window is widened by one on the left because a query key can
        fall between a segment's last covered point and its successor.
        The defensive walk never fires when the corridor invariant holds;
        tests instrument it.
        """
        m = len(min_keys)
        lo = max(0, c_hat - self.eps_model - 1)
        hi = min(m - 1, c_hat + self.eps_model)
        j = -1
        for cand in range(hi, lo - 1, -1):
            if int(min_keys[cand]) <= key:
                j = cand
                break
        if j == -1:
            while lo > 0 and int(min_keys[lo]) > key:
                lo -= 1
            return lo
        if j == hi:
            while j + 1 < m and int(min_keys[j + 1]) <= key:
                j += 1
        return j

    def predict(self, key: int) -> PredictedRange:
        """Predicted rank and the eps_data window where ``key`` must reside.

        Works for absent keys too: the window brackets the position where
        the key would be inserted.
        """
        leaf = self.levels[-1]
        j = self._descend(key)
        y_hat = self._eval(leaf, j, key, self.n)
        lo = max(0, y_hat - self.eps_data)
        hi = min(self.n - 1, y_hat + self.eps_data)
        return PredictedRange(y_hat, lo, hi)

    def predict_batch(self, keys: np.ndarray) -> np.ndarray:
        """Vectorised ``predict``: returns the y_hat array for many keys."""
        keys = np.asarray(keys, dtype=np.uint64)
        idx = np.zeros(len(keys), dtype=np.int64)
        for lvl in range(len(self.levels) - 1):
            level = self.levels[lvl]
            child = self.levels[lvl + 1]
            c_hat = self._eval_batch(level, idx, keys, len(child))
            idx = self._window_predecessor_batch(child.min_keys, keys, c_hat)
        leaf = self.levels[-1]
        return self._eval_batch(leaf, idx, keys, self.n)

    @staticmethod
    def _eval_batch(level: _Level, idx: np.ndarray, keys: np.ndarray, limit: int) -> np.ndarray:
        mk = level.min_keys[idx]
        off = (keys - mk).astype(np.float64)
        pred = level.slopes[idx] * off + level.intercepts[idx]
        nxt = np.minimum(idx + 1, len(level) - 1)
        bound = np.where(idx + 1 < len(level), level.intercepts[nxt], np.inf)
        pred = np.minimum(pred, bound)
        return np.clip(np.rint(pred).astype(np.int64), 0, limit - 1)

    def _window_predecessor_batch(
        self, min_keys: np.ndarray, keys: np.ndarray, c_hat: np.ndarray
    ) -> np.ndarray:
        m = len(min_keys)
        width = self.eps_model + 1 + self.eps_model + 1
        offs = np.arange(width, dtype=np.int64) - (self.eps_model + 1)
        cand = np.clip(c_hat[:, None] + offs[None, :], 0, m - 1)
        ok = min_keys[cand] <= keys[:, None]
        any_ok = ok.any(axis=1)
        best = np.where(ok, cand, -1).max(axis=1)
        if not any_ok.all():
            for i in np.nonzero(~any_ok)[0]:
                best[i] = self._window_predecessor(min_keys, int(keys[i]), int(c_hat[i]))
        # walk right for rows whose window was right-saturated
        sat = best == np.clip(c_hat + self.eps_model, 0, m - 1)
        for i in np.nonzero(sat)[0]:
            j = int(best[i])
            while j + 1 < m and int(min_keys[j + 1]) <= int(keys[i]):
                j += 1
            best[i] = j
        return best

    # -- serialization -------------------------------------------------

    def serialize(self) -> bytes:
        """Little-endian blob: magic, version, bounds, n, levels top first."""
        parts = [
            _HEADER.pack(
                _MAGIC,
                _FORMAT_VERSION,
                self.eps_data,
                self.eps_model,
                self.n,
                len(self.levels),
            )
        ]
        for level in self.levels:
            parts.append(_LEVEL_HEADER.pack(len(level)))
            tri = np.empty((len(level), 3), dtype="<u8")
            tri[:, 0] = level.min_keys
            tri[:, 1] = level.slopes.astype("<f8").view("<u8")
            tri[:, 2] = level.intercepts.astype("<f8").view("<u8")
            parts.append(tri.tobytes())
        return b"".join(parts)

    @classmethod
    def deserialize(cls, blob: bytes) -> "PgmIndex":
        """Inverse of :meth:`serialize`.

        Raises:
            PgmFormatError: bad magic, version mismatch, or truncation.
        """
        if len(blob) < _HEADER.size:
            raise PgmFormatError("blob shorter than header")
        magic, version, eps_data, eps_model, n, level_count = _HEADER.unpack_from(blob)
        if magic != _MAGIC:
            raise PgmFormatError(f"bad magic {magic!r}")
        if version != _FORMAT_VERSION:
            raise PgmFormatError(f"unsupported format version {version}")
        pos = _HEADER.size
        levels = []
        for _ in range(level_count):
            if pos + _LEVEL_HEADER.size > len(blob):
                raise PgmFormatError("truncated level header")
            (count,) = _LEVEL_HEADER.unpack_from(blob, pos)
            pos += _LEVEL_HEADER.size
            nbytes = count * 24
            if pos + nbytes > len(blob):
                raise PgmFormatError("truncated segment payload")
            tri = np.frombuffer(blob, dtype="<u8", count=count * 3, offset=pos).reshape(
                count, 3
            )
            levels.append(
                _Level(
                    tri[:, 0].copy(),
                    tri[:, 1].copy().view("<f8"),
                    tri[:, 2].copy().view("<f8"),
                )
            )
            pos += nbytes
        if pos != len(blob):
            raise PgmFormatError("trailing bytes after last level")
        if not levels or len(levels[0]) != 1:
            raise PgmFormatError("top level must hold exactly one segment")
        return cls(levels, eps_data, eps_model, n)

    def size_bytes(self) -> int:
        """Exact serialized length."""
        return _HEADER.size + sum(_LEVEL_HEADER.size + 24 * len(lv) for lv in self.levels)

    def segment_counts(self) -> list[int]:
        """Segments per level, top first (diagnostics and benchmarks)."""
        return [len(lv) for lv in self.levels]
