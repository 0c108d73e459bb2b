"""Signed solution counts for the k-systems behind the grouped expansion.

For a household with covariate vectors x_1,...,x_P (each of length M = J*N_i)
and truncation budget R, we enumerate every non-negative integer tuple k with
k_1+...+k_M <= R, form the dot products r_p = k . x_p, and accumulate the
parity-signed count (-1)^(k.1) per r-tuple.  The resulting cache is the
parameter-independent half of the series evaluation and is persisted to disk.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from itertools import product

import numpy as np


class BudgetError(RuntimeError):
    """Truncation budget admits more k-tuples than the admission limit."""


class CacheFileError(RuntimeError):
    """Corrupt, truncated, mismatched or unsupported cache file."""


DEFAULT_ADMISSION_LIMIT = 10**9
CACHE_FORMAT_VERSION = 1

_MAGIC = b"DIOC"
_I64_MIN, _I64_MAX = -(2**63), 2**63 - 1


def compositions_count(r: int, M: int) -> int:
    """Number of ordered M-tuples of non-negative integers summing to r."""
    if r < 0 or M < 1:
        raise ValueError("need r >= 0 and M >= 1")
    return math.comb(r + M - 1, M - 1)


def compositions_cum(R: int, M: int) -> int:
    """Number of ordered M-tuples of non-negative integers summing to at most R."""
    if R < 0 or M < 1:
        raise ValueError("need R >= 0 and M >= 1")
    return math.comb(R + M, M)


def fnv1a_x_vectors(x_vectors: tuple[tuple[int, ...], ...]) -> int:
    """64-bit FNV-1a hash of the covariate vectors (provenance guard)."""
    h = 0xCBF29CE484222325
    data = struct.pack("<II", len(x_vectors), len(x_vectors[0]) if x_vectors else 0)
    for vec in x_vectors:
        data += struct.pack(f"<{len(vec)}q", *vec)
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class DioCache:
    """Signed solution counts K+(r) - K-(r) for one covariate signature.

    ``entries`` maps each reachable r-tuple to its signed count.  ``r_array``
    and ``count_array`` hold the same data sorted by (total, tuple) for fast
    vectorized evaluation in increasing r-total order.
    """

    x_vectors: tuple[tuple[int, ...], ...]
    R: int
    entries: dict[tuple[int, ...], int]
    admitted: int  # number of k-tuples enumerated, == C(R+M, M)

    @property
    def M(self) -> int:
        return len(self.x_vectors[0])

    @property
    def P(self) -> int:
        return len(self.x_vectors)

    @property
    def x_hash(self) -> int:
        return fnv1a_x_vectors(self.x_vectors)

    def sorted_items(self) -> list[tuple[tuple[int, ...], int]]:
        return sorted(self.entries.items(), key=lambda kv: (sum(kv[0]), kv[0]))

    @property
    def r_array(self) -> np.ndarray:
        arr = self.__dict__.get("_r_array")
        if arr is None:
            items = self.sorted_items()
            arr = np.array([r for r, _ in items], dtype=np.int64).reshape(len(items), self.P)
            self.__dict__["_r_array"] = arr
        return arr

    @property
    def count_array(self) -> np.ndarray:
        arr = self.__dict__.get("_count_array")
        if arr is None:
            arr = np.array([c for _, c in self.sorted_items()], dtype=np.float64)
            self.__dict__["_count_array"] = arr
        return arr


def _check_x_vectors(x_vectors) -> tuple[tuple[int, ...], ...]:
    xv = tuple(tuple(int(v) for v in vec) for vec in x_vectors)
    if not xv or not xv[0]:
        raise ValueError("x_vectors must be a non-empty P x M array")
    M = len(xv[0])
    if any(len(vec) != M for vec in xv):
        raise ValueError("x_vectors rows must share length M")
    if any(v < 0 for vec in xv for v in vec):
        raise ValueError("covariates must be non-negative")
    cols = zip(*xv)
    if any(all(v == 0 for v in col) for col in cols):
        raise ValueError("every observation needs at least one positive covariate")
    return xv


def build_cache(
    x_vectors,
    R: int,
    admission_limit: int = DEFAULT_ADMISSION_LIMIT,
) -> DioCache:
    """Enumerate the truncation simplex and accumulate signed counts per r-tuple."""
    cache, _ = build_cache_pair(x_vectors, R, admission_limit, want_sub=False)
    return cache


def build_cache_pair(
    x_vectors,
    R: int,
    admission_limit: int = DEFAULT_ADMISSION_LIMIT,
    want_sub: bool = True,
) -> tuple[DioCache, DioCache | None]:
    """Build the budget-R cache and, from the same enumeration, the budget-(R-1) cache.

    The pair makes parity diagnostics (consecutive-budget spreads) cost a
    single enumeration.  The sub-cache is None when ``want_sub`` is false or
    R == 0.
    """
    xv = _check_x_vectors(x_vectors)
    M = len(xv[0])
    if R < 0:
        raise ValueError("R must be non-negative")
    admitted = compositions_cum(R, M)
    if admitted > admission_limit:
        raise BudgetError(
            f"C(R+M, M) = C({R+M},{M}) = {admitted} exceeds admission limit {admission_limit}"
        )

    # Columns of the x matrix: per observation slot, the P-vector added to r
    # when that slot's k increments.
    cols = [tuple(xv[p][m] for p in range(len(xv))) for m in range(M)]
    P = len(xv)
    entries: dict[tuple[int, ...], int] = {}
    shell: dict[tuple[int, ...], int] = {}  # contribution from k.1 == R exactly
    below: set[tuple[int, ...]] = set()     # r-cells reachable with k.1 < R

    def recurse(m: int, spent: int, r: tuple[int, ...], parity: int) -> None:
        # lexicographic recursion over k coordinates with running budget
        if m == M - 1:
            col = cols[m]
            rr = list(r)
            sign = parity
            for km in range(R - spent + 1):
                key = tuple(rr)
                entries[key] = entries.get(key, 0) + sign
                if spent + km == R:
                    shell[key] = shell.get(key, 0) + sign
                else:
                    below.add(key)
                for p in range(P):
                    rr[p] += col[p]
                sign = -sign
            return
        col = cols[m]
        rr = r
        sign = parity
        for km in range(R - spent + 1):
            recurse(m + 1, spent + km, rr, sign)
            rr = tuple(rr[p] + col[p] for p in range(P))
            sign = -sign

    recurse(0, 0, (0,) * P, 1)
    cache = DioCache(xv, R, entries, admitted)
    if not want_sub or R == 0:
        return cache, None
    sub_entries = {
        key: entries[key] - shell.get(key, 0) for key in entries if key in below
    }
    sub = DioCache(xv, R - 1, sub_entries, compositions_cum(R - 1, M))
    return cache, sub


def signed_count_oracle(
    x_vectors, r_tuple, R: int
) -> tuple[int, int]:
    """Brute-force (K+, K-) for one r-tuple: reference for :func:`build_cache`.

    Enumerates every k in the budget simplex via itertools.product and checks
    the dot products directly; independent of the recursive builder.
    """
    xv = _check_x_vectors(x_vectors)
    M = len(xv[0])
    P = len(xv)
    r = tuple(int(v) for v in r_tuple)
    if len(r) != P:
        raise ValueError("r_tuple length must equal P")
    k_plus = 0
    k_minus = 0
    for k in product(range(R + 1), repeat=M):
        if sum(k) > R:
            continue
        if all(sum(k[m] * xv[p][m] for m in range(M)) == r[p] for p in range(P)):
            if sum(k) % 2 == 0:
                k_plus += 1
            else:
                k_minus += 1
    return k_plus, k_minus


# ---------------------------------------------------------------------------
# Truncation tail bounds
# ---------------------------------------------------------------------------

_LOG2 = math.log(2.0)


@dataclass(frozen=True)
class TailBoundInput:
    R: int
    M: int
    eps: float
    delta: float
    P: int

    def __post_init__(self):
        if self.R < 0 or self.M < 1 or self.eps < 0 or self.delta < 1 or self.P < 1:
            raise ValueError("invalid tail-bound input")


@dataclass(frozen=True)
class TailBound:
    """Upper bounds on the discarded tail of the translated expansion.

    ``dyadic`` requires eps*delta*P > 2 log 2; ``simple`` requires
    eps*delta*P > log 2 and R >= 2.  Inapplicable bounds are None.
    """

    dyadic: float | None
    simple: float | None

    @property
    def applicable(self) -> bool:
        return self.dyadic is not None


def tail_bound(inp: TailBoundInput) -> TailBound:
    """Dyadic-decomposition and crude exponential tail bounds."""
    a = inp.eps * inp.delta * inp.P
    dyadic = None
    if a > 2 * _LOG2:
        dyadic = 2.0 * math.exp(-((a - 2 * _LOG2) * inp.R - inp.M * _LOG2))
    simple = None
    if a > _LOG2 and inp.R >= 2:
        simple = (
            2.0 ** (inp.M - 1)
            * math.exp(-(a - _LOG2) * math.log(inp.R))
            / (a - _LOG2)
        )
    return TailBound(dyadic, simple)


def tail_sum_direct(inp: TailBoundInput, rel_tol: float = 1e-16) -> float:
    """Directly summed tail sum_{r>R} C(r+M-1, M-1) exp(-eps*delta*P*r).

    Converges whenever eps*delta*P > 0; summed to machine convergence.
    """
    a = inp.eps * inp.delta * inp.P
    if a <= 0:
        raise ValueError("direct tail sum needs eps*delta*P > 0")
    total = 0.0
    r = inp.R + 1
    while True:
        term = compositions_count(r, inp.M) * math.exp(-a * r)
        total += term
        # once terms decay geometrically, stop when negligible
        if term < rel_tol * max(total, 1e-300) and r > inp.R + inp.M + 2:
            ratio = (r + inp.M) / (r + 1) * math.exp(-a)
            if ratio < 1:
                break
        r += 1
        if r > inp.R + 1_000_000:
            raise RuntimeError("direct tail sum failed to converge")
    return total


# ---------------------------------------------------------------------------
# Cache persistence
#
# Layout (little-endian): magic "DIOC", u16 version, u32 M, u32 P, u32 R,
# u64 FNV-1a hash of x_vectors, u64 admitted count, u64 record count, the
# x_vectors themselves (P*M i64), then sorted (r-tuple i64*P, count i64)
# records, then u32 CRC32 of the record body.
# ---------------------------------------------------------------------------

def save_cache(cache: DioCache, path: str) -> None:
    for _, c in cache.entries.items():
        if not (_I64_MIN <= c <= _I64_MAX):
            raise CacheFileError(f"signed count {c} exceeds the i64 file range")
    header = _MAGIC + struct.pack(
        "<HIIIQQQ",
        CACHE_FORMAT_VERSION,
        cache.M,
        cache.P,
        cache.R,
        cache.x_hash,
        cache.admitted,
        len(cache.entries),
    )
    xdata = struct.pack(f"<{cache.P * cache.M}q", *(v for vec in cache.x_vectors for v in vec))
    body = bytearray()
    for r, c in cache.sorted_items():
        body += struct.pack(f"<{cache.P}qq", *r, c)
    body = bytes(body)
    with open(path, "wb") as f:
        f.write(header)
        f.write(xdata)
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def load_cache(path: str, expect_x_vectors=None) -> DioCache:
    with open(path, "rb") as f:
        raw = f.read()
    hdr_size = 4 + struct.calcsize("<HIIIQQQ")
    if len(raw) < hdr_size or raw[:4] != _MAGIC:
        raise CacheFileError(f"{path}: not a cache file (bad magic)")
    version, M, P, R, xh, admitted, n_rec = struct.unpack("<HIIIQQQ", raw[4:hdr_size])
    if version != CACHE_FORMAT_VERSION:
        raise CacheFileError(
            f"{path}: format version {version}, expected {CACHE_FORMAT_VERSION}"
        )
    xlen = 8 * P * M
    rec_size = 8 * (P + 1)
    expected = hdr_size + xlen + n_rec * rec_size + 4
    if len(raw) != expected:
        raise CacheFileError(f"{path}: truncated file ({len(raw)} bytes, expected {expected})")
    xflat = struct.unpack(f"<{P*M}q", raw[hdr_size:hdr_size + xlen])
    xv = tuple(tuple(xflat[p * M:(p + 1) * M]) for p in range(P))
    if fnv1a_x_vectors(xv) != xh:
        raise CacheFileError(f"{path}: x_vectors hash mismatch inside file")
    if expect_x_vectors is not None:
        exp = tuple(tuple(int(v) for v in vec) for vec in expect_x_vectors)
        if exp != xv:
            raise CacheFileError(
                f"{path}: cache built for different x_vectors than requested"
            )
    body = raw[hdr_size + xlen:-4]
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CacheFileError(f"{path}: checksum failure")
    entries: dict[tuple[int, ...], int] = {}
    for i in range(n_rec):
        rec = struct.unpack(f"<{P}qq", body[i * rec_size:(i + 1) * rec_size])
        entries[rec[:P]] = rec[P]
    return DioCache(xv, R, entries, admitted)
