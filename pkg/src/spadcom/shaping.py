"""Constant-composition distribution matching.

A matcher frame carries k_p uniform bits inside n_p symbols whose empirical
histogram equals a fixed composition z exactly.  The bit budget is the
floor-log2 of the multinomial coefficient counting the composition's
permutations; matching and dematching are exact interval (enumerative)
arithmetic coding over the shrinking conditional composition z_rem / n_rem,
carried out in arbitrary-precision integers so the map is invertible for
any frame length.  The mapping preserves lexicographic order: bit string
b < b' (as integers) iff match(b) precedes match(b') lexicographically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "CcdmCode",
    "CcdmError",
    "CcdmDecodeError",
    "quantize_pmf",
    "bit_budget",
    "multinomial_count",
    "ccdm_match",
    "ccdm_dematch",
    "rate_loss_bound",
    "write_composition",
    "read_composition",
]


class CcdmError(ValueError):
    """Contract violation on the encode side (bad lengths, bad composition)."""


class CcdmDecodeError(ValueError):
    """Received symbols cannot be a matcher output (composition or range)."""


def multinomial_count(z) -> int:
    """Number of distinct sequences with composition z (exact big integer)."""
    z = [int(v) for v in z]
    if any(v < 0 for v in z):
        raise CcdmError("composition counts must be nonnegative")
    total = math.factorial(sum(z))
    for v in z:
        total //= math.factorial(v)
    return total


def bit_budget(z) -> int:
    """floor(log2(multinomial(z))): input bits carried by one frame."""
    return multinomial_count(z).bit_length() - 1


@dataclass(frozen=True)
class CcdmCode:
    """Frozen matcher parameters: composition z over symbols 0..M-1."""

    counts: tuple

    def __post_init__(self):
        if len(self.counts) < 1 or any(int(v) < 0 for v in self.counts):
            raise CcdmError(f"invalid composition {self.counts}")
        if sum(self.counts) < 1:
            raise CcdmError("composition must place at least one symbol")
        object.__setattr__(self, "counts", tuple(int(v) for v in self.counts))

    @property
    def M(self) -> int:
        return len(self.counts)

    @property
    def n_p(self) -> int:
        return sum(self.counts)

    @cached_property
    def k_p(self) -> int:
        return bit_budget(self.counts)

    @classmethod
    def from_pmf(cls, target, n_p: int) -> "CcdmCode":
        return cls(tuple(quantize_pmf(target, n_p)))


def quantize_pmf(target, n_p: int) -> np.ndarray:
    """Largest-remainder rounding of a pmf to integer counts summing to n_p.

    Ties break toward the lower symbol index; the quantized frequencies
    z/n_p differ from the target by at most 1/n_p in max-norm.
    """
    if n_p <= 0:
        raise CcdmError(f"frame length must be positive, got {n_p}")
    t = np.asarray(target, dtype=float)
    if np.any(t < 0) or abs(t.sum() - 1.0) > 1e-9:
        raise CcdmError("target must be a probability vector")
    exact = t * n_p
    z = np.floor(exact).astype(np.int64)
    remainder = exact - z
    short = n_p - int(z.sum())
    # stable sort keeps lower indices first among equal remainders
    order = np.argsort(-remainder, kind="stable")
    z[order[:short]] += 1
    return z


def rate_loss_bound(n_p: int, M: int) -> float:
    """Upper bound on H(z/n_p) - k_p/n_p in bits per symbol:
    (1 + (M-1) log2(n_p + M - 1)) / n_p."""
    if n_p <= 0 or M < 1:
        raise CcdmError("need n_p > 0 and M >= 1")
    return (1.0 + (M - 1) * math.log2(n_p + M - 1)) / n_p


def _bits_to_int(bits) -> int:
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return value


def _int_to_bits(value: int, width: int) -> np.ndarray:
    out = np.zeros(width, dtype=np.uint8)
    for pos in range(width - 1, -1, -1):
        out[pos] = value & 1
        value >>= 1
    return out


def ccdm_match(bits, code: CcdmCode) -> np.ndarray:
    """Map k_p bits to the sequence of that lexicographic rank among all
    arrangements of the composition (exact; composition holds always)."""
    bits = np.asarray(bits).ravel()
    if bits.size != code.k_p:
        raise CcdmError(f"need exactly k_p = {code.k_p} bits, got {bits.size}")
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise CcdmError("bits must be 0/1")
    index = _bits_to_int(bits)
    remaining = list(code.counts)
    n_rem = code.n_p
    total = multinomial_count(remaining)
    out = np.empty(code.n_p, dtype=np.int64)
    for pos in range(code.n_p):
        for sym, cnt in enumerate(remaining):
            if cnt == 0:
                continue
            block = total * cnt // n_rem     # exact: divides evenly
            if index < block:
                out[pos] = sym
                total = block
                remaining[sym] = cnt - 1
                n_rem -= 1
                break
            index -= block
        else:  # pragma: no cover - unreachable: index < total by construction
            raise CcdmError("rank exceeded configuration count")
    return out


def ccdm_dematch(symbols, code: CcdmCode) -> np.ndarray:
    """Invert ccdm_match; raises CcdmDecodeError when the symbol sequence
    cannot be a matcher output (wrong composition or out-of-range rank)."""
    seq = np.asarray(symbols).ravel()
    if seq.size != code.n_p:
        raise CcdmDecodeError(f"expected {code.n_p} symbols, got {seq.size}")
    counts = np.bincount(seq, minlength=code.M) if seq.size else np.zeros(code.M)
    if seq.size and (seq.min() < 0 or seq.max() >= code.M):
        raise CcdmDecodeError("symbol index outside alphabet")
    if tuple(int(v) for v in counts) != code.counts:
        raise CcdmDecodeError("composition mismatch: not a matcher output")
    remaining = list(code.counts)
    n_rem = code.n_p
    total = multinomial_count(remaining)
    index = 0
    for sym in seq:
        sym = int(sym)
        for s in range(sym):
            cnt = remaining[s]
            if cnt:
                index += total * cnt // n_rem
        block = total * remaining[sym] // n_rem
        total = block
        remaining[sym] -= 1
        n_rem -= 1
    if index >= (1 << code.k_p):
        raise CcdmDecodeError("rank outside the bit budget: not a matcher output")
    return _int_to_bits(index, code.k_p)


def write_composition(code: CcdmCode, path) -> None:
    """One-line interop format: `n_p M z_0 z_1 ... z_{M-1}`."""
    with open(path, "w") as fh:
        fh.write(f"{code.n_p} {code.M} " + " ".join(str(v) for v in code.counts) + "\n")


def read_composition(path) -> CcdmCode:
    with open(path) as fh:
        fields = fh.read().split()
    if len(fields) < 3:
        raise CcdmError("composition file needs `n_p M z_0 ... z_{M-1}`")
    n_p, M = int(fields[0]), int(fields[1])
    z = [int(v) for v in fields[2:]]
    if len(z) != M or sum(z) != n_p:
        raise CcdmError("composition file inconsistent with its header")
    return CcdmCode(tuple(z))
