"""Binary labeling of amplitude indices (default: binary-reflected Gray)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["BitMapping", "gray_mapping", "map_symbols", "unmap_bits"]


class MappingError(ValueError):
    pass


@dataclass(frozen=True)
class BitMapping:
    """Bijection between amplitude indices 0..M-1 and m-bit labels.

    ``labels[j]`` is the integer whose m-bit MSB-first expansion labels
    index j; bit level 1 is the MSB.
    """

    M: int
    labels: tuple = field(repr=False)

    def __post_init__(self):
        m = self.M.bit_length() - 1
        if self.M < 2 or (1 << m) != self.M:
            raise MappingError(f"M must be a power of two >= 2, got {self.M}")
        if sorted(self.labels) != list(range(self.M)):
            raise MappingError("labels must be a bijection onto 0..M-1")

    @property
    def m(self) -> int:
        return self.M.bit_length() - 1

    def label_bits(self) -> np.ndarray:
        """(M, m) array: bit ell-1 (MSB-first) of each index's label."""
        lab = np.asarray(self.labels, dtype=np.int64)
        shifts = np.arange(self.m - 1, -1, -1)
        return ((lab[:, None] >> shifts[None, :]) & 1).astype(np.uint8)

    def inverse(self) -> np.ndarray:
        inv = np.empty(self.M, dtype=np.int64)
        inv[np.asarray(self.labels)] = np.arange(self.M)
        return inv


def gray_mapping(M: int) -> BitMapping:
    """Binary-reflected Gray labels: adjacent indices differ in one bit."""
    j = np.arange(M)
    return BitMapping(M, tuple(int(v) for v in j ^ (j >> 1)))


def map_symbols(indices: np.ndarray, mapping: BitMapping) -> np.ndarray:
    """Concatenated MSB-first labels of a symbol-index sequence."""
    idx = np.asarray(indices, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= mapping.M):
        raise MappingError("symbol index outside 0..M-1")
    return mapping.label_bits()[idx].reshape(-1)


def unmap_bits(bits: np.ndarray, mapping: BitMapping) -> np.ndarray:
    """Inverse of map_symbols; bit string length must be a multiple of m."""
    b = np.asarray(bits, dtype=np.int64)
    m = mapping.m
    if b.size % m != 0:
        raise MappingError(f"bit string length {b.size} not a multiple of m={m}")
    if b.size and (b.min() < 0 or b.max() > 1):
        raise MappingError("bits must be 0/1")
    weights = 1 << np.arange(m - 1, -1, -1)
    labels = b.reshape(-1, m) @ weights
    return mapping.inverse()[labels]
