"""Systematic binary FEC over GF(2) with belief-propagation decoding.

Parity-check matrices travel in the alist sparse format (the de facto
interchange layout for LDPC codes).  Loading derives a systematic encoder:
Gaussian elimination over GF(2) picks a column set on which H is
invertible, those columns carry the parity bits, and the stored
permutation maps between wire order (information bits first) and the
column order of H.  Decoding is flooding sum-product on the Tanner graph
with log-likelihood ratios in natural log.

A seeded near-regular (column weight dv, check weight dc) LDPC generator
provides the desk-scale default codes; 4-cycles are avoided greedily at
construction and the seed makes the matrix reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mapping import BitMapping, gray_mapping, map_symbols, unmap_bits  # noqa: F401

__all__ = [
    "FecError",
    "LinearCode",
    "load_parity_check",
    "parse_alist",
    "write_alist",
    "random_regular_ldpc",
    "encode",
    "compute_llrs",
    "bp_decode",
    "bp_decode_batch",
    "BitMapping",
    "gray_mapping",
    "map_symbols",
    "unmap_bits",
]


class FecError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Packed GF(2) linear algebra
# ---------------------------------------------------------------------------

def _pack_rows(rows_cols: list[np.ndarray], n: int) -> np.ndarray:
    words = (n + 63) // 64
    out = np.zeros((len(rows_cols), words), dtype=np.uint64)
    for i, cols in enumerate(rows_cols):
        w, b = np.divmod(cols, 64)
        np.bitwise_xor.at(out[i], w, np.uint64(1) << b.astype(np.uint64))
    return out


def _gf2_row_reduce(packed: np.ndarray, n: int):
    """In-place forward elimination; returns (pivot_cols, pivot_rows).

    Scans columns left to right, swapping a pivot row up and clearing the
    column below and above (full reduction), so the pivot set is a column
    basis of the row space.
    """
    rows = packed.shape[0]
    pivot_cols: list[int] = []
    pivot_rows: list[int] = []
    r = 0
    for col in range(n):
        if r >= rows:
            break
        w, b = divmod(col, 64)
        mask = np.uint64(1) << np.uint64(b)
        hot = np.nonzero(packed[r:, w] & mask)[0]
        if hot.size == 0:
            continue
        pivot = r + int(hot[0])
        if pivot != r:
            packed[[r, pivot]] = packed[[pivot, r]]
        sel = np.nonzero(packed[:, w] & mask)[0]
        sel = sel[sel != r]
        if sel.size:
            packed[sel] ^= packed[r]
        pivot_cols.append(col)
        pivot_rows.append(r)
        r += 1
    return pivot_cols, r


@dataclass(frozen=True)
class LinearCode:
    """Binary linear code with a systematic wire layout.

    Wire codewords are [info | parity]; column ``perm[i]`` of H corresponds
    to wire position i (information columns first, then the parity columns
    on which H is invertible).  ``parity_gen`` has shape (n - k, k) packed
    along k in 64-bit words: parity = parity_gen . info over GF(2).
    """

    n: int
    k: int
    check_cols: tuple          # per check row: np.ndarray of wire positions
    perm: np.ndarray           # wire position -> original H column
    parity_gen_packed: np.ndarray = field(repr=False)

    @property
    def rate(self) -> float:
        return self.k / self.n

    @property
    def n_checks(self) -> int:
        return self.n - self.k

    def syndrome_ok(self, codeword: np.ndarray) -> bool:
        c = np.asarray(codeword, dtype=np.uint8)
        return all(int(c[cols].sum()) % 2 == 0 for cols in self.check_cols)


def _build_code(rows_cols: list[np.ndarray], n: int) -> LinearCode:
    """Derive the systematic structure from per-row column lists of H."""
    m = len(rows_cols)
    if m == 0 or n <= 0:
        raise FecError("parity-check matrix has no rows")
    packed = _pack_rows(rows_cols, n)
    work = packed.copy()
    pivot_cols, rank = _gf2_row_reduce(work, n)
    if rank == 0:
        raise FecError("parity-check matrix has rank zero")
    if rank == n:
        raise FecError("parity-check matrix leaves no information bits (n = rank)")
    # after full reduction, rows 0..rank-1 of `work` are a reduced row basis:
    # row i reads  x[pivot_cols[i]] = sum of x over its non-pivot support
    k = n - rank
    pivot_set = np.zeros(n, dtype=bool)
    pivot_set[pivot_cols] = True
    info_cols = np.nonzero(~pivot_set)[0]
    perm = np.concatenate([info_cols, np.asarray(pivot_cols)])
    # parity_gen: for each parity row i, the info columns feeding pivot i
    info_pos = -np.ones(n, dtype=np.int64)
    info_pos[info_cols] = np.arange(k)
    words = (k + 63) // 64
    gen = np.zeros((rank, words), dtype=np.uint64)
    for i in range(rank):
        cols = _unpack_row(work[i], n)
        cols = cols[cols != pivot_cols[i]]
        ip = info_pos[cols]
        if np.any(ip < 0):  # pragma: no cover - impossible after full reduction
            raise FecError("reduction left a non-pivot dependency")
        w, b = np.divmod(ip, 64)
        np.bitwise_xor.at(gen[i], w, np.uint64(1) << b.astype(np.uint64))
    # checks in wire coordinates for decoding and syndrome tests
    wire_of_col = np.empty(n, dtype=np.int64)
    wire_of_col[perm] = np.arange(n)
    check_cols = tuple(wire_of_col[cols] for cols in rows_cols)
    return LinearCode(n=n, k=k, check_cols=check_cols, perm=perm,
                      parity_gen_packed=gen)


def _unpack_row(row: np.ndarray, n: int) -> np.ndarray:
    bits = np.unpackbits(row.view(np.uint8), bitorder="little")[:n]
    return np.nonzero(bits)[0]


def encode(info_bits, code: LinearCode) -> np.ndarray:
    """Systematic encoding: wire codeword = [info | parity_gen . info]."""
    info = np.asarray(info_bits, dtype=np.uint8).ravel()
    if info.size != code.k:
        raise FecError(f"need k = {code.k} information bits, got {info.size}")
    words = code.parity_gen_packed.shape[1]
    packed_info = np.zeros(words, dtype=np.uint64)
    hot = np.nonzero(info)[0]
    w, b = np.divmod(hot, 64)
    np.bitwise_xor.at(packed_info, w, np.uint64(1) << b.astype(np.uint64))
    parity = (np.bitwise_count(code.parity_gen_packed & packed_info[None, :])
              .sum(axis=1) & 1).astype(np.uint8)
    return np.concatenate([info, parity])


# ---------------------------------------------------------------------------
# alist interchange format
# ---------------------------------------------------------------------------

def parse_alist(text: str) -> tuple[list[np.ndarray], int]:
    """Parse alist text into per-check column lists and the block length.

    Layout: `n m`, `max_col_w max_row_w`, column weights, row weights,
    then per-column 1-based row indices (0 padded) and per-row 1-based
    column indices (0 padded).
    """
    tokens = text.split()
    if len(tokens) < 4:
        raise FecError("alist: truncated header")
    pos = 0

    def take(count):
        nonlocal pos
        if pos + count > len(tokens):
            raise FecError("alist: truncated body")
        out = tokens[pos:pos + count]
        pos += count
        return [int(t) for t in out]

    n, m = take(2)
    if n <= 0 or m <= 0:
        raise FecError(f"alist: bad dimensions {n} x {m}")
    max_col_w, max_row_w = take(2)
    col_w = take(n)
    row_w = take(m)
    if max(col_w, default=0) > max_col_w or max(row_w, default=0) > max_row_w:
        raise FecError("alist: weight exceeds declared maximum")
    cols = []
    for j in range(n):
        entries = take(max_col_w)
        rows = [e - 1 for e in entries if e != 0]
        if len(rows) != col_w[j]:
            raise FecError(f"alist: column {j} weight mismatch")
        cols.append(rows)
    rows_cols: list[list[int]] = [[] for _ in range(m)]
    for i in range(m):
        entries = take(max_row_w)
        cc = [e - 1 for e in entries if e != 0]
        if len(cc) != row_w[i]:
            raise FecError(f"alist: row {i} weight mismatch")
        rows_cols[i] = cc
    # cross-check the two redundant listings
    from_cols: list[list[int]] = [[] for _ in range(m)]
    for j, rr in enumerate(cols):
        for r in rr:
            if not 0 <= r < m:
                raise FecError("alist: row index out of range")
            from_cols[r].append(j)
    for i in range(m):
        if sorted(from_cols[i]) != sorted(rows_cols[i]):
            raise FecError(f"alist: row {i} disagrees with the column listing")
    return [np.asarray(sorted(c), dtype=np.int64) for c in rows_cols], n


def write_alist(rows_cols: list[np.ndarray], n: int, path) -> None:
    m = len(rows_cols)
    cols: list[list[int]] = [[] for _ in range(n)]
    for i, cc in enumerate(rows_cols):
        for c in cc:
            cols[int(c)].append(i)
    max_col_w = max((len(c) for c in cols), default=0)
    max_row_w = max((len(r) for r in rows_cols), default=0)
    with open(path, "w") as fh:
        fh.write(f"{n} {m}\n{max_col_w} {max_row_w}\n")
        fh.write(" ".join(str(len(c)) for c in cols) + "\n")
        fh.write(" ".join(str(len(r)) for r in rows_cols) + "\n")
        for c in cols:
            pad = [v + 1 for v in c] + [0] * (max_col_w - len(c))
            fh.write(" ".join(map(str, pad)) + "\n")
        for r in rows_cols:
            pad = [int(v) + 1 for v in r] + [0] * (max_row_w - len(r))
            fh.write(" ".join(map(str, pad)) + "\n")


def load_parity_check(path) -> LinearCode:
    """Load an alist file and derive the systematic code structure."""
    with open(path) as fh:
        rows_cols, n = parse_alist(fh.read())
    return _build_code(rows_cols, n)


def code_from_rows(rows_cols, n: int) -> LinearCode:
    """Build a code directly from per-row column index lists."""
    return _build_code([np.asarray(r, dtype=np.int64) for r in rows_cols], n)


# ---------------------------------------------------------------------------
# Seeded near-regular LDPC construction
# ---------------------------------------------------------------------------

def random_regular_ldpc(n: int, dv: int = 3, dc: int = 6, seed=0) -> LinearCode:
    """Near-regular (dv, dc) LDPC: columns have weight dv, check weights are
    as even as possible, 4-cycles are avoided greedily (progressive
    placement with per-column resampling).  Deterministic for a given seed."""
    if n <= 0 or dv < 2 or dc <= dv:
        raise FecError(f"bad LDPC shape n={n}, dv={dv}, dc={dc}")
    rng = np.random.default_rng(seed)
    edges = n * dv
    m = int(round(edges / dc))
    if m < dv + 1:
        raise FecError("too few check nodes; lower the rate or raise n")
    capacity = np.full(m, edges // m, dtype=np.int64)
    capacity[: edges - int(capacity.sum())] += 1
    rng.shuffle(capacity)
    row_sets: list[list[int]] = [[] for _ in range(m)]
    col_rows: list[list[int]] = []
    free = capacity.copy()
    for _col in range(n):
        placed: list[int] = []
        for _attempt in range(100):
            placed = []
            forbidden = np.zeros(m, dtype=bool)
            for _ in range(dv):
                cand = np.nonzero((free > 0) & ~forbidden)[0]
                if cand.size == 0:
                    break
                r = int(cand[rng.integers(cand.size)])
                placed.append(r)
                # any row sharing an existing column with r would close a
                # 4-cycle with the current column
                forbidden[r] = True
                for other_col in row_sets[r]:
                    forbidden[col_rows[other_col]] = True
            if len(placed) == dv:
                break
        if len(placed) < dv:
            # sockets too entangled: accept the cycle for this column
            placed = [int(r) for r in np.argsort(-free)[:dv] if free[r] > 0]
        col = len(col_rows)
        for r in placed:
            free[r] -= 1
            row_sets[r].append(col)
        col_rows.append(placed)
    rows_cols = [np.asarray(sorted(s), dtype=np.int64) for s in row_sets]
    return _build_code(rows_cols, n)


# ---------------------------------------------------------------------------
# LLRs and sum-product decoding
# ---------------------------------------------------------------------------

def compute_llrs(received, design, channel, code: LinearCode,
                 mapping: BitMapping | None = None) -> np.ndarray:
    """Per-bit log-likelihood ratios (natural log, positive favors bit 0).

    Symbol i of the frame uses the shaped prior for the first k/m symbols
    (the systematic, matcher-shaped part) and the uniform prior for the
    parity symbols, mirroring the sparse-dense frame structure.
    """
    y = np.asarray(received, dtype=float).ravel()
    M = design.M
    mapping = mapping or gray_mapping(M)
    m = mapping.m
    if code.k % m != 0 or code.n % m != 0:
        raise FecError("code length and dimension must be multiples of log2(M)")
    n_sym = code.n // m
    n_shaped = code.k // m
    if y.size != n_sym:
        raise FecError(f"expected {n_sym} received symbols, got {y.size}")
    g, sigma = channel.gain, channel.sigma
    amps = design.delta_star * np.arange(M)
    with np.errstate(divide="ignore"):
        log_shaped = np.where(design.pmf_star > 0.0,
                              np.log(np.clip(design.pmf_star, 1e-300, None)),
                              -np.inf)
    metric = -(y[:, None] - g * amps[None, :]) ** 2 / (2.0 * sigma * sigma)
    metric[:n_shaped] += log_shaped[None, :]
    # parity positions: uniform prior is a constant that cancels in the ratio
    bits = mapping.label_bits()                      # (M, m)
    llrs = np.empty((n_sym, m))
    for level in range(m):
        zero_set = bits[:, level] == 0
        l0 = _logsumexp(metric[:, zero_set])
        l1 = _logsumexp(metric[:, ~zero_set])
        llrs[:, level] = l0 - l1
    return llrs.reshape(-1)


def _logsumexp(x: np.ndarray) -> np.ndarray:
    top = x.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    out = safe + np.log(np.exp(x - safe[:, None]).sum(axis=1))
    return np.where(np.isfinite(top), out, -np.inf)


class _TannerIndex:
    """Flat edge arrays plus segment boundaries for vectorized flooding."""

    def __init__(self, code: LinearCode):
        rows = code.check_cols
        self.edge_col = np.concatenate(rows).astype(np.int64)
        deg = np.array([len(r) for r in rows])
        self.row_ptr = np.concatenate([[0], np.cumsum(deg)])[:-1]
        self.row_id = np.repeat(np.arange(len(rows)), deg)
        order = np.argsort(self.edge_col, kind="stable")
        self.by_col = order
        self.col_sorted = self.edge_col[order]
        col_deg = np.bincount(self.edge_col, minlength=code.n)
        self.col_ptr = np.concatenate([[0], np.cumsum(col_deg)])[:-1]
        self.n = code.n


def _tanner(code: LinearCode) -> _TannerIndex:
    idx = getattr(code, "_tanner_index", None)
    if idx is None:
        idx = _TannerIndex(code)
        object.__setattr__(code, "_tanner_index", idx)
    return idx


def bp_decode_batch(llrs: np.ndarray, code: LinearCode, max_iters: int = 50
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flooding sum-product decoding of a batch of frames.

    llrs: (B, n) channel log-likelihood ratios in wire order.
    Returns (info_bits (B, k), converged (B,), iterations (B,)).
    Early exit per frame as soon as every parity check is satisfied.
    """
    ll = np.atleast_2d(np.asarray(llrs, dtype=float))
    B, n = ll.shape
    if n != code.n:
        raise FecError(f"LLR length {n} does not match code length {code.n}")
    idx = _tanner(code)
    E = idx.edge_col.size
    c2v = np.zeros((B, E))
    hard = (ll < 0).astype(np.uint8)
    converged = _checks_ok(hard, idx)
    iters = np.zeros(B, dtype=np.int64)
    active = ~converged
    for it in range(max_iters):
        if not active.any():
            break
        sub = np.nonzero(active)[0]
        v2c = _col_totals(ll[sub], c2v[sub], idx)[:, idx.edge_col] - c2v[sub]
        t = np.tanh(np.clip(0.5 * v2c, -19.0, 19.0))
        t = np.clip(t, -0.9999999999999998, 0.9999999999999998)
        logt = np.log(np.abs(t))
        neg = t < 0
        row_logsum = np.add.reduceat(logt, idx.row_ptr, axis=1)
        row_negsum = np.add.reduceat(neg.astype(np.int64), idx.row_ptr, axis=1)
        excl_log = row_logsum[:, idx.row_id] - logt
        excl_sign = 1 - 2 * ((row_negsum[:, idx.row_id] - neg) & 1)
        prod = np.clip(np.exp(excl_log), 0.0, 0.9999999999999998) * excl_sign
        c2v_new = 2.0 * np.arctanh(prod)
        c2v[sub] = c2v_new
        posterior = _col_totals(ll[sub], c2v[sub], idx)
        hard[sub] = (posterior < 0).astype(np.uint8)
        ok = _checks_ok(hard[sub], idx)
        iters[sub] = it + 1
        newly = sub[ok]
        converged[newly] = True
        active[newly] = False
    info = hard[:, :code.k]
    return info, converged, iters


def _col_totals(ll: np.ndarray, c2v: np.ndarray, idx: _TannerIndex) -> np.ndarray:
    """Posterior per variable: channel LLR plus all incoming check messages."""
    sums = np.add.reduceat(c2v[:, idx.by_col], idx.col_ptr, axis=1)
    return ll + sums


def _checks_ok(hard: np.ndarray, idx: _TannerIndex) -> np.ndarray:
    par = np.add.reduceat(hard[:, idx.edge_col], idx.row_ptr, axis=1) & 1
    return ~(par.any(axis=1))


def bp_decode(llrs, code: LinearCode, max_iters: int = 50
              ) -> tuple[np.ndarray, bool]:
    """Single-frame sum-product decode; returns (info bits, converged)."""
    info, conv, _ = bp_decode_batch(np.asarray(llrs)[None, :], code, max_iters)
    return info[0], bool(conv[0])
