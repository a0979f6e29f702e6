"""Rate metrics for shaped unipolar M-PAM over the Gaussian intensity channel.

Everything downstream optimizes one of these quantities (all in bits):

* ``entropy``             source entropy of the symbol distribution
* ``mutual_information``  I(X;Y | G=g) of the Gaussian-mixture output
* ``sdt_rate``            c*I(p) + (1-c)*I(u): shaped payload plus uniform
                          parity time-share
* ``bmd_rate``            achievable rate under bit-metric decoding
* ``tx_rate``             c*H(p): the net transmission rate
* ``abr``                 maximum binary code rate sustaining the scheme

The output density given gain g is the mixture
f(y) = sum_j p_j N(y; g*j*delta, sigma^2).  Its differential entropy and the
per-level conditional bit entropies are integrated with per-component
Gauss-Hermite quadrature; the mixture log-density is evaluated by
log-sum-exp so nothing underflows at high SNR.  One quadrature pass yields
the node log-densities and the posterior symbol responsibilities, which is
all that both the symbol-metric and bit-metric figures need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mapping import BitMapping, gray_mapping

__all__ = [
    "ConstellationSpec",
    "RateReport",
    "as_pmf",
    "uniform_pmf",
    "entropy",
    "kl_divergence",
    "mutual_information",
    "mutual_information_gradient",
    "mutual_information_value_and_gradient",
    "MixtureQuadrature",
    "conditional_bit_entropies",
    "sdt_rate",
    "bmd_rate",
    "tx_rate",
    "abr",
    "rate_report",
]

LOG2 = math.log(2.0)
GH_NODES_DEFAULT = 128


class InfoTheoryError(ValueError):
    pass


@dataclass(frozen=True)
class ConstellationSpec:
    """Unipolar M-PAM grid: amplitudes j*delta for j = 0..M-1."""

    M: int
    delta: float

    def __post_init__(self):
        m = self.M.bit_length() - 1
        if self.M < 2 or (1 << m) != self.M:
            raise InfoTheoryError(f"M must be a power of two >= 2, got {self.M}")
        if not self.delta > 0.0:
            raise InfoTheoryError(f"delta must be positive, got {self.delta}")

    @property
    def m(self) -> int:
        return self.M.bit_length() - 1

    @property
    def amplitudes(self) -> np.ndarray:
        return self.delta * np.arange(self.M, dtype=float)


def as_pmf(p, M: int | None = None, tol: float = 1e-9) -> np.ndarray:
    """Validate and return a probability vector (sum 1 within tol, entries >= 0)."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1:
        raise InfoTheoryError("pmf must be one-dimensional")
    if M is not None and arr.size != M:
        raise InfoTheoryError(f"pmf length {arr.size} != M = {M}")
    if np.any(arr < -tol):
        raise InfoTheoryError("pmf entries must be nonnegative")
    s = arr.sum()
    if abs(s - 1.0) > tol:
        raise InfoTheoryError(f"pmf sums to {s}, not 1")
    arr = np.clip(arr, 0.0, None)
    return arr / arr.sum()


def uniform_pmf(M: int) -> np.ndarray:
    return np.full(M, 1.0 / M)


def entropy(p) -> float:
    """Shannon entropy in bits, with 0*log 0 = 0."""
    arr = as_pmf(p)
    nz = arr[arr > 0.0]
    return float(-(nz * np.log2(nz)).sum())


def kl_divergence(p, q) -> float:
    """KL(p || q) in bits; infinite if p puts mass where q has none."""
    pa, qa = as_pmf(p), as_pmf(q)
    mask = pa > 0.0
    if np.any(qa[mask] <= 0.0):
        return math.inf
    return float((pa[mask] * np.log2(pa[mask] / qa[mask])).sum())


@lru_cache(maxsize=8)
def _gh(n: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.hermite.hermgauss(n)
    return t, w / math.sqrt(math.pi)


class MixtureQuadrature:
    """Precomputed Gauss-Hermite node data for one (constellation, g, sigma).

    Nodes y_jk = g a_j + sqrt(2) sigma t_k per mixture component j; the
    pairwise squared distances (y_jk - g a_l)^2 / (2 sigma^2) do not depend
    on the pmf, so repeated metric evaluations (the optimizer hot path)
    only pay for the log-sum-exp over components.
    """

    def __init__(self, cons: ConstellationSpec, g: float, sigma: float,
                 n_nodes: int = GH_NODES_DEFAULT):
        if not sigma > 0.0:
            raise InfoTheoryError(f"sigma must be positive, got {sigma}")
        if g < 0.0:
            raise InfoTheoryError(f"gain must be nonnegative, got {g}")
        self.cons = cons
        self.g = g
        self.sigma = sigma
        t, w = _gh(n_nodes)
        self.t2 = t * t
        self.w = w
        a = cons.amplitudes
        y = g * a[:, None] + math.sqrt(2.0) * sigma * t[None, :]   # (M, K)
        z = (y[:, :, None] - g * a[None, None, :]) / sigma
        self.d2 = 0.5 * z * z                                       # (M, K, M)

    def _lse(self, p: np.ndarray):
        live = p > 0.0
        with np.errstate(divide="ignore"):
            logp = np.where(live, np.log(np.clip(p, 1e-300, None)), -np.inf)
        logr = logp[None, None, :] - self.d2
        top = logr.max(axis=2, keepdims=True)
        lse = top[:, :, 0] + np.log(np.exp(logr - top).sum(axis=2))
        return live, lse, logr

    def mi(self, p: np.ndarray) -> float:
        if self.g == 0.0:
            return 0.0
        live, lse, _ = self._lse(p)
        per = ((-self.t2[None, :] - lse) * self.w[None, :]).sum(axis=1)
        val = float((p[live] * per[live]).sum()) / LOG2
        return min(max(val, 0.0), entropy(p))

    def mi_and_grad(self, p: np.ndarray, clamp: bool = True
                    ) -> tuple[float, np.ndarray]:
        """Value and gradient; clamp=False skips the [0, H(p)] clamp so the
        smooth off-simplex extension is usable inside iterative solvers."""
        if self.g == 0.0:
            return 0.0, np.zeros(self.cons.M)
        live, lse, _ = self._lse(p)
        per = ((-self.t2[None, :] - lse) * self.w[None, :]).sum(axis=1)
        val = float((p[live] * per[live]).sum()) / LOG2
        if clamp:
            val = min(max(val, 0.0), entropy(p))
        s = lse @ self.w
        return val, (-s - 1.5) / LOG2

    def bit_entropies(self, p: np.ndarray, mapping: BitMapping) -> np.ndarray:
        bits = mapping.label_bits().astype(float)
        if self.g == 0.0:
            q1 = p @ bits
            return np.array([_binary_entropy(q) for q in q1])
        live, lse, logr = self._lse(p)
        resp = np.exp(logr - lse[:, :, None])
        q1 = np.clip(np.einsum("jkl,lb->jkb", resp, bits), 0.0, 1.0)
        per_comp = np.einsum("jkb,k->jb", _binary_entropy_arr(q1), self.w)
        return p[live] @ per_comp[live]


def _node_quantities(p: np.ndarray, cons: ConstellationSpec, g: float, sigma: float,
                     n_nodes: int):
    """Per-component Gauss-Hermite node data for the mixture output.

    Returns (weights w_k, component mask, lse[j,k], logr[j,k,l]) where
    lse[j,k] = logsumexp_l( ln p_l - (y_jk - g a_l)^2 / (2 sigma^2) )
    for nodes y_jk = g a_j + sqrt(2) sigma t_k, and logr are the summands
    (so that softmax over l gives the posterior symbol responsibilities).
    """
    quad = MixtureQuadrature(cons, g, sigma, n_nodes)
    live, lse, logr = quad._lse(p)
    return quad.w, live, lse, logr


def mutual_information(p, cons: ConstellationSpec, g: float, sigma: float,
                       n_nodes: int = GH_NODES_DEFAULT) -> float:
    """I(X;Y|G=g) in bits for symbol pmf p on the given constellation.

    Computed as sum_j p_j * E_j[ln N_j(Y) - ln f(Y)] / ln 2 and clamped to
    [0, H(p)] (quadrature can stray by a few ulp at the extremes).
    """
    if not sigma > 0.0:
        raise InfoTheoryError(f"sigma must be positive, got {sigma}")
    if g < 0.0:
        raise InfoTheoryError(f"gain must be nonnegative, got {g}")
    pa = as_pmf(p, cons.M)
    if g == 0.0:
        return 0.0
    t, _w = _gh(n_nodes)
    w, live, lse, _ = _node_quantities(pa, cons, g, sigma, n_nodes)
    per_comp = ((-t[None, :] * t[None, :] - lse) * w[None, :]).sum(axis=1)
    val = float((pa[live] * per_comp[live]).sum()) / LOG2
    return min(max(val, 0.0), entropy(pa))


def mutual_information_gradient(p, cons: ConstellationSpec, g: float, sigma: float,
                                n_nodes: int = GH_NODES_DEFAULT) -> np.ndarray:
    """d I / d p_j in bits, for the mixture-KL extension of I off the simplex
    (I(q) = sum_j q_j KL(N_j || f_q)); all extensions agree on the simplex
    tangent.  dI/dp_j = KL(N_j || f) - 1/ln 2, which reduces to
    -(E_j[lse] + 3/2) / ln 2 with the node quantities used here."""
    if not sigma > 0.0:
        raise InfoTheoryError(f"sigma must be positive, got {sigma}")
    pa = as_pmf(p, cons.M)
    if g == 0.0:
        return np.zeros(cons.M)
    w, _live, lse, _ = _node_quantities(pa, cons, g, sigma, n_nodes)
    s = (lse * w[None, :]).sum(axis=1)
    return (-s - 1.5) / LOG2


def mutual_information_value_and_gradient(p, cons: ConstellationSpec, g: float,
                                          sigma: float,
                                          n_nodes: int = GH_NODES_DEFAULT
                                          ) -> tuple[float, np.ndarray]:
    """Value and gradient from a single quadrature pass (optimizer hot path)."""
    if not sigma > 0.0:
        raise InfoTheoryError(f"sigma must be positive, got {sigma}")
    pa = as_pmf(p, cons.M)
    if g == 0.0:
        return 0.0, np.zeros(cons.M)
    t, _ = _gh(n_nodes)
    w, live, lse, _ = _node_quantities(pa, cons, g, sigma, n_nodes)
    per_comp = ((-t[None, :] * t[None, :] - lse) * w[None, :]).sum(axis=1)
    val = min(max(float((pa[live] * per_comp[live]).sum()) / LOG2, 0.0), entropy(pa))
    s = (lse * w[None, :]).sum(axis=1)
    return val, (-s - 1.5) / LOG2


def conditional_bit_entropies(p, cons: ConstellationSpec, g: float, sigma: float,
                              mapping: BitMapping | None = None,
                              n_nodes: int = GH_NODES_DEFAULT) -> np.ndarray:
    """H(B_ell | Y, G=g) in bits for each of the m bit levels (MSB first).

    The posterior bit probability at each quadrature node comes from the
    mixture responsibilities, so this shares its node set with
    ``mutual_information``.
    """
    if not sigma > 0.0:
        raise InfoTheoryError(f"sigma must be positive, got {sigma}")
    pa = as_pmf(p, cons.M)
    mapping = mapping or gray_mapping(cons.M)
    if mapping.M != cons.M:
        raise InfoTheoryError("labeling size does not match constellation")
    m = mapping.m
    if g == 0.0:
        # output carries nothing: H(B|Y) = H(B), from the marginal bit probs
        bits = mapping.label_bits().astype(float)
        q1 = pa @ bits
        return np.array([_binary_entropy(q) for q in q1])
    w, live, lse, logr = _node_quantities(pa, cons, g, sigma, n_nodes)
    resp = np.exp(logr - lse[:, :, None])                          # (M, K, M)
    bits = mapping.label_bits().astype(float)                      # (M, m)
    q1 = np.einsum("jkl,lb->jkb", resp, bits)                      # P{B_ell=1|y_jk}
    q1 = np.clip(q1, 0.0, 1.0)
    hb = _binary_entropy_arr(q1)                                   # (M, K, m)
    per_comp = np.einsum("jkb,k->jb", hb, w)                       # (M, m)
    return pa[live] @ per_comp[live]


def _binary_entropy(q: float) -> float:
    if q <= 0.0 or q >= 1.0:
        return 0.0
    return -q * math.log2(q) - (1.0 - q) * math.log2(1.0 - q)


def _binary_entropy_arr(q: np.ndarray) -> np.ndarray:
    out = np.zeros_like(q)
    mask = (q > 0.0) & (q < 1.0)
    qm = q[mask]
    out[mask] = -(qm * np.log2(qm) + (1.0 - qm) * np.log2(1.0 - qm))
    return out


def sdt_rate(p, cons: ConstellationSpec, g: float, sigma: float, c: float,
             mi_uniform: float | None = None,
             n_nodes: int = GH_NODES_DEFAULT) -> float:
    """Sparse-dense rate c*I(p) + (1-c)*I(u) in bits per channel use.

    ``mi_uniform`` short-circuits the uniform term when the caller already
    has it (it does not depend on p).
    """
    if not 0.0 < c <= 1.0:
        raise InfoTheoryError(f"code rate must be in (0, 1], got {c}")
    mi_p = mutual_information(p, cons, g, sigma, n_nodes)
    if c == 1.0:
        return mi_p
    if mi_uniform is None:
        mi_uniform = mutual_information(uniform_pmf(cons.M), cons, g, sigma, n_nodes)
    return c * mi_p + (1.0 - c) * mi_uniform


def tx_rate(p, c: float) -> float:
    """Net transmission rate c*H(p) in bits per channel use."""
    if not 0.0 < c <= 1.0:
        raise InfoTheoryError(f"code rate must be in (0, 1], got {c}")
    return c * entropy(p)


def bmd_rate(p, cons: ConstellationSpec, g: float, sigma: float, c: float,
             mapping: BitMapping | None = None,
             n_nodes: int = GH_NODES_DEFAULT) -> float:
    """Achievable rate with bit-metric decoding,

        (1-c)[m - sum_l H(B_ul|Y_u)]+  +  c[H(p) - sum_l H(B_pl|Y_p)]+

    where the clamps [x]+ = max(x, 0) are applied exactly as stated.
    """
    if not 0.0 < c <= 1.0:
        raise InfoTheoryError(f"code rate must be in (0, 1], got {c}")
    pa = as_pmf(p, cons.M)
    mapping = mapping or gray_mapping(cons.M)
    m = mapping.m
    h_p = conditional_bit_entropies(pa, cons, g, sigma, mapping, n_nodes).sum()
    shaped = max(entropy(pa) - h_p, 0.0)
    if c == 1.0:
        return c * shaped
    h_u = conditional_bit_entropies(uniform_pmf(cons.M), cons, g, sigma, mapping,
                                    n_nodes).sum()
    return (1.0 - c) * max(m - h_u, 0.0) + c * shaped


def abr(p, cons: ConstellationSpec, g: float, sigma: float,
        mapping: BitMapping | None = None,
        n_nodes: int = GH_NODES_DEFAULT) -> float:
    """Achievable binary code rate: the largest FEC rate c for which the
    transmission rate c*H(p) stays under the bit-metric achievable rate."""
    pa = as_pmf(p, cons.M)
    mapping = mapping or gray_mapping(cons.M)
    m = mapping.m
    h_u = conditional_bit_entropies(uniform_pmf(cons.M), cons, g, sigma, mapping,
                                    n_nodes).sum()
    h_p = conditional_bit_entropies(pa, cons, g, sigma, mapping, n_nodes).sum()
    chi = max(m - h_u, 0.0)
    denom = entropy(pa) - max(entropy(pa) - h_p, 0.0) + chi
    if denom <= 1e-300 or chi <= 0.0:
        return 0.0
    return min(max(chi / denom, 0.0), 1.0)


@dataclass(frozen=True)
class RateReport:
    """All rate figures for one (p, constellation, g, sigma, c) tuple."""

    mi_shaped: float
    mi_uniform: float
    sdt_rate: float
    bmd_rate: float
    entropy: float
    tx_rate: float
    abr: float


def rate_report(p, cons: ConstellationSpec, g: float, sigma: float, c: float,
                mapping: BitMapping | None = None,
                n_nodes: int = GH_NODES_DEFAULT) -> RateReport:
    pa = as_pmf(p, cons.M)
    mapping = mapping or gray_mapping(cons.M)
    mi_p = mutual_information(pa, cons, g, sigma, n_nodes)
    mi_u = mutual_information(uniform_pmf(cons.M), cons, g, sigma, n_nodes)
    return RateReport(
        mi_shaped=mi_p,
        mi_uniform=mi_u,
        sdt_rate=c * mi_p + (1.0 - c) * mi_u,
        bmd_rate=bmd_rate(pa, cons, g, sigma, c, mapping, n_nodes),
        entropy=entropy(pa),
        tx_rate=tx_rate(pa, c),
        abr=abr(pa, cons, g, sigma, mapping, n_nodes),
    )
