"""Monte Carlo frame-error simulation, ergodic rate, outage and blind design.

The frame pipeline mirrors the transmitter/receiver chain exactly: source
bits -> matcher -> Gray labels -> systematic FEC -> modulation by the
design spacing -> fading-scaled Gaussian channel -> position-aware LLRs ->
sum-product decoding -> label inversion -> dematcher -> bit comparison.
Every frame draws its randomness from a counter-derived substream
(seed, frame index), so results are bit-for-bit reproducible regardless
of batching or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.stats import beta as _beta_dist

from .channel import ChannelState, FadingModel, NoFading, fading_cdf, fading_quantile
from .fec import LinearCode, bp_decode_batch, compute_llrs, encode, gray_mapping, \
    map_symbols, unmap_bits
from .infotheory import ConstellationSpec, bmd_rate
from .optimizer import ShapedDesign, SolverSettings, best_practical_design
from .shaping import CcdmCode, CcdmDecodeError, ccdm_dematch, ccdm_match

__all__ = [
    "SimkitError",
    "FerResult",
    "OutageSpec",
    "fer_simulate",
    "ccdm_code_for",
    "RateCurve",
    "build_rate_curve",
    "ergodic_rate",
    "outage_probability",
    "blind_design",
]


class SimkitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Frame-error simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FerResult:
    frames: int
    errors: int
    fer: float
    ci_lo: float
    ci_hi: float
    seed: int

    def to_dict(self) -> dict:
        return {"frames": self.frames, "errors": self.errors, "fer": self.fer,
                "ci_lo": self.ci_lo, "ci_hi": self.ci_hi, "seed": self.seed}


def _clopper_pearson(errors: int, frames: int, conf: float = 0.95):
    """Exact binomial confidence interval (the standard for rare events)."""
    alpha = 1.0 - conf
    lo = 0.0 if errors == 0 else float(_beta_dist.ppf(alpha / 2, errors,
                                                      frames - errors + 1))
    hi = 1.0 if errors == frames else float(_beta_dist.ppf(1 - alpha / 2,
                                                           errors + 1,
                                                           frames - errors))
    return lo, hi


def ccdm_code_for(design: ShapedDesign, code: LinearCode) -> CcdmCode:
    """Matcher composition for a design on a specific FEC code: the design
    pmf quantized to the number of shaped symbols the code can carry."""
    m = design.M.bit_length() - 1
    if code.k % m != 0 or code.n % m != 0:
        raise SimkitError("code dimension/length must be multiples of log2(M)")
    return CcdmCode.from_pmf(design.pmf_star, code.k // m)


def _simulate_batch(design: ShapedDesign, code: LinearCode, ccdm: CcdmCode,
                    channel: ChannelState, seed: int, frame_ids: np.ndarray,
                    bp_iters: int) -> int:
    """Run the full pipeline for a batch of frames; returns the error count."""
    mapping = gray_mapping(design.M)
    m = mapping.m
    n_sym = code.n // m
    k_p = ccdm.k_p
    batch = frame_ids.size
    payloads = np.empty((batch, k_p), dtype=np.uint8)
    llrs = np.empty((batch, code.n))
    infos = np.empty((batch, code.k), dtype=np.uint8)
    for row, fid in enumerate(frame_ids):
        rng = np.random.default_rng((seed, int(fid)))
        bits = rng.integers(0, 2, k_p, dtype=np.uint8)
        payloads[row] = bits
        shaped = ccdm_match(bits, ccdm)
        info = map_symbols(shaped, mapping)
        infos[row] = info
        cw = encode(info, code)
        symbols = unmap_bits(cw, mapping)
        x = design.delta_star * symbols
        y = channel.gain * x + rng.normal(0.0, channel.sigma, n_sym)
        llrs[row] = compute_llrs(y, design, channel, code, mapping)
    decoded, _conv, _it = bp_decode_batch(llrs, code, bp_iters)
    errors = 0
    for row in range(batch):
        if not np.array_equal(decoded[row], infos[row]):
            errors += 1
            continue
        try:
            back = ccdm_dematch(unmap_bits(decoded[row], mapping), ccdm)
        except CcdmDecodeError:
            errors += 1
            continue
        if not np.array_equal(back, payloads[row]):
            errors += 1
    return errors


def fer_simulate(design: ShapedDesign, code: LinearCode, channel: ChannelState,
                 n_frames: int, seed: int, *, max_errors: int = 100,
                 batch: int = 32, bp_iters: int = 50, workers: int = 1,
                 rate_tol: float = 5e-3) -> FerResult:
    """Monte Carlo frame error rate of a design over its FEC code.

    Stops at min(n_frames, max_errors frame errors), evaluating frames in
    index order so the result is independent of batch size and workers.
    """
    if abs(code.rate - design.code_rate) > rate_tol:
        raise SimkitError(
            f"code rate {code.rate:.4f} does not match design rate "
            f"{design.code_rate:.4f} (tolerance {rate_tol})")
    ccdm = ccdm_code_for(design, code)
    batches = [np.arange(lo, min(lo + batch, n_frames))
               for lo in range(0, n_frames, batch)]
    frames = errors = 0

    if workers > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(workers) as pool:
            results = pool.imap(_BatchRunner(design, code, ccdm, channel, seed,
                                             bp_iters), batches)
            for ids, err in zip(batches, results):
                frames += ids.size
                errors += err
                if errors >= max_errors:
                    pool.terminate()
                    break
    else:
        for ids in batches:
            errors += _simulate_batch(design, code, ccdm, channel, seed, ids,
                                      bp_iters)
            frames += ids.size
            if errors >= max_errors:
                break
    fer = errors / frames if frames else math.nan
    lo, hi = _clopper_pearson(errors, frames)
    return FerResult(frames=frames, errors=errors, fer=fer, ci_lo=lo, ci_hi=hi,
                     seed=seed)


class _BatchRunner:
    """Picklable batch closure for worker pools."""

    def __init__(self, design, code, ccdm, channel, seed, bp_iters):
        self.args = (design, code, ccdm, channel, seed)
        self.bp_iters = bp_iters

    def __call__(self, frame_ids):
        design, code, ccdm, channel, seed = self.args
        return _simulate_batch(design, code, ccdm, channel, seed, frame_ids,
                               self.bp_iters)


# ---------------------------------------------------------------------------
# Ergodic rate
# ---------------------------------------------------------------------------

class RateCurve:
    """Monotone-cubic interpolation of a rate-vs-gain designer on a log grid.

    Running the full design optimization inside every quadrature node is
    wasteful; the designer is sampled once on ``n_grid`` log-spaced gains
    and interpolated.  ``interp_error`` reports the measured error on probe
    midpoints.
    """

    def __init__(self, designer, g_lo: float, g_hi: float, n_grid: int = 200,
                 n_probe: int = 9):
        if not 0.0 < g_lo < g_hi:
            raise SimkitError("need 0 < g_lo < g_hi")
        self.grid = np.geomspace(g_lo, g_hi, n_grid)
        self.values = np.array([max(float(designer(g)), 0.0) for g in self.grid])
        self._pchip = PchipInterpolator(np.log(self.grid), self.values,
                                        extrapolate=False)
        probes = np.geomspace(g_lo, g_hi, n_probe + 2)[1:-1] * 1.013
        probes = probes[(probes > g_lo) & (probes < g_hi)]
        self.interp_error = max(
            (abs(float(designer(g)) - float(self(g))) for g in probes),
            default=0.0)

    def __call__(self, g):
        ga = np.asarray(g, dtype=float)
        out = self._pchip(np.log(np.clip(ga, self.grid[0], self.grid[-1])))
        out = np.where(ga < self.grid[0], self.values[0] * 0.0, out)
        out = np.where(ga > self.grid[-1], self.values[-1], out)
        return float(out) if np.isscalar(g) else out


def build_rate_curve(designer, fading: FadingModel, *, n_grid: int = 200,
                     tail_mass: float = 1e-7) -> RateCurve:
    g_lo = fading_quantile(fading, tail_mass)
    g_hi = fading_quantile(fading, 1.0 - tail_mass)
    return RateCurve(designer, g_lo, g_hi, n_grid)


def ergodic_rate(fading: FadingModel, rate_fn, *, tail_mass: float = 1e-7,
                 tol: float = 1e-9) -> float:
    """Average rate over the fading density: int rate(g) f(g) dg.

    Gauss-Legendre panels between the fading quantiles at tail_mass and
    1 - tail_mass, doubling the panel count until stable; the neglected
    tails carry under 2*tail_mass of probability, far below 1e-6.
    """
    if isinstance(fading, NoFading):
        return max(float(rate_fn(1.0)), 0.0)
    g_lo = fading_quantile(fading, tail_mass)
    g_hi = fading_quantile(fading, 1.0 - tail_mass)
    nodes, weights = np.polynomial.legendre.leggauss(32)

    def panel_sum(n_panels: int) -> float:
        edges = np.geomspace(g_lo, g_hi, n_panels + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        t = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
        w = (half[:, None] * weights[None, :]).ravel()
        vals = np.clip(np.asarray(rate_fn(t), dtype=float), 0.0, None)
        pdf = fading.pdf(t)
        return float(np.sum(vals * pdf * w))

    n = 16
    prev = panel_sum(n)
    for _ in range(6):
        n *= 2
        cur = panel_sum(n)
        if abs(cur - prev) < max(tol, 1e-9 * abs(cur)):
            return cur
        prev = cur
    return prev


# ---------------------------------------------------------------------------
# Outage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutageSpec:
    target_rate: float
    threshold_gain: float
    outage_probability: float
    confidence: float | None = None    # the design target, when applicable
    design_gain: float | None = None

    def to_dict(self) -> dict:
        return {"target_rate": self.target_rate,
                "threshold_gain": self.threshold_gain,
                "outage_probability": self.outage_probability,
                "confidence": self.confidence,
                "design_gain": self.design_gain}


def outage_probability(design: ShapedDesign, fading: FadingModel,
                       rate_tol: float = 1e-8) -> OutageSpec:
    """Probability that the design's rate exceeds its bit-metric achievable
    rate under fading: the CDF at the threshold gain where they meet.

    The achievable rate is nondecreasing in the gain, so the threshold is
    found by bisection; a rate above the infinite-gain ceiling reports
    outage 1 with the threshold at infinity.
    """
    rate = design.tx_rate
    if rate <= 0.0:
        return OutageSpec(rate, 0.0, 0.0)
    cons = ConstellationSpec(design.M, design.delta_star)
    sigma, c, p = design.sigma, design.code_rate, design.pmf_star

    def achievable(g: float) -> float:
        return bmd_rate(p, cons, g, sigma, c)

    g_hi = max(design.gain, 1.0)
    ceiling_gain = g_hi
    while achievable(g_hi) < rate:
        g_hi *= 2.0
        ceiling_gain = g_hi
        if g_hi > 1e9:
            return OutageSpec(rate, math.inf, 1.0)
    g_lo = ceiling_gain / 2.0 if ceiling_gain > max(design.gain, 1.0) else 0.0
    while g_lo > 0.0 and achievable(g_lo) >= rate:
        g_lo /= 2.0
    for _ in range(200):
        mid = 0.5 * (g_lo + g_hi)
        r_mid = achievable(mid)
        if abs(r_mid - rate) < rate_tol:
            g_hi = mid
            break
        if r_mid < rate:
            g_lo = mid
        else:
            g_hi = mid
    g_o = g_hi
    return OutageSpec(rate, g_o, fading_cdf(fading, g_o))


def blind_design(gamma_bar: float, fading: FadingModel, m_set, rate_set,
                 p_over_sigma_db: float,
                 settings: SolverSettings | None = None
                 ) -> tuple[ShapedDesign | None, OutageSpec | None]:
    """Transmitter design without instantaneous channel knowledge.

    The design gain is the fading quantile at the outage target gamma_bar;
    optimizing for that worst-case gain caps the outage probability at
    gamma_bar by construction (the achievable rate is nondecreasing in g).
    """
    if not 0.0 < gamma_bar < 1.0:
        raise SimkitError(f"outage target must be in (0,1), got {gamma_bar}")
    g_bar = fading_quantile(fading, gamma_bar)
    ratio = 10.0 ** (p_over_sigma_db / 10.0)
    channel = ChannelState(sigma=1.0, power_limit=ratio, gain=g_bar,
                           fading=fading)
    design = best_practical_design(m_set, rate_set, channel, settings)
    if design is None:
        return None, None
    design = replace(design, flags={**design.flags, "design_gain": g_bar,
                                    "outage_target": gamma_bar})
    spec = outage_probability(design, fading)
    spec = OutageSpec(spec.target_rate, spec.threshold_gain,
                      spec.outage_probability, confidence=gamma_bar,
                      design_gain=g_bar)
    return design, spec
