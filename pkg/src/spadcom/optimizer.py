"""Distribution, spacing and code-rate optimization for shaped M-PAM.

Entry points, all returning a :class:`ShapedDesign`:

* ``mpam_capacity``        max I(p) over (p, delta) with mean-power budget
* ``sdt_capacity``         max c*I(p) + (1-c)*I(u) for a fixed code rate
* ``sdor_capacity``        jointly optimal code rate via the convex-concave
                           procedure (``algorithm1_ccp`` at fixed spacing)
* ``algorithm2_practical`` max transmission rate for a rate from a finite
                           FEC set, with a bit-metric back-off loop
* ``best_practical_design`` sweep of modulation orders and code rates

All inner problems maximize a smooth concave function of the symbol pmf
over the probability simplex, optionally with one linear budget (folded
into the projection by Lagrange-multiplier bisection) and one smooth
convex inequality (handled by bisection on its dual multiplier).  The
worker is projected-gradient ascent with Barzilai-Borwein steps and an
Armijo backtracking safeguard.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .channel import ChannelState
from .infotheory import (
    ConstellationSpec,
    MixtureQuadrature,
    as_pmf,
    bmd_rate,
    entropy,
    mutual_information,
    tx_rate,
    uniform_pmf,
)

__all__ = [
    "DVB_S2_RATES",
    "SolverSettings",
    "ShapedDesign",
    "FeasibilityError",
    "ConvergenceError",
    "OptimizerError",
    "maximize_concave_on_simplex",
    "mpam_capacity",
    "sdt_capacity",
    "optimal_fec_rate",
    "algorithm1_ccp",
    "sdor_capacity",
    "algorithm2_practical",
    "best_practical_design",
    "uniform_design",
    "make_design",
]

LOG2 = math.log(2.0)
GH_FAST = 64   # node count for inner-loop metric evaluations; outputs use the default

# LDPC rate set of the second-generation satellite broadcast standard
DVB_S2_RATES: tuple[Fraction, ...] = tuple(
    Fraction(n, d) for n, d in
    [(1, 4), (1, 3), (2, 5), (1, 2), (3, 5), (2, 3), (3, 4), (4, 5), (5, 6), (8, 9), (9, 10)]
)


class OptimizerError(ValueError):
    """Domain violation (invalid regime, bad arguments)."""


class FeasibilityError(OptimizerError):
    """Start point or problem infeasible."""


class ConvergenceError(RuntimeError):
    """Iteration cap hit; carries the best iterate found so far."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances for the design loops (config keys match field names)."""

    delta1: float = 1e-6         # CCP objective-decrease stop (bits)
    delta2: float = 1e-6         # outer rate-estimate stop (bits)
    delta: float = 1e-6          # practical-design rate stop (bits)
    backoff: float = 0.05        # initial rate back-off (bits)
    gs_tol: float = 1e-4         # golden-section relative tolerance on delta
    kkt_tol: float = 1e-8        # projected-gradient stationarity residual
    eps_clamp: float = 1e-12     # floor inside log-linearizations
    max_ccp_iters: int = 200

    def __post_init__(self):
        for name in ("delta1", "delta2", "delta", "gs_tol", "kkt_tol", "eps_clamp"):
            if not getattr(self, name) > 0.0:
                raise OptimizerError(f"{name} must be positive")
        if self.backoff < 0.0:
            raise OptimizerError("backoff must be nonnegative")
        if self.eps_clamp > 1e-6:
            raise OptimizerError("eps_clamp must be at most 1e-6")

    @classmethod
    def from_config(cls, cfg: dict) -> "SolverSettings":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(cfg) - known
        if bad:
            raise OptimizerError(f"unknown solver settings: {sorted(bad)}")
        return cls(**cfg)

    @classmethod
    def from_file(cls, path) -> "SolverSettings":
        with open(path) as fh:
            return cls.from_config(json.load(fh))


@dataclass(frozen=True)
class ShapedDesign:
    """A complete operating point of the shaped coded-modulation scheme."""

    M: int
    delta_star: float
    pmf_star: np.ndarray
    code_rate: float
    tx_rate: float
    sdt_rate: float
    bmd_rate: float
    backoff: float
    snr_db: float
    gain: float
    sigma: float
    power_limit: float
    flags: dict = field(default_factory=dict)

    @property
    def power_used(self) -> float:
        """c*a'p + (1-c)*delta*(M-1)/2: shaped payload plus uniform parity."""
        a = self.delta_star * np.arange(self.M)
        c = self.code_rate
        return c * float(a @ self.pmf_star) + (1.0 - c) * self.delta_star * (self.M - 1) / 2.0

    @property
    def power_slack(self) -> float:
        return self.power_limit - self.power_used

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "delta_star": self.delta_star,
            "pmf_star": [float(x) for x in self.pmf_star],
            "code_rate": self.code_rate,
            "tx_rate": self.tx_rate,
            "sdt_rate": self.sdt_rate,
            "bmd_rate": self.bmd_rate,
            "backoff": self.backoff,
            "snr_db": self.snr_db,
            "gain": self.gain,
            "sigma": self.sigma,
            "power_limit": self.power_limit,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapedDesign":
        d = dict(d)
        d["pmf_star"] = np.asarray(d["pmf_star"], dtype=float)
        return cls(**d)


# ---------------------------------------------------------------------------
# Simplex machinery
# ---------------------------------------------------------------------------

def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sorting method)."""
    if not np.all(np.isfinite(v)):
        raise OptimizerError("non-finite point reached the simplex projection")
    v = v - v.max()   # shift-invariant; keeps the pivot search cancellation-free
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    tau = css[rho - 1] / rho
    return np.clip(v - tau, 0.0, None)


def _project_budget(v: np.ndarray, a: np.ndarray, budget: float) -> np.ndarray:
    """Projection onto simplex intersected with {a'p <= budget}.

    When the budget binds, the KKT system on a fixed support is linear in
    the two multipliers (budget, normalization); the support is found by
    active-set iteration with a bisection fallback on the budget
    multiplier (a'(proj(v - lam*a)) is nonincreasing in lam).
    """
    p = _project_simplex(v)
    if float(a @ p) <= budget + 1e-15:
        return p

    active = p > 0.0
    seen = set()
    for _ in range(4 * v.size):
        key = active.tobytes()
        if key in seen:
            break
        seen.add(key)
        n_s = int(active.sum())
        if n_s == 0:
            break
        sv = float(v[active].sum())
        sa = float(a[active].sum())
        sav = float((a[active] * v[active]).sum())
        saa = float((a[active] * a[active]).sum())
        det = sa * sa - n_s * saa
        if abs(det) < 1e-300:
            break
        lam = (sa * (sv - 1.0) - n_s * (sav - budget)) / det
        tau = ((sv - 1.0) - lam * sa) / n_s
        w = v - lam * a - tau
        new_active = w > 0.0
        if lam >= 0.0 and np.array_equal(new_active, active):
            q = np.clip(w, 0.0, None)
            if abs(q.sum() - 1.0) < 1e-9 and float(a @ q) <= budget + 1e-9:
                return q / q.sum()
            break
        active = new_active

    lo, hi = 0.0, 1.0
    while float(a @ _project_simplex(v - hi * a)) > budget:
        hi *= 2.0
        if hi > 1e18:
            raise FeasibilityError("budget projection failed to bracket")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if float(a @ _project_simplex(v - mid * a)) > budget:
            lo = mid
        else:
            hi = mid
    return _project_simplex(v - hi * a)


def _pga(obj: Callable[[np.ndarray], tuple[float, np.ndarray]],
         start: np.ndarray,
         project: Callable[[np.ndarray], np.ndarray],
         tol: float,
         max_iters: int = 4000) -> tuple[np.ndarray, float, float]:
    """Projected-gradient ascent; returns (p, value, scaled residual).

    Barzilai-Borwein steps with Armijo backtracking on the projection arc.
    The stationarity measure is ||project(p + grad) - p||_inf relative to
    max(1, ||grad||_inf); iteration stops on tolerance, step underflow, or
    a long stretch without residual improvement (numerically stationary).
    """
    p = project(np.asarray(start, dtype=float))
    f, g = obj(p)
    step = 1.0
    t_accept = None
    prev_p, prev_g = None, None
    best = (p, f, math.inf)
    stall = 0
    recent = [f]
    for _ in range(max_iters):
        res = float(np.abs(project(p + g) - p).max()) / max(1.0, float(np.abs(g).max()))
        if res < 0.9 * best[2]:
            best = (p, f, res)
            stall = 0
        else:
            if res < best[2]:
                best = (p, f, res)
            stall += 1
        if res <= tol or stall > 60:
            break
        if prev_p is not None:
            s = p - prev_p
            y = g - prev_g
            sy = -float(s @ y)          # >= 0 for concave objectives
            if sy > 1e-18:
                step = float(s @ s) / sy
            step = min(max(step, 1e-12), 1e12)
        accepted = False
        # cap by the last accepted step so one oversized Barzilai-Borwein
        # estimate cannot force a long backtracking cascade every iteration
        t = step if t_accept is None else min(step, 8.0 * t_accept)
        f_ref = min(recent)    # nonmonotone acceptance reference
        for _ in range(60):
            cand = project(p + t * g)
            d = cand - p
            fc, gc = obj(cand)
            if fc >= f_ref + 1e-4 * float(g @ d) or float(np.abs(d).max()) < 1e-16:
                prev_p, prev_g = p, g
                p, f, g = cand, fc, gc
                recent.append(f)
                if len(recent) > 8:
                    recent.pop(0)
                t_accept = t
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break  # step underflow: numerically stationary
    return best


def maximize_concave_on_simplex(objective, start, *, linear=None, smooth=None,
                                tol: float = 1e-8, max_iters: int = 2000,
                                constraint_tol: float = 1e-9,
                                mu_hint: float | None = None,
                                return_mu: bool = False):
    """Maximize a concave objective over the simplex with optional constraints.

    objective(p) -> (value, gradient).
    linear: (a, budget) for a'p <= budget, enforced inside the projection
        (Lagrange-multiplier bisection on the budget).
    smooth: callable p -> (value, gradient) for one convex inequality
        smooth(p) <= 0, handled by a root find on its dual multiplier
        (Illinois regula falsi, warm-startable through mu_hint).

    Returns the feasible maximizer with projected-gradient KKT residual
    <= tol (gradient-scaled).  Raises FeasibilityError for an infeasible
    start and ConvergenceError (carrying the best iterate) when the
    residual target is unreachable.
    """
    p0 = as_pmf(start)
    if linear is not None:
        a, budget = np.asarray(linear[0], dtype=float), float(linear[1])
        if float(a @ p0) > budget + 1e-7:
            raise FeasibilityError("start violates the linear budget")
        project = lambda v: _project_budget(v, a, budget)
    else:
        project = _project_simplex
    f0_start = objective(p0)[0]

    if smooth is None:
        p, f, res = _pga(objective, p0, project, tol, max_iters)
        if res > tol:
            raise ConvergenceError("projected-gradient residual above tolerance",
                                   best=p, residual=res)
        out = p if f >= f0_start else p0
        return (out, 0.0) if return_mu else out

    if smooth(p0)[0] > constraint_tol:
        raise FeasibilityError("start violates the smooth constraint")

    def lagrangian(mu):
        def obj_mu(p):
            fv, fg = objective(p)
            cv, cg = smooth(p)
            return fv - mu * cv, fg - mu * cg
        return obj_mu

    def solve(mu, warm):
        p, _, _ = _pga(lagrangian(mu), warm, project, tol, max_iters)
        return p, smooth(p)[0]

    # locate a bracket mu_lo < mu_hi with c(mu_lo) > 0 >= c(mu_hi); when a
    # multiplier hint is available, probe around it instead of starting at 0
    mu_lo = c_lo = mu_hi = c_hi = None
    p_warm = p0
    probes = [mu_hint] if mu_hint and mu_hint > 0.0 else [0.0]
    while True:
        mu = probes.pop(0) if probes else (
            mu_lo * 4.0 + 1.0 if c_hi is None else mu_hi / 16.0)
        p_warm, cv = solve(mu, p_warm)
        if abs(cv) <= constraint_tol or (mu == 0.0 and cv <= constraint_tol):
            out = p_warm if objective(p_warm)[0] >= f0_start else p0
            return (out, mu) if return_mu else out
        if cv > constraint_tol:
            if mu_lo is None or mu > mu_lo:
                mu_lo, c_lo = mu, cv
        else:
            if mu_hi is None or mu < mu_hi:
                mu_hi, c_hi, p_hi = mu, cv, p_warm
        if mu_lo is not None and mu_hi is not None:
            break
        if mu_lo is None and mu_hi is not None and mu <= 1e-12:
            mu_lo, c_lo = 0.0, 0.0   # degenerate: treat 0 as the low edge
            break
        if mu_lo is not None and mu_lo > 1e16:
            raise FeasibilityError("smooth constraint cannot be satisfied")
    best_p, best_f, mu_star = p_hi, objective(p_hi)[0], mu_hi

    side = 0
    for _ in range(60):
        if abs(c_hi) <= constraint_tol or (mu_hi - mu_lo) <= 1e-12 * max(mu_hi, 1.0):
            break
        denom = c_hi - c_lo
        mu = mu_hi - c_hi * (mu_hi - mu_lo) / denom if denom != 0.0 else \
            0.5 * (mu_lo + mu_hi)
        span = mu_hi - mu_lo
        mu = min(max(mu, mu_lo + 1e-3 * span), mu_hi - 1e-3 * span)
        p_warm, cv = solve(mu, p_warm)
        if cv > constraint_tol:
            mu_lo, c_lo = mu, cv
            if side == -1:
                c_hi *= 0.5   # Illinois: damp the retained endpoint
            side = -1
        else:
            mu_hi, c_hi = mu, cv
            fv = objective(p_warm)[0]
            if fv > best_f:
                best_p, best_f, mu_star = p_warm, fv, mu
            if side == 1:
                c_lo *= 0.5
            side = 1
    out = best_p if best_f >= f0_start else p0
    return (out, mu_star) if return_mu else out


def _solve_convex_subproblem(objective, start, *, linear=None, smooth=None,
                             tol: float = 1e-8) -> np.ndarray:
    """Inner solver for the convexified subproblems of the design loops.

    Sequential quadratic programming (the workhorse for these tiny smooth
    problems) with the projected-gradient path as verification fallback:
    the SQP result is accepted only if it is simplex-feasible, satisfies
    both constraints, and does not lose objective against the start.
    """
    from scipy.optimize import minimize

    p0 = as_pmf(start)
    cons_list = [{"type": "eq", "fun": lambda p: p.sum() - 1.0,
                  "jac": lambda p: np.ones_like(p)}]
    if linear is not None:
        a, budget = np.asarray(linear[0], dtype=float), float(linear[1])
        cons_list.append({"type": "ineq",
                          "fun": lambda p: budget - float(a @ p),
                          "jac": lambda p: -a})
    if smooth is not None:
        cons_list.append({"type": "ineq",
                          "fun": lambda p: -smooth(p)[0],
                          "jac": lambda p: -smooth(p)[1]})

    def neg(p):
        v, g = objective(p)
        return -v, -g

    try:
        res = minimize(neg, p0, jac=True, method="SLSQP", bounds=[(0.0, 1.0)] * p0.size,
                       constraints=cons_list,
                       options={"maxiter": 200, "ftol": 1e-12})
        q = np.clip(res.x, 0.0, None)
        s = q.sum()
        if s > 0.0 and np.all(np.isfinite(q)):
            q = q / s
            ok = objective(q)[0] >= objective(p0)[0] - 1e-12
            if linear is not None:
                ok = ok and float(np.asarray(linear[0]) @ q) <= float(linear[1]) + 1e-9
            if smooth is not None:
                ok = ok and smooth(q)[0] <= 1e-8
            if ok:
                return q
    except (ValueError, FloatingPointError):
        pass
    return maximize_concave_on_simplex(objective, p0, linear=linear,
                                       smooth=smooth, tol=tol)


def _golden_max(fn: Callable[[float], float], lo: float, hi: float,
                rel_tol: float) -> tuple[float, float]:
    """Golden-section maximization of a unimodal function on [lo, hi].

    Returns the best evaluated (x, fn(x)) including the bracket endpoints,
    which doubles as the unimodality-consistency guard.
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    evals: dict[float, float] = {lo: fn(lo), hi: fn(hi)}
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = fn(x1), fn(x2)
    evals[x1], evals[x2] = f1, f2
    while (b - a) > rel_tol * max(abs(b), 1.0):
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = fn(x1)
            evals[x1] = f1
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = fn(x2)
            evals[x2] = f2
    x_best = max(evals, key=evals.get)
    return x_best, evals[x_best]


def _scan_then_golden(fn: Callable[[float], float], lo: float, hi: float,
                      rel_tol: float, n_scan: int = 12) -> tuple[float, float]:
    """Coarse log-spaced scan to bracket the peak, then golden section inside.

    The convex-concave evaluations can carry local-solution noise far in the
    tails; bracketing the best coarse point first keeps the search anchored
    to the global peak of the (practically unimodal) rate curve.
    """
    xs = np.geomspace(lo, hi, n_scan)
    vals = [fn(float(x)) for x in xs]
    i = int(np.argmax(vals))
    if not math.isfinite(vals[i]):
        return xs[i], vals[i]
    sub_lo = float(xs[max(i - 1, 0)])
    sub_hi = float(xs[min(i + 1, n_scan - 1)])
    if sub_hi <= sub_lo:
        return float(xs[i]), vals[i]
    x_g, v_g = _golden_max(fn, sub_lo, sub_hi, rel_tol)
    return (x_g, v_g) if v_g >= vals[i] else (float(xs[i]), vals[i])


# ---------------------------------------------------------------------------
# Capacity problems (optimal distributions at fixed code rate)
# ---------------------------------------------------------------------------

def _inner_mi_max(quad: MixtureQuadrature, budget: float,
                  start: np.ndarray, settings: SolverSettings) -> np.ndarray:
    """argmax_p I(p) subject to a'p <= budget on the simplex."""
    return maximize_concave_on_simplex(quad.mi_and_grad, start,
                                       linear=(quad.cons.amplitudes, budget),
                                       tol=settings.kkt_tol)


def _feasible_tilt(cons: ConstellationSpec, budget: float) -> np.ndarray:
    """Exponential tilt exp(-t*j) meeting a'p <= budget (uniform if feasible)."""
    a = cons.amplitudes
    j = np.arange(cons.M, dtype=float)
    t_lo, t_hi = 0.0, 1.0

    def mean_a(t):
        w = np.exp(-t * j)
        w /= w.sum()
        return float(a @ w), w

    m0, w0 = mean_a(0.0)
    if m0 <= budget:
        return w0
    while mean_a(t_hi)[0] > budget:
        t_hi *= 2.0
        if t_hi > 1e6:
            break
    for _ in range(200):
        mid = 0.5 * (t_lo + t_hi)
        if mean_a(mid)[0] > budget:
            t_lo = mid
        else:
            t_hi = mid
    # strict interior margin so the start is safely feasible
    return mean_a(t_hi * 1.0000001)[1]


def make_design(p, delta: float, c: float, channel: ChannelState, *,
                backoff: float = 0.0, flags: dict | None = None) -> ShapedDesign:
    """Assemble a ShapedDesign (rates evaluated) from explicit parameters."""
    pa = as_pmf(p)
    cons = ConstellationSpec(pa.size, delta)
    g, sigma = channel.gain, channel.sigma
    quad = MixtureQuadrature(cons, g, sigma)
    mi_p = quad.mi(pa)
    mi_u = quad.mi(uniform_pmf(cons.M)) if c < 1.0 else mi_p
    return ShapedDesign(
        M=cons.M,
        delta_star=delta,
        pmf_star=pa,
        code_rate=float(c),
        tx_rate=tx_rate(pa, c),
        sdt_rate=c * mi_p + (1.0 - c) * mi_u,
        bmd_rate=bmd_rate(pa, cons, g, sigma, c),
        backoff=backoff,
        snr_db=channel.snr_db,
        gain=g,
        sigma=sigma,
        power_limit=channel.power_limit,
        flags=flags or {},
    )


def mpam_capacity(M: int, channel: ChannelState, settings: SolverSettings | None = None
                  ) -> ShapedDesign:
    """Capacity of unipolar M-PAM under the mean-power budget (code rate 1).

    Inner convex solve per spacing, golden section over the spacing; the
    bracket upper end doubles while the optimum sits within 1% of it
    (low-SNR optima are extremely peaky).
    """
    settings = settings or SolverSettings()
    P, g, sigma = channel.power_limit, channel.gain, channel.sigma
    delta_u = 2.0 * P / (M - 1)
    warm: dict[float, np.ndarray] = {}

    def evaluate(delta: float) -> float:
        cons = ConstellationSpec(M, delta)
        quad = MixtureQuadrature(cons, g, sigma, GH_FAST)
        start = warm[min(warm, key=lambda d: abs(d - delta))] if warm else \
            _feasible_tilt(cons, P)
        if float(cons.amplitudes @ start) > P:
            start = _feasible_tilt(cons, P)
        p = _inner_mi_max(quad, P, start, settings)
        warm[delta] = p
        return quad.mi(p)

    lo, hi = delta_u / 8.0, 32.0 * delta_u
    d_star, _ = _scan_then_golden(evaluate, lo, hi, settings.gs_tol)
    for _ in range(16):
        if d_star < 0.99 * hi:
            break
        lo, hi = hi / 4.0, hi * 2.0
        d_star, _ = _scan_then_golden(evaluate, lo, hi, settings.gs_tol)
    p_star = warm[min(warm, key=lambda d: abs(d - d_star))]
    return make_design(p_star, d_star, 1.0, channel, flags={"entry": "mpam_capacity"})


def sdt_capacity(M: int, c: float, channel: ChannelState,
                 settings: SolverSettings | None = None) -> ShapedDesign:
    """Capacity of sparse-dense transmission at a fixed FEC rate c.

    For c < 1 the power budget couples p and delta through
    c*a'p + 0.5*delta*(1-c)*(M-1) <= P, which also caps the spacing at
    2P / ((1-c)(M-1)); the spacing is searched over that interval.
    """
    settings = settings or SolverSettings()
    if not 0.0 < c <= 1.0:
        raise OptimizerError(f"code rate must be in (0, 1], got {c}")
    c = float(c)
    if c == 1.0:
        d = mpam_capacity(M, channel, settings)
        return replace(d, flags={"entry": "sdt_capacity"})
    P, g, sigma = channel.power_limit, channel.gain, channel.sigma
    delta_max = 2.0 * P / ((1.0 - c) * (M - 1))
    warm: dict[float, np.ndarray] = {}

    def evaluate(delta: float) -> float:
        cons = ConstellationSpec(M, delta)
        budget = (P - 0.5 * delta * (1.0 - c) * (M - 1)) / c
        if budget < 0.0:
            return -math.inf
        quad = MixtureQuadrature(cons, g, sigma, GH_FAST)
        start = warm[min(warm, key=lambda d: abs(d - delta))] if warm else \
            _feasible_tilt(cons, budget)
        if float(cons.amplitudes @ start) > budget:
            start = _feasible_tilt(cons, budget)
        p = _inner_mi_max(quad, budget, start, settings)
        warm[delta] = p
        return c * quad.mi(p) + (1.0 - c) * quad.mi(uniform_pmf(M))

    lo, hi = delta_max / 1024.0, delta_max
    d_star, _ = _scan_then_golden(evaluate, lo, hi, settings.gs_tol)
    for _ in range(10):
        if d_star > 1.01 * lo:
            break
        lo /= 8.0
        d_star, _ = _scan_then_golden(evaluate, lo, hi, settings.gs_tol)
    p_star = warm[min(warm, key=lambda d: abs(d - d_star))]
    return make_design(p_star, d_star, c, channel, flags={"entry": "sdt_capacity"})


def optimal_fec_rate(p, cons: ConstellationSpec, g: float, sigma: float) -> float:
    """FEC rate making the transmission rate meet the sparse-dense rate:

        c(p) = I(u) / (H(p) - I(p) + I(u)).

    Degenerate g = 0 (both informations vanish) returns 1 by convention.
    """
    pa = as_pmf(p, cons.M)
    quad = MixtureQuadrature(cons, g, sigma)
    mi_u = quad.mi(uniform_pmf(cons.M))
    if mi_u <= 0.0:
        return 1.0
    denom = entropy(pa) - quad.mi(pa) + mi_u
    return min(mi_u / denom, 1.0)


# ---------------------------------------------------------------------------
# Convex-concave procedure with the jointly-optimal FEC rate
# ---------------------------------------------------------------------------

def _rate_with_optimal_c(p, quad: MixtureQuadrature, mi_u) -> float:
    """H(p)*I(u) / (H(p) - I(p) + I(u)): the sparse-dense rate at c(p)."""
    h = entropy(p)
    if mi_u <= 0.0 or h <= 0.0:
        return 0.0
    return h * mi_u / (h - quad.mi(p) + mi_u)


def algorithm1_ccp(cons: ConstellationSpec, channel: ChannelState,
                   start, settings: SolverSettings | None = None
                   ) -> tuple[np.ndarray, float, float, dict]:
    """Double-loop convex-concave procedure at fixed spacing.

    Outer loop refreshes the rate estimate r; inner loop solves the
    convexified difference-of-convex problem (entropy terms linearized at
    the current iterate) until the true objective decrease |delta_f| drops
    below delta1; outer stops when |R_sdt(p) - r| < delta2.

    Requires delta >= 2P/(M-1) so the power constraint splits into convex
    minus convex.  When the rate estimate r does not exceed I(u) (always
    the case for M = 2, where uniform maximizes the mutual information)
    the objective split is already convex and the entropy term is kept
    exact instead of linearized; the loop structure is unchanged.

    Returns (pmf, sdt_rate_at_optimal_c, bmd_rate_at_optimal_c, diag).
    """
    settings = settings or SolverSettings()
    P, g, sigma = channel.power_limit, channel.gain, channel.sigma
    M = cons.M
    a = cons.amplitudes
    delta_u = 2.0 * P / (M - 1)
    if cons.delta < delta_u * (1.0 - 1e-12):
        raise OptimizerError(
            f"difference-of-convex split requires delta >= 2P/(M-1) = {delta_u:.6g}, "
            f"got {cons.delta:.6g}")
    quad = MixtureQuadrature(cons, g, sigma, GH_FAST)
    mi_u = quad.mi(uniform_pmf(M))
    if mi_u <= 1e-12:
        p0 = np.zeros(M)
        p0[0] = 1.0
        return p0, 0.0, 0.0, {"regime": "zero-gain", "ccp_iters": 0}
    beta = (0.5 * cons.delta * (M - 1) - P) / mi_u
    eps = settings.eps_clamp

    def true_power_violation(p) -> float:
        return float(a @ p) - beta * quad.mi(p) + beta * entropy(p) - P

    p_dot = as_pmf(start, M)
    if true_power_violation(p_dot) > 1e-9:
        raise FeasibilityError("start violates the power constraint of the "
                               "difference-of-convex problem")

    def f0_psi0(p, r):
        """True objective f0 - psi0 at rate estimate r (bits)."""
        f0 = r * (1.0 - quad.mi(p) / mi_u)
        psi0 = entropy(p) * (1.0 - r / mi_u)
        return f0 - psi0

    diag = {"ccp_iters": 0, "descent_ok": True, "regime": None}
    total_iters = 0
    converged = False
    for _outer in range(settings.max_ccp_iters):
        r = _rate_with_optimal_c(p_dot, quad, mi_u)
        linearize_obj = r > mi_u
        diag["regime"] = "dc" if linearize_obj else "convex"
        for _inner in range(settings.max_ccp_iters):
            total_iters += 1
            logq = np.log2(np.clip(p_dot, eps, None))

            def objective(p):
                mi, gmi = quad.mi_and_grad(p, clamp=False)
                f0 = r * (1.0 - mi / mi_u)
                g0 = -(r / mi_u) * gmi
                if linearize_obj:
                    psi = (r / mi_u - 1.0) * float(p @ logq)
                    gp = (r / mi_u - 1.0) * logq
                else:
                    pe = np.clip(p, 1e-300, None)
                    psi = (1.0 - r / mi_u) * float(-(p * np.log2(pe)).sum())
                    gp = (1.0 - r / mi_u) * (-np.log2(pe) - 1.0 / LOG2)
                return -(f0 - psi), -(g0 - gp)

            def power_con(p):
                mi, gmi = quad.mi_and_grad(p, clamp=False)
                val = float(a @ p) - beta * mi - P - beta * float(p @ logq)
                grad = a - beta * gmi - beta * logq
                return val, grad

            p_new = _solve_convex_subproblem(objective, p_dot, smooth=power_con,
                                             tol=settings.kkt_tol)
            delta_f = f0_psi0(p_dot, r) - f0_psi0(p_new, r)
            if linearize_obj and delta_f < -1e-9:
                diag["descent_ok"] = False
            p_dot = p_new
            if abs(delta_f) < settings.delta1:
                break
        r_now = _rate_with_optimal_c(p_dot, quad, mi_u)
        if abs(r_now - r) < settings.delta2:
            converged = True
            break
    diag["ccp_iters"] = total_iters
    if not converged:
        raise ConvergenceError("convex-concave procedure did not converge",
                               best=p_dot)
    mi_p = mutual_information(p_dot, cons, g, sigma)
    mi_u_full = mutual_information(uniform_pmf(M), cons, g, sigma)
    c_star = min(mi_u_full / (entropy(p_dot) - mi_p + mi_u_full), 1.0) \
        if mi_u_full > 0 else 1.0
    r_sdt = c_star * mi_p + (1.0 - c_star) * mi_u_full
    r_bmd = bmd_rate(p_dot, cons, g, sigma, c_star)
    return p_dot, r_sdt, r_bmd, diag


def _algorithm1_start(cons: ConstellationSpec, channel: ChannelState,
                      settings: SolverSettings) -> np.ndarray:
    """Initial point: the fixed-rate capacity pmf at the largest practical
    FEC rate; exponential-tilt fallback until the power constraint holds."""
    P, g, sigma = channel.power_limit, channel.gain, channel.sigma
    M, a = cons.M, cons.amplitudes
    c0 = float(max(DVB_S2_RATES))
    budget = (P - 0.5 * cons.delta * (1.0 - c0) * (M - 1)) / c0
    quad = MixtureQuadrature(cons, g, sigma, GH_FAST)
    mi_u = quad.mi(uniform_pmf(M))
    beta = (0.5 * cons.delta * (M - 1) - P) / max(mi_u, 1e-300)

    def violation(p):
        return float(a @ p) - beta * quad.mi(p) + beta * entropy(p) - P

    candidates = []
    if budget > 0.0:
        try:
            p_sdt = _inner_mi_max(quad, budget, _feasible_tilt(cons, budget),
                                  settings)
            candidates.append(p_sdt)
        except (FeasibilityError, ConvergenceError):
            pass
    for t in np.geomspace(1e-3, 1e3, 25):
        w = np.exp(-t * np.arange(M))
        candidates.append(w / w.sum())
    feasible = [p for p in candidates if violation(p) <= -1e-12]
    if not feasible:
        raise FeasibilityError("no feasible start for the convex-concave loop")
    best = max(feasible, key=lambda p: _rate_with_optimal_c(p, quad, mi_u))
    return best


def sdor_capacity(M: int, channel: ChannelState,
                  settings: SolverSettings | None = None) -> ShapedDesign:
    """Jointly optimal (p, delta, c): golden section over the spacing in the
    difference-of-convex regime, convex-concave procedure per spacing."""
    settings = settings or SolverSettings()
    P = channel.power_limit
    delta_u = 2.0 * P / (M - 1)
    search = replace(settings, delta1=max(settings.delta1, 1e-4),
                     delta2=max(settings.delta2, 1e-4),
                     kkt_tol=max(settings.kkt_tol, 1e-6))

    def evaluate(delta: float) -> float:
        cons = ConstellationSpec(M, delta)
        try:
            start = _algorithm1_start(cons, channel, search)
            p, r_sdt, r_bmd, diag = algorithm1_ccp(cons, channel, start, search)
        except (FeasibilityError, ConvergenceError):
            return -math.inf
        return r_sdt

    d_star, best = _scan_then_golden(evaluate, delta_u, 32.0 * delta_u,
                                     settings.gs_tol)
    if not math.isfinite(best):
        raise ConvergenceError("no feasible spacing found", best=None)
    cons = ConstellationSpec(M, d_star)
    start = _algorithm1_start(cons, channel, settings)
    p, r_sdt, r_bmd, diag = algorithm1_ccp(cons, channel, start, settings)
    c_star = optimal_fec_rate(p, cons, channel.gain, channel.sigma)
    design = make_design(p, d_star, c_star, channel,
                         flags={"entry": "sdor_capacity", **diag})
    return design


# ---------------------------------------------------------------------------
# Practical design: finite FEC rate set, bit-metric back-off loop
# ---------------------------------------------------------------------------

def _zero_rate_design(M: int, channel: ChannelState, c: float,
                      reason: str) -> ShapedDesign:
    p0 = np.zeros(M)
    p0[0] = 1.0
    delta = 2.0 * channel.power_limit / (M - 1)
    return make_design(p0, delta, c, channel,
                       flags={"entry": "algorithm2_practical", "zero_rate": True,
                              "reason": reason})


def _algorithm2_fixed_delta(cons: ConstellationSpec, c: float,
                            channel: ChannelState, settings: SolverSettings,
                            start: np.ndarray | None = None):
    """Back-off + convex-concave loop at fixed spacing.

    Maximizes c*H(p) subject to the power budget and the convexified rate
    constraint R(p) <= R_sdt(p) - backoff; if the resulting point is not
    achievable under bit-metric decoding, the back-off grows by the deficit
    and the whole procedure repeats.  Returns (p, backoff, trace) or None
    when the back-off is exhausted.
    """
    P, g, sigma = channel.power_limit, channel.gain, channel.sigma
    M, a = cons.M, cons.amplitudes
    eps = settings.eps_clamp
    quad = MixtureQuadrature(cons, g, sigma, GH_FAST)
    mi_u = quad.mi(uniform_pmf(M))
    budget = P - 0.5 * cons.delta * (1.0 - c) * (M - 1)
    if budget < 0.0 or mi_u <= 1e-12:
        return None
    lin_budget = budget / c

    def rate_slack(p, backoff):
        """R_sdt(p) - backoff - R(p); feasible when nonnegative."""
        return c * quad.mi(p) + (1.0 - c) * mi_u - backoff - c * entropy(p)

    backoff = float(settings.backoff)
    trace = []
    p_dot = start
    for _bmd_round in range(64):
        backoff = min(backoff, (1.0 - c) * mi_u)
        if p_dot is None or rate_slack(p_dot, backoff) < 0.0 \
                or float(a @ p_dot) > lin_budget:
            p_dot = _feasible_rate_start(quad, c, mi_u, lin_budget, backoff)
            if p_dot is None:
                return None
        prev_rate = tx_rate(p_dot, c)
        best_rate, best_p = prev_rate, p_dot
        stall = 0
        for _ccp in range(settings.max_ccp_iters):
            logq = np.log2(np.clip(p_dot, eps, None))

            def objective(p):
                pe = np.clip(p, 1e-300, None)
                h = float(-(p * np.log2(pe)).sum())
                return c * h, c * (-np.log2(pe) - 1.0 / LOG2)

            def rate_con(p):
                mi, gmi = quad.mi_and_grad(p, clamp=False)
                val = backoff - c * mi - (1.0 - c) * mi_u - c * float(p @ logq)
                grad = -c * gmi - c * logq
                return val, grad

            p_new = _solve_convex_subproblem(objective, p_dot,
                                             linear=(a, lin_budget),
                                             smooth=rate_con,
                                             tol=settings.kkt_tol)
            rate_new = tx_rate(p_new, c)
            delta_r = rate_new - prev_rate
            prev_rate = rate_new
            p_dot = p_new
            if rate_new > best_rate + settings.delta:
                best_rate, best_p = rate_new, p_new
                stall = 0
            else:
                if rate_new > best_rate:
                    best_rate, best_p = rate_new, p_new
                stall += 1
            if abs(delta_r) < settings.delta or stall >= 3:
                break
        p_dot = best_p
        r_bmd = bmd_rate(p_dot, cons, g, sigma, c)
        bmd_gap = r_bmd - tx_rate(p_dot, c)
        trace.append({"backoff": backoff, "rate": tx_rate(p_dot, c),
                      "bmd_gap": bmd_gap})
        if bmd_gap >= 0.0:
            return p_dot, backoff, trace
        backoff += bmd_gap
        if backoff <= 0.0:
            return None
    return None


def _feasible_rate_start(quad: MixtureQuadrature, c, mi_u, lin_budget, backoff):
    """Exponential tilt meeting both the power budget and the rate margin."""
    M, a = quad.cons.M, quad.cons.amplitudes
    j = np.arange(M, dtype=float)
    for t in np.concatenate(([0.0], np.geomspace(1e-3, 1e3, 40))):
        w = np.exp(-t * j)
        w /= w.sum()
        if float(a @ w) > lin_budget:
            continue
        if c * quad.mi(w) + (1.0 - c) * mi_u - backoff - c * entropy(w) >= 1e-12:
            return w
    return None


def algorithm2_practical(M: int, c, channel: ChannelState,
                         settings: SolverSettings | None = None) -> ShapedDesign:
    """Maximum achievable transmission rate for one (M, c) pair.

    Golden section over the spacing; at each spacing the fixed-rate
    back-off loop runs to completion.  A channel too poor to carry any
    rate yields the degenerate zero-rate design with a diagnostic flag.
    """
    settings = settings or SolverSettings()
    c = float(c)
    if not 0.0 < c <= 1.0:
        raise OptimizerError(f"code rate must be in (0, 1], got {c}")
    P = channel.power_limit
    if channel.gain == 0.0:
        return _zero_rate_design(M, channel, c, "zero gain")
    if c < 1.0:
        delta_hi = 2.0 * P / ((1.0 - c) * (M - 1))
        lo, hi = delta_hi / 1024.0, delta_hi
    else:
        delta_u = 2.0 * P / (M - 1)
        lo, hi = delta_u / 8.0, 32.0 * delta_u
    warm: dict[float, np.ndarray] = {}
    search = replace(settings, delta=max(settings.delta, 1e-5))

    def evaluate(delta: float) -> float:
        cons = ConstellationSpec(M, delta)
        start = warm[min(warm, key=lambda d: abs(d - delta))] if warm else None
        out = _algorithm2_fixed_delta(cons, c, channel, search, start)
        if out is None:
            return -math.inf
        p, backoff, trace = out
        warm[delta] = p
        return tx_rate(p, c)

    d_star, best_rate = _scan_then_golden(evaluate, lo, hi, settings.gs_tol)
    if not math.isfinite(best_rate):
        return _zero_rate_design(M, channel, c, "back-off exhausted")
    cons = ConstellationSpec(M, d_star)
    out = _algorithm2_fixed_delta(cons, c, channel, settings,
                                  warm.get(d_star))
    if out is None:
        return _zero_rate_design(M, channel, c, "back-off exhausted")
    p, backoff, trace = out
    return make_design(p, d_star, c, channel, backoff=backoff,
                       flags={"entry": "algorithm2_practical",
                              "backoff_trace": trace})


def best_practical_design(m_set: Sequence[int], rate_set: Sequence,
                          channel: ChannelState,
                          settings: SolverSettings | None = None,
                          mode: str = "max-rate",
                          target_rate: float | None = None
                          ) -> ShapedDesign | None:
    """Best practical operating point over modulation orders and FEC rates.

    max-rate: argmax transmission rate (ties: smaller M, then larger c).
    min-M-for-target: smallest M whose best rate reaches target_rate.
    Returns None when nothing nondegenerate is feasible.
    """
    settings = settings or SolverSettings()
    if not m_set or not rate_set:
        raise OptimizerError("modulation and rate sets must be nonempty")
    if mode not in ("max-rate", "min-M-for-target"):
        raise OptimizerError(f"unknown mode {mode!r}")
    if mode == "min-M-for-target" and target_rate is None:
        raise OptimizerError("min-M-for-target mode needs target_rate")

    def best_for_m(M: int) -> ShapedDesign | None:
        best = None
        for c in sorted((float(c) for c in rate_set), reverse=True):
            d = algorithm2_practical(M, c, channel, settings)
            if d.flags.get("zero_rate"):
                continue
            if best is None or d.tx_rate > best.tx_rate + 1e-6:
                best = d
        return best

    if mode == "min-M-for-target":
        for M in sorted(m_set):
            d = best_for_m(M)
            if d is not None and d.tx_rate >= target_rate - 1e-9:
                return d
        return None

    best = None
    for M in sorted(m_set):
        d = best_for_m(M)
        if d is None:
            continue
        if best is None or d.tx_rate > best.tx_rate + 1e-6:
            best = d
    return best


def uniform_design(M: int, channel: ChannelState, rate_set: Sequence
                   ) -> ShapedDesign | None:
    """Uniform-signaling baseline: spacing 2P/(M-1) and the largest FEC rate
    whose transmission rate c*log2(M) clears the uniform mutual information."""
    P, g, sigma = channel.power_limit, channel.gain, channel.sigma
    delta_u = 2.0 * P / (M - 1)
    cons = ConstellationSpec(M, delta_u)
    mi_u = mutual_information(uniform_pmf(M), cons, g, sigma)
    m = cons.m
    feasible = [float(c) for c in rate_set if float(c) * m <= mi_u]
    if not feasible:
        return None
    c = max(feasible)
    return make_design(uniform_pmf(M), delta_u, c, channel,
                       flags={"entry": "uniform_design"})
