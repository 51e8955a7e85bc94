"""Admissible reaction nonlinearities and their integral transforms.

A nonlinearity f is represented together with its first two derivatives and
the log-profile g = log f.  The central object is the barrier integral

    F(u) = integral from u to infinity of ds / f(s),

whose inverse describes the blow-up profile of the singular stationary
solution near the origin.  All tail handling is done in log space so that
strongly exponential f (where f(u) overflows well before u = 50) remains
computable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DivisionNearZero, NonIntegrableTail, OutOfRange

__all__ = [
    "NonlinearitySpec",
    "TailGrowth",
    "AdmissibilityReport",
    "ConditionVerdict",
    "power_exp",
    "cutoff_exp",
    "pure_power",
    "custom",
    "sobolev_exponent",
    "eval_F",
    "eval_F_log",
    "eval_F_inverse",
    "eval_F_inverse_log",
    "check_admissibility",
    "check_fprime_F_limit",
    "check_log_convexity_ratio",
]

#: default relative tolerance for the barrier integral
TOL_F = 1e-10
#: denominators below this trigger DivisionNearZero
DIV_TOL = 1e-14


def sobolev_exponent(dim: int) -> float:
    """Critical exponent (dim+2)/(dim-2) entering the fourth admissibility
    condition."""
    if dim < 3:
        raise ValueError("dimension must be >= 3")
    return (dim + 2.0) / (dim - 2.0)


@dataclass(frozen=True)
class TailGrowth:
    """Large-u behaviour of g = log f, used to truncate the barrier integral.

    ``log_exact_tail(M)`` returns log of the exact tail integral over
    [M, infinity) when a closed form exists (valid for M >= ``tail_start``),
    otherwise it is None and the tail is bounded through log-convexity of g:
    the tail is at most 1/(f(M) g'(M)).
    """

    log_convex_from: float
    tail_start: float = 0.0
    log_exact_tail: Optional[Callable[[float], float]] = None


@dataclass(frozen=True)
class NonlinearitySpec:
    """An immutable bundle of evaluators for one nonlinearity.

    All evaluators accept floats or numpy arrays; the domain is u >= 0 for
    f, f', f'' and u > 0 for the log-profile g and its derivatives.
    """

    family: str
    params: dict
    f: Callable
    fp: Callable
    fpp: Callable
    g: Callable
    gp: Callable
    gpp: Callable
    tail: TailGrowth
    label: str = ""

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", self.family)

    def descriptor(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}


# ---------------------------------------------------------------------------
# built-in families
# ---------------------------------------------------------------------------

def power_exp(p: float, q: float) -> NonlinearitySpec:
    """f(u) = u^p exp(u^q): power behaviour at 0, superexponential tail.

    Requires q > 1 so that g = p log u + u^q is eventually convex.
    """
    if q <= 1.0:
        raise ValueError("power_exp requires q > 1")
    if p <= 1.0:
        raise ValueError("power_exp requires p > 1 so that f'(0) = 0")

    def f(u):
        u = np.asarray(u, dtype=float)
        return u ** p * np.exp(u ** q)

    def fp(u):
        u = np.asarray(u, dtype=float)
        return (p * u ** (p - 1) + q * u ** (p + q - 1)) * np.exp(u ** q)

    def fpp(u):
        u = np.asarray(u, dtype=float)
        poly = (p * (p - 1) * u ** (p - 2)
                + q * (2 * p + q - 1) * u ** (p + q - 2)
                + q * q * u ** (p + 2 * q - 2))
        return poly * np.exp(u ** q)

    def g(u):
        u = np.asarray(u, dtype=float)
        return p * np.log(u) + u ** q

    def gp(u):
        u = np.asarray(u, dtype=float)
        return p / u + q * u ** (q - 1)

    def gpp(u):
        u = np.asarray(u, dtype=float)
        return -p / u ** 2 + q * (q - 1) * u ** (q - 2)

    convex_from = (p / (q * (q - 1))) ** (1.0 / q)
    tail = TailGrowth(log_convex_from=convex_from)
    return NonlinearitySpec(
        family="power_exp", params={"p": p, "q": q},
        f=f, fp=fp, fpp=fpp, g=g, gp=gp, gpp=gpp, tail=tail,
        label=f"power_exp(p={p:g}, q={q:g})")


# quintic cutoff: chi'(u) is the C^1 piecewise quartic below; chi is its
# antiderivative with chi(0) = 0, giving chi = 20 for u >= 4 and chi = u^5
# for u <= 1, with C^2 joins.
def _chi(u):
    u = np.asarray(u, dtype=float)
    return np.select(
        [u <= 1.0, u <= 3.0, u <= 4.0],
        [u ** 5, 10.0 * (u - 1.0) - (u - 2.0) ** 5,
         20.0 + (u - 4.0) ** 5],
        default=20.0)


def _chi_p(u):
    u = np.asarray(u, dtype=float)
    return np.select(
        [u <= 1.0, u <= 3.0, u <= 4.0],
        [5.0 * u ** 4, 10.0 - 5.0 * (u - 2.0) ** 4, 5.0 * (u - 4.0) ** 4],
        default=0.0)


def _chi_pp(u):
    u = np.asarray(u, dtype=float)
    return np.select(
        [u <= 1.0, u <= 3.0, u <= 4.0],
        [20.0 * u ** 3, -20.0 * (u - 2.0) ** 3, 20.0 * (u - 4.0) ** 3],
        default=0.0)


def cutoff_exp(a: float = 20.0) -> NonlinearitySpec:
    """f(u) = chi(u) exp(a u) with a quintic cutoff chi saturating at 20.

    For u >= 4 this is exactly 20 exp(a u), so the tail of the barrier
    integral is exp(-a M)/(20 a) in closed form.
    """
    if a <= 0.0:
        raise ValueError("cutoff_exp requires a > 0")

    def f(u):
        u = np.asarray(u, dtype=float)
        return _chi(u) * np.exp(a * u)

    def fp(u):
        u = np.asarray(u, dtype=float)
        return (_chi_p(u) + a * _chi(u)) * np.exp(a * u)

    def fpp(u):
        u = np.asarray(u, dtype=float)
        return (_chi_pp(u) + 2.0 * a * _chi_p(u) + a * a * _chi(u)) * np.exp(a * u)

    def g(u):
        u = np.asarray(u, dtype=float)
        return np.log(_chi(u)) + a * u

    def gp(u):
        u = np.asarray(u, dtype=float)
        return _chi_p(u) / _chi(u) + a

    def gpp(u):
        u = np.asarray(u, dtype=float)
        c = _chi(u)
        return (_chi_pp(u) * c - _chi_p(u) ** 2) / c ** 2

    def log_exact_tail(M):
        return -a * M - math.log(20.0 * a)

    tail = TailGrowth(log_convex_from=4.0, tail_start=4.0,
                      log_exact_tail=log_exact_tail)
    return NonlinearitySpec(
        family="cutoff_exp", params={"a": a},
        f=f, fp=fp, fpp=fpp, g=g, gp=gp, gpp=gpp, tail=tail,
        label=f"cutoff_exp(a={a:g})")


def pure_power(p: float) -> NonlinearitySpec:
    """f(u) = u^p.  Outside the exponential class (f'F -> p/(p-1) != 1) but
    invaluable as a closed-form oracle: the singular profile is explicit."""
    if p <= 1.0:
        raise ValueError("pure_power requires p > 1")

    def f(u):
        u = np.asarray(u, dtype=float)
        return u ** p

    def fp(u):
        u = np.asarray(u, dtype=float)
        return p * u ** (p - 1)

    def fpp(u):
        u = np.asarray(u, dtype=float)
        return p * (p - 1) * u ** (p - 2)

    def g(u):
        u = np.asarray(u, dtype=float)
        return p * np.log(u)

    def gp(u):
        u = np.asarray(u, dtype=float)
        return p / u

    def gpp(u):
        u = np.asarray(u, dtype=float)
        return -p / u ** 2

    def log_exact_tail(M):
        return (1.0 - p) * math.log(M) - math.log(p - 1.0)

    tail = TailGrowth(log_convex_from=math.inf, tail_start=0.0,
                      log_exact_tail=log_exact_tail)
    return NonlinearitySpec(
        family="pure_power", params={"p": p},
        f=f, fp=fp, fpp=fpp, g=g, gp=gp, gpp=gpp, tail=tail,
        label=f"pure_power(p={p:g})")


def custom(f: Callable, fp: Callable, fpp: Callable,
           log_convex_from: float = math.inf,
           log_exact_tail: Optional[Callable[[float], float]] = None,
           tail_start: float = 0.0,
           label: str = "custom") -> NonlinearitySpec:
    """Wrap user-supplied evaluators.  The log-profile and its derivatives
    are derived from f, f', f''; admissibility is checked, never assumed."""

    def g(u):
        return np.log(f(u))

    def gp(u):
        return fp(u) / f(u)

    def gpp(u):
        fu = f(u)
        return (fpp(u) * fu - fp(u) ** 2) / fu ** 2

    tail = TailGrowth(log_convex_from=log_convex_from, tail_start=tail_start,
                      log_exact_tail=log_exact_tail)
    return NonlinearitySpec(
        family="custom", params={},
        f=f, fp=fp, fpp=fpp, g=g, gp=gp, gpp=gpp, tail=tail, label=label)


# ---------------------------------------------------------------------------
# the barrier integral F and its inverse
# ---------------------------------------------------------------------------

def _log_head(spec: NonlinearitySpec, u: float, M: float) -> float:
    """log of integral_u^M ds/f(s), computed against the scale f(u).

    The integrand decays on the scale 1/g'(u); when the interval is much
    wider than that, it is split geometrically so the quadrature cannot
    miss the boundary layer at s = u.
    """
    gu = float(spec.g(u))

    def integrand(s):
        arg = gu - float(spec.g(s))
        return math.exp(arg) if arg > -745.0 else 0.0

    gpu = float(spec.gp(u))
    cuts = [u]
    if gpu > 0.0:
        b = u + 50.0 / gpu
        while b < M:
            cuts.append(b)
            b = u + 4.0 * (b - u)
    cuts.append(M)
    val = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        seg, _ = quad(integrand, a, b, epsabs=1e-15, epsrel=1e-13, limit=400)
        val += seg
    if val <= 0.0:
        return -math.inf
    return -gu + math.log(val)


def eval_F_log(spec: NonlinearitySpec, u: float, tol: float = TOL_F) -> float:
    """log F(u), stable even where F(u) underflows to zero.

    The head integral_u^M is adaptive quadrature; the tail over [M, inf) is
    either a family closed form or, for log-convex g, the envelope bound
    1/(f(M) g'(M)) whose size is forced below tol relative to the head.
    """
    u = float(u)
    if u <= 0.0:
        raise ValueError("F is defined for u > 0")
    exact = spec.tail.log_exact_tail
    if exact is not None:
        M = max(2.0 * u, u + 1.0, spec.tail.tail_start)
        log_head = _log_head(spec, u, M)
        return float(np.logaddexp(log_head, exact(M)))

    # no closed-form tail: push M out until the log-convexity bound is
    # negligible relative to the head
    M = max(2.0 * u, u + 1.0, spec.tail.log_convex_from * 1.01)
    log_head = _log_head(spec, u, M)
    for _ in range(200):
        gpM = float(spec.gp(M))
        if gpM > 0.0 and float(spec.gpp(M)) >= 0.0:
            log_tail = -float(spec.g(M)) - math.log(gpM)
            if log_tail - log_head < math.log(tol):
                return float(np.logaddexp(log_head, log_tail))
        M_new = 2.0 * M
        seg = _log_head(spec, M, M_new)
        log_head = float(np.logaddexp(log_head, seg))
        M = M_new
        if not math.isfinite(M):
            break
    raise NonIntegrableTail(
        f"{spec.label}: could not certify an integrable tail for F({u:g})")


def eval_F(spec: NonlinearitySpec, u: float, tol: float = TOL_F) -> float:
    """Barrier integral F(u) = integral_u^inf ds/f(s), relative error <= tol."""
    return math.exp(eval_F_log(spec, u, tol))


def eval_F_inverse_log(spec: NonlinearitySpec, log_y: float,
                       tol: float = TOL_F) -> float:
    """Solve F(u) = exp(log_y) for u.  F is strictly decreasing."""

    def h(u):
        return eval_F_log(spec, u, tol) - log_y

    lo = hi = 1.0
    h1 = h(1.0)
    if h1 == 0.0:
        return 1.0
    if h1 > 0.0:
        # F(1) too large: move right
        for _ in range(600):
            lo, hi = hi, hi * 2.0
            if h(hi) <= 0.0:
                break
        else:
            raise OutOfRange("no preimage found at large u")
    else:
        # F(1) too small: move left toward 0 where F grows
        for _ in range(600):
            hi, lo = lo, lo / 2.0
            if lo < 1e-290:
                raise OutOfRange("requested value exceeds sup F")
            if h(lo) >= 0.0:
                break
        else:
            raise OutOfRange("requested value exceeds sup F")
    root = brentq(h, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=200)
    return float(root)


def eval_F_inverse(spec: NonlinearitySpec, y: float,
                   tol: float = TOL_F) -> float:
    """Inverse of the barrier integral: returns u with F(u) = y."""
    if y <= 0.0:
        raise OutOfRange("F takes positive values only")
    return eval_F_inverse_log(spec, math.log(y), tol)


# ---------------------------------------------------------------------------
# condition checks
# ---------------------------------------------------------------------------

@dataclass
class ConditionVerdict:
    name: str
    passed: bool
    witnesses: list = field(default_factory=list)
    detail: str = ""

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"


@dataclass
class AdmissibilityReport:
    spec_label: str
    dim: int
    conditions: dict
    limit_estimates: dict
    sample_range: tuple
    n_samples: int

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def to_json(self) -> str:
        doc = {
            "spec": self.spec_label,
            "dim": self.dim,
            "sample_range": list(self.sample_range),
            "n_samples": self.n_samples,
            "all_pass": self.all_pass,
            "conditions": [
                {
                    "condition": c.name,
                    "verdict": c.verdict,
                    "witnesses": [{"u": u, "value": v} for u, v in c.witnesses],
                    "detail": c.detail,
                }
                for c in self.conditions.values()
            ],
            "limit_estimates": self.limit_estimates,
        }
        return json.dumps(doc, indent=2)


def _normalized_reaction_deficit(spec: NonlinearitySpec, u: float,
                                 p_crit: float) -> float:
    """Q(u)/(u f(u)) where Q(u) = u f(u) - (p_crit+1) int_0^u f.

    Normalizing by u f(u) keeps the check finite where f overflows; the sign
    of Q is unchanged since u f(u) > 0.
    """
    gu = float(spec.g(u))
    gpu = float(spec.gp(u))

    def integrand(s):
        if s <= 0.0:
            return 0.0
        return math.exp(float(spec.g(s)) - gu)

    if gpu > 0.0:
        w = min(u, 60.0 / gpu)
    else:
        w = u
    total, _ = quad(integrand, u - w, u, epsabs=1e-15, epsrel=1e-13, limit=400)
    if w < u:
        rest, _ = quad(integrand, 0.0, u - w, epsabs=1e-15, epsrel=1e-13,
                       limit=400)
        total += rest
    return 1.0 - (p_crit + 1.0) * total / u


def check_admissibility(spec: NonlinearitySpec, dim: int,
                        u_max: float = 1e3, n_samples: int = 2000,
                        u_min: float = 1e-6,
                        tol_Q: float = 1e-12,
                        n_quad_samples: int = 80) -> AdmissibilityReport:
    """Sampling-based machine check of the four admissibility conditions.

    A PASS means "no violation found on the sampled range"; the conditions
    quantify over all u > 0, which is undecidable numerically.  The deficit
    functional for the fourth condition is evaluated in normalized form
    Q(u)/(u f(u)) on a log-spaced subsample (each point costs a quadrature).
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    if u_max <= 0:
        raise ValueError("u_max must be positive")
    p_crit = sobolev_exponent(dim)
    u = np.geomspace(u_min, u_max, n_samples)
    conditions = {}

    # A1: f(0) = 0 and f'(0) = 0, f continuous from the right
    f0 = float(spec.f(0.0))
    fp0 = float(spec.fp(0.0))
    wit = []
    if f0 != 0.0:
        wit.append((0.0, f0))
    if fp0 != 0.0:
        wit.append((0.0, fp0))
    f_small = float(spec.f(u_min))
    if not (0.0 <= f_small < math.inf):
        wit.append((u_min, f_small))
    conditions["A1"] = ConditionVerdict(
        "A1", not wit, wit, "f(0)=0 and f'(0)=0")

    # A2: f' > 0 and f'' > 0 on the samples
    with np.errstate(over="ignore"):
        fpv = np.asarray(spec.fp(u))
        fppv = np.asarray(spec.fpp(u))
    bad = np.where(~((fpv > 0) & (fppv > 0)))[0]
    wit = [(float(u[i]), float(min(fpv[i], fppv[i]))) for i in bad[:5]]
    conditions["A2"] = ConditionVerdict(
        "A2", bad.size == 0, wit, "f'>0 and f''>0 on samples")

    # A3: g eventually convex and g''/g'^2 -> 0.  Convexity need only hold
    # for large u, so violations are tolerated below a threshold as long as
    # a clean convex tail covering at least the top fifth of the log range
    # remains above it.
    upper = u[u >= math.sqrt(u_min * u_max)]
    gppv = np.asarray(spec.gpp(upper))
    gpv = np.asarray(spec.gp(upper))
    ratio = gppv / gpv ** 2
    neg = np.where(gppv < 0)[0]
    last_neg = int(neg[-1]) + 1 if neg.size else 0
    tail_frac = 1.0 - last_neg / len(upper)
    convex_ok = tail_frac >= 0.2
    wit = [] if convex_ok else [
        (float(upper[i]), float(gppv[i])) for i in neg[-5:]]
    tail_ratio = ratio[last_neg:] if convex_ok else ratio
    limit = float(tail_ratio[-1])
    errbar = abs(float(tail_ratio[-1] - tail_ratio[len(tail_ratio) // 2]))
    a3_ok = convex_ok and abs(limit) <= max(1e-2, 1.5 * errbar)
    if not a3_ok and convex_ok:
        wit = [(float(upper[-1]), limit)]
    conditions["A3"] = ConditionVerdict(
        "A3", a3_ok, wit,
        f"g convex on top {100 * tail_frac:.0f}% of range, "
        f"g''/g'^2 -> {limit:.3e} (+- {errbar:.1e})")

    # A4: Q(u) >= 0, checked as Q/(u f(u)) >= -tol on a quadrature subsample
    uq = np.geomspace(u_min, u_max, n_quad_samples)
    q_norm = np.array([
        _normalized_reaction_deficit(spec, float(x), p_crit) for x in uq])
    tol = tol_Q * np.maximum(1.0, np.abs(q_norm))
    bad = np.where(q_norm < -tol)[0]
    wit = [(float(uq[i]), float(q_norm[i])) for i in bad[:5]]
    conditions["A4"] = ConditionVerdict(
        "A4", bad.size == 0, wit,
        f"min Q/(u f) = {float(q_norm.min()):.3e}")

    # limit of f' F along the top decade (may fail to exist for bad tails)
    fpF_limit = None
    fpF_err = None
    try:
        pts = [u_max / 4.0, u_max / 2.0, u_max]
        vals = [v for _, v in check_fprime_F_limit(spec, pts)]
        fpF_limit = float(vals[-1])
        fpF_err = abs(vals[-1] - vals[-2])
    except NonIntegrableTail:
        pass

    return AdmissibilityReport(
        spec_label=spec.label, dim=dim, conditions=conditions,
        limit_estimates={
            "g2_over_g1sq": {"value": limit, "errbar": errbar},
            "fprime_F": {"value": fpF_limit, "errbar": fpF_err},
        },
        sample_range=(u_min, u_max), n_samples=n_samples)


def check_fprime_F_limit(spec: NonlinearitySpec,
                         u_grid: Sequence[float]) -> list:
    """Product f'(u) F(u) along an ascending grid; tends to 1 for the
    exponential class.  Computed as g'(u) * (F(u) f(u)) in log space."""
    out = []
    prev = None
    for u in u_grid:
        u = float(u)
        if prev is not None and u <= prev:
            raise ValueError("u_grid must be strictly ascending")
        if u <= 0:
            raise ValueError("u_grid must be positive")
        prev = u
        log_val = (math.log(float(spec.gp(u)))
                   + eval_F_log(spec, u) + float(spec.g(u)))
        out.append((u, math.exp(log_val)))
    return out


def check_log_convexity_ratio(spec: NonlinearitySpec,
                              u_grid: Sequence[float]) -> list:
    """Ratio g''(u)/g'(u)^2 along a grid; tends to 0 for admissible specs."""
    out = []
    for u in u_grid:
        u = float(u)
        gpu = float(spec.gp(u))
        if abs(gpu) < DIV_TOL:
            raise DivisionNearZero(f"g'({u:g}) = {gpu:g}")
        out.append((u, float(spec.gpp(u)) / gpu ** 2))
    return out
