"""Threshold experiments around the singular stationary profile.

Evolves perturbed singular data with the IMEX stepper, classifies each run
as globally bounded or blowing up, and sweeps signed bump amplitudes to
confirm that the sign of the perturbation alone decides the outcome.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from .errors import NonMonotoneScan, ReactionOverflow
from .evolution import (
    BoundaryCondition,
    RadialField,
    RadialGrid,
    field_from_table,
    make_grid,
    sphere_area,
    stability_dt,
    step_imex,
    ul_norm,
)
from .nonlinearity import NonlinearitySpec

__all__ = [
    "RadialBump",
    "Scaling",
    "Truncation",
    "EvolutionOutcome",
    "CaseReport",
    "ScanReport",
    "initial_data",
    "run_case",
    "amplification_probe",
    "threshold_scan",
]

SUP_GUARD = 1e8          # sup-norm divergence guard
MASS_GUARD = 1e6         # inner reaction mass must grow by this factor
DT_UNDERFLOW = 1e-12     # adaptive step collapse corroborates divergence
PLATEAU_SLACK = 1.02     # allowed relative rise of the sup over the tail


@dataclass(frozen=True)
class RadialBump:
    """Signed Gaussian bump A * exp(-((r - r_c)/sigma)^2)."""

    r_c: float
    sigma: float
    amplitude: float

    def __post_init__(self):
        if self.r_c < 0 or self.sigma <= 0:
            raise ValueError("bump needs r_c >= 0 and sigma > 0")

    def profile(self, r: np.ndarray) -> np.ndarray:
        return self.amplitude * np.exp(-((r - self.r_c) / self.sigma) ** 2)

    @property
    def side(self) -> str:
        if self.amplitude > 0:
            return "above"
        if self.amplitude < 0:
            return "below"
        return "neutral"


@dataclass(frozen=True)
class Scaling:
    """Multiplicative perturbation u0 = factor * profile."""

    factor: float

    def __post_init__(self):
        if self.factor <= 0:
            raise ValueError("scaling factor must be positive")

    @property
    def side(self) -> str:
        if self.factor > 1:
            return "above"
        if self.factor < 1:
            return "below"
        return "neutral"


@dataclass(frozen=True)
class Truncation:
    """Cap-only perturbation u0 = min(profile, cap)."""

    cap: float

    def __post_init__(self):
        if self.cap <= 0:
            raise ValueError("cap must be positive")

    @property
    def side(self) -> str:
        return "below"


Perturbation = Union[RadialBump, Scaling, Truncation]


def _combined_side(perts: Sequence[Perturbation]) -> str:
    sides = {p.side for p in perts} - {"neutral"}
    if len(sides) > 1:
        raise ValueError("perturbations must agree on one side of the "
                         "stationary profile")
    return sides.pop() if sides else "below"


def initial_data(table, grid: RadialGrid, perts: Sequence[Perturbation],
                 cap: float, spec: Optional[NonlinearitySpec] = None
                 ) -> Tuple[RadialField, str]:
    """Build one-sided initial data from the singular profile.

    Perturbations are applied in order to the uncapped profile; the cap is
    applied last, so near the origin the data always sits below the
    stationary profile regardless of side.  The result is clipped to stay
    one-sided away from the capped zone and returned with its side label.
    """
    side = _combined_side(perts)
    base = field_from_table(table, grid, cap=cap, spec=spec)
    star = base.u.copy()
    star[0] = np.inf
    star[1:] = np.asarray(table.u_star(grid.r[1:], spec))

    u = np.minimum(star, cap)
    for p in perts:
        if isinstance(p, Scaling):
            u = p.factor * u
        elif isinstance(p, RadialBump):
            u = u + p.profile(grid.r)
        elif isinstance(p, Truncation):
            u = np.minimum(u, p.cap)
        else:
            raise TypeError(f"unknown perturbation {p!r}")
    if side == "below":
        u = np.minimum(u, star)
    else:
        u = np.maximum(u, np.minimum(star, cap))
    u = np.maximum(u, 0.0)
    mask = base.cap_mask | (u > cap)
    u = np.minimum(u, cap)
    return RadialField(grid, u, mask), side


@dataclass
class EvolutionOutcome:
    """Classified evolution of one perturbed profile at one cap."""

    classification: str            # GlobalBounded | BlowUp | Undetermined
    cap: float
    t_detect: Optional[float]
    times: np.ndarray
    sup_series: np.ndarray
    l1ul_series: np.ndarray
    mass_series: np.ndarray
    snapshots: list = dc_field(default_factory=list)
    side: str = "below"
    one_sided_excess: Optional[float] = None

    @property
    def sup_final(self) -> float:
        return float(self.sup_series[-1])

    @property
    def mass_final(self) -> float:
        return float(self.mass_series[-1])


@dataclass
class CaseReport:
    """Outcomes of one perturbation across a cap sequence."""

    outcomes: dict                 # cap -> EvolutionOutcome
    classification: str
    cap_stable: bool
    t_detect: Optional[float]

    @property
    def finest(self) -> EvolutionOutcome:
        return self.outcomes[max(self.outcomes)]


def _cap_radius(table, cap: float,
                spec: Optional[NonlinearitySpec]) -> float:
    """Radius where the singular profile crosses the cap."""
    lo, hi = 1e-12, float(table.r[-1])
    if float(table.u_star(hi, spec)) >= cap:
        return hi
    return float(brentq(lambda r: float(table.u_star(r, spec)) - cap,
                        lo, hi, xtol=1e-15, rtol=1e-12))


def case_grid(table, cap: float, dim: int, R_outer: float, n_nodes: int,
              spec: Optional[NonlinearitySpec] = None) -> RadialGrid:
    """Grid whose first node resolves the capped zone of the profile.

    The capped spike has height*width ~ cap * r_cap which stays order one,
    so once the first node sits inside the capped zone the spike is
    genuinely subcritical; an unresolved cap on a coarse grid acts like a
    wide supercritical plateau and diverges for any data.
    """
    r_cap = _cap_radius(table, cap, spec)
    r1_frac = min(1e-3, 0.1 * r_cap / R_outer)
    # the capped core sits exactly at the marginal height*width balance,
    # so the geometric section must stay fine enough (node ratio <= 1.3)
    # or truncation error tips the race and the core diverges spuriously
    transition = min(1.0, R_outer / 4.0)
    n_geo_req = math.ceil(
        1.0 + math.log(transition / (r1_frac * R_outer)) / math.log(1.3))
    n_nodes = max(n_nodes, math.ceil(n_geo_req / 0.45) + 2)
    bc = BoundaryCondition("dirichlet", float(table.u_star(R_outer, spec)))
    return make_grid(dim, R_outer, n_nodes, r1_frac=r1_frac, bc=bc)


def _inner_mass(field: RadialField, spec: Optional[NonlinearitySpec],
                r_star: float) -> float:
    """Reaction mass of f(u) over the ball of radius r_star."""
    if spec is None:
        return 0.0
    grid = field.grid
    r = grid.r
    faces = 0.5 * (r[:-1] + r[1:])
    left = np.concatenate([[0.0], faces])
    right = np.concatenate([faces, [r[-1]]])
    vol = (right ** grid.dim - left ** grid.dim) / grid.dim
    sel = r <= r_star
    with np.errstate(over="ignore"):
        fu = np.asarray(spec.f(np.minimum(field.u[sel], 1e60)), dtype=float)
    fu = np.minimum(np.nan_to_num(fu, posinf=1e200), 1e200)
    return float(sphere_area(grid.dim) * np.sum(fu * vol[sel]))


def _excess_over_star(field: RadialField, star: np.ndarray,
                      r: np.ndarray, r_min: float) -> float:
    sel = (r >= r_min) & np.isfinite(star)
    return float(((field.u[sel] - star[sel]) / star[sel]).max())


def run_case(spec: Optional[NonlinearitySpec], table,
             perts: Union[Perturbation, Sequence[Perturbation]],
             horizon: float = 0.5,
             caps: Sequence[float] = (1e4, 1e5),
             n_nodes: int = 129,
             R_outer: float = 8.0,
             n_samples: int = 64,
             inner_radius: Optional[float] = None) -> CaseReport:
    """Evolve perturbed singular data at each cap and classify the outcome.

    BlowUp requires three corroborating signals: the sup-norm beyond its
    guard, the inner reaction mass amplified a million-fold, and collapse
    of the adaptive time step.  GlobalBounded requires reaching the horizon
    with the sup-norm non-increasing (within slack) over the final half.
    Anything else is Undetermined.  The case verdict is the shared per-cap
    verdict when all caps agree, else Undetermined with cap_stable=False.
    """
    if isinstance(perts, (RadialBump, Scaling, Truncation)):
        perts = [perts]
    dim = table.dim if hasattr(table, "dim") else 5
    outcomes = {}
    for cap in caps:
        grid = case_grid(table, cap, dim, R_outer, n_nodes, spec)
        u0, side = initial_data(table, grid, perts, cap, spec)
        r_star = inner_radius
        if r_star is None:
            # floor at R/8: on cap-resolving grids the ten innermost cells
            # collapse into the unresolved core, below where a desk-scale
            # divergence can localize
            r_star = max(float(grid.r[min(10, grid.n_nodes - 1)]),
                         R_outer / 8.0)
        outcomes[cap] = _evolve_and_classify(
            spec, table, u0, side, horizon, cap, n_samples, r_star)
    verdicts = {o.classification for o in outcomes.values()}
    cap_stable = len(verdicts) == 1
    classification = verdicts.pop() if cap_stable else "Undetermined"
    detects = [o.t_detect for o in outcomes.values()
               if o.t_detect is not None]
    return CaseReport(outcomes=outcomes,
                      classification=classification,
                      cap_stable=cap_stable,
                      t_detect=max(detects) if detects else None)


def _evolve_and_classify(spec, table, u0: RadialField, side: str,
                         horizon: float, cap: float, n_samples: int,
                         r_star: float) -> EvolutionOutcome:
    grid = u0.grid
    sample_times = np.geomspace(horizon / 1e4, horizon, n_samples)
    star = np.empty(grid.n_nodes)
    star[0] = np.inf
    star[1:] = np.asarray(table.u_star(grid.r[1:], spec))

    times = [0.0]
    sups = [u0.sup]
    l1s = [ul_norm(u0, 1.0).norm]
    masses = [_inner_mass(u0, spec, r_star)]
    snapshots = [(0.0, u0)]
    mass0 = max(masses[0], 1e-300)
    excess = _excess_over_star(u0, star, grid.r, 0.1) if side == "below" \
        else None

    cur, t = u0, 0.0
    t_detect = None
    classification = "Undetermined"
    next_sample = 0
    max_steps = 2_000_000
    for _ in range(max_steps):
        if spec is not None:
            try:
                dt_stab = stability_dt(cur, spec, dt_max=horizon / 50.0)
            except ReactionOverflow:
                dt_stab = 0.0
        else:
            dt_stab = 0.5 * horizon / 50.0
        diverged = (cur.sup > SUP_GUARD
                    and _inner_mass(cur, spec, r_star) > MASS_GUARD * mass0
                    and dt_stab < DT_UNDERFLOW)
        if diverged:
            classification = "BlowUp"
            t_detect = float(t)
            times.append(float(t))
            sups.append(cur.sup)
            l1s.append(ul_norm(cur, 1.0).norm)
            masses.append(_inner_mass(cur, spec, r_star))
            snapshots.append((float(t), cur))
            break
        if t >= horizon:
            break
        dt = min(dt_stab if dt_stab > 0 else DT_UNDERFLOW, horizon - t)
        while (next_sample < len(sample_times)
               and sample_times[next_sample] <= t):
            next_sample += 1
        if next_sample < len(sample_times):
            dt = min(dt, sample_times[next_sample] - t)
        try:
            cur = step_imex(cur, spec, dt)
        except ReactionOverflow:
            classification = "BlowUp" if cur.sup > SUP_GUARD \
                else "Undetermined"
            t_detect = float(t) if classification == "BlowUp" else None
            times.append(float(t))
            sups.append(cur.sup)
            l1s.append(ul_norm(cur, 1.0).norm)
            masses.append(_inner_mass(cur, spec, r_star))
            snapshots.append((float(t), cur))
            break
        t += dt
        if (next_sample < len(sample_times)
                and t >= sample_times[next_sample] * (1 - 1e-12)):
            times.append(t)
            sups.append(cur.sup)
            l1s.append(ul_norm(cur, 1.0).norm)
            masses.append(_inner_mass(cur, spec, r_star))
            snapshots.append((t, cur))
            if side == "below":
                excess = max(excess,
                             _excess_over_star(cur, star, grid.r, 0.1))
            next_sample += 1

    if classification != "BlowUp" and t >= horizon:
        sups_arr = np.asarray(sups)
        times_arr = np.asarray(times)
        tail = sups_arr[times_arr >= 0.5 * horizon]
        finite = np.all(np.isfinite(sups_arr))
        if (finite and len(tail) >= 2 and tail[-1] <= PLATEAU_SLACK * tail[0]
                and tail.max() <= PLATEAU_SLACK * tail[0]):
            classification = "GlobalBounded"

    return EvolutionOutcome(classification=classification, cap=cap,
                            t_detect=t_detect,
                            times=np.asarray(times),
                            sup_series=np.asarray(sups),
                            l1ul_series=np.asarray(l1s),
                            mass_series=np.asarray(masses),
                            snapshots=snapshots, side=side,
                            one_sided_excess=excess)


def amplification_probe(outcome: EvolutionOutcome, table,
                        spec: Optional[NonlinearitySpec] = None,
                        window: Optional[Tuple[float, float]] = None
                        ) -> list[Tuple[float, float]]:
    """Largest alpha with u(r, t) >= alpha * u*(r) near the origin.

    The minimum of u/u* is taken over a radial window of uncapped nodes
    (default: the innermost uncapped decade); in a diverging run this
    ratio ratchets upward before detection, in a decaying run it falls
    below one and keeps falling.
    """
    if not outcome.snapshots:
        raise ValueError("outcome carries no snapshots")
    grid = outcome.snapshots[0][1].grid
    mask = outcome.snapshots[0][1].cap_mask
    free = (~mask) & (grid.r > 0)
    if window is None:
        r_a = float(grid.r[free].min())
        window = (r_a, 10.0 * r_a)
    sel = free & (grid.r >= window[0]) & (grid.r <= window[1])
    if not np.any(sel):
        raise ValueError("empty probe window")
    star = np.asarray(table.u_star(grid.r[sel], spec))
    out = []
    for t, fld in outcome.snapshots:
        out.append((t, float((fld.u[sel] / star).min())))
    return out


@dataclass
class ScanReport:
    """Amplitude sweep of bump perturbations at every cap."""

    amplitudes: np.ndarray
    cases: dict                    # amplitude -> CaseReport
    config: dict

    def classifications(self) -> list:
        return [self.cases[a].classification for a in self.amplitudes]

    def rows(self):
        for a in self.amplitudes:
            for cap in sorted(self.cases[a].outcomes):
                o = self.cases[a].outcomes[cap]
                yield (float(a), o.classification,
                       o.t_detect if o.t_detect is not None else float("nan"),
                       float(cap), o.sup_final, o.mass_final)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("amplitude,classification,t_detect,cap,"
                     "sup_final,reaction_mass_final\n")
            for a, cls, td, cap, sf, mf in self.rows():
                fh.write(f"{a:.17g},{cls},{td:.17g},{cap:.17g},"
                         f"{sf:.17g},{mf:.17g}\n")

    def to_json(self) -> str:
        return json.dumps({
            "config": self.config,
            "amplitudes": [float(a) for a in self.amplitudes],
            "classifications": self.classifications(),
            "cap_stable": [bool(self.cases[a].cap_stable)
                           for a in self.amplitudes],
            "t_detect": [self.cases[a].t_detect for a in self.amplitudes],
        }, indent=2)


def _check_monotone(amps: np.ndarray, classes: list) -> None:
    """The verdict may switch GlobalBounded -> BlowUp once, with at most
    one Undetermined in the buffer zone."""
    if classes.count("Undetermined") > 1:
        raise NonMonotoneScan(f"multiple undetermined cases: {classes}")
    filtered = [c for c in classes if c != "Undetermined"]
    first_bu = next((i for i, c in enumerate(filtered) if c == "BlowUp"),
                    len(filtered))
    if any(c != "BlowUp" for c in filtered[first_bu:]):
        raise NonMonotoneScan(
            f"classification not monotone in amplitude: "
            f"{list(zip(amps.tolist(), classes))}")


def threshold_scan(spec: Optional[NonlinearitySpec], table,
                   bump_shape: RadialBump,
                   A_grid: Sequence[float],
                   horizon: float = 0.5,
                   caps: Sequence[float] = (1e4, 1e5),
                   n_nodes: int = 129,
                   R_outer: float = 8.0,
                   workers: int = 4) -> ScanReport:
    """Sweep signed bump amplitudes and verify the sign dichotomy.

    bump_shape fixes r_c and sigma; its amplitude field is ignored in
    favour of each entry of A_grid.  Cases run concurrently.
    """
    amps = np.asarray(sorted(float(a) for a in A_grid))

    def one(a: float) -> CaseReport:
        bump = RadialBump(bump_shape.r_c, bump_shape.sigma, a)
        return run_case(spec, table, bump, horizon=horizon, caps=caps,
                        n_nodes=n_nodes, R_outer=R_outer)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = list(pool.map(one, amps))
    cases = dict(zip(amps.tolist(), reports))
    _check_monotone(amps, [cases[a].classification for a in amps])
    return ScanReport(amplitudes=amps, cases=cases, config={
        "r_c": bump_shape.r_c, "sigma": bump_shape.sigma,
        "horizon": horizon, "caps": [float(c) for c in caps],
        "n_nodes": n_nodes, "R_outer": R_outer,
    })
