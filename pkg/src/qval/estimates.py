"""Numerical verification of the interior estimates.

Caccioppoli: energy against the L^2 norm of the translated field times
the cutoff gradient. Reverse Holder: an L^2 gradient average controlled
by a lower L^s average on the doubled ball. Integrability probe: shell
sums of |Du|^p over geometrically shrinking annuli classify each p as
convergent or divergent and locate the crossover exponent; for branched
covers of degree Q the crossover is the sharp threshold 2Q/(Q-1).

All ball averages are taken over grid nodes inside the ball and
normalized by counted cell measure, so both sides of each inequality
share the same quadrature bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .qfield import QGridField, Region, SheetChart, dirichlet_energy, _singular_correction


class DegenerateCutoffError(ValueError):
    """Caccioppoli right-hand side vanished while the left did not."""


@dataclass(frozen=True)
class CutoffSpec:
    """Radial piecewise-linear cutoff: 1 inside r1, 0 outside r2."""

    center: tuple
    r1: float
    r2: float

    def __post_init__(self):
        if not (0 < self.r1 < self.r2):
            raise ValueError(f"need 0 < r1 < r2, got {self.r1}, {self.r2}")

    def eta(self, r: np.ndarray) -> np.ndarray:
        return np.clip((self.r2 - r) / (self.r2 - self.r1), 0.0, 1.0)

    def deta(self, r: np.ndarray) -> np.ndarray:
        """|grad eta|: 1/(r2 - r1) on the transition annulus."""
        inside = (r > self.r1) & (r < self.r2)
        return np.where(inside, 1.0 / (self.r2 - self.r1), 0.0)


def _radii(f: QGridField, center) -> np.ndarray:
    X = f.domain.node_grids()
    if f.domain.m == 2:
        return np.hypot(X[0] - center[0], X[1] - center[1])
    c = np.asarray(center, dtype=float)
    return np.sqrt(sum((X[a] - c[a]) ** 2 for a in range(f.domain.m)))


def _translated_norm_sq(f: QGridField, P) -> np.ndarray:
    """|tau_P u|^2 = sum_i |u_i - P|^2 per node (NaN off the mask)."""
    P = np.asarray(P, dtype=float)
    return ((f.samples - P) ** 2).sum((-2, -1))


def caccioppoli_ratio(u: QGridField, chart: SheetChart, P, cutoff: CutoffSpec) -> float:
    """LHS/RHS of the Caccioppoli inequality with the given cutoff.

    LHS = int |Du|^2 eta^2, RHS = int |tau_P u|^2 |D eta|^2; at most
    1 + discretization slack for minimizers and sampled covers.
    """
    Region.ball(cutoff.center, cutoff.r2).check_inside(u.domain)
    r = _radii(u, cutoff.center)
    grad, gvalid = chart.gradient()
    dens = np.where(gvalid, (grad ** 2).sum(axis=(-3, -2, -1)), 0.0)
    eta2 = cutoff.eta(r) ** 2
    vol = u.domain.cell_volume
    lhs = float((dens * eta2)[gvalid].sum() * vol)
    if u.domain.m == 2:
        corr, items = _singular_correction(chart, Region.ball(cutoff.center, cutoff.r2))
        xs = u.domain.axis_coords(0)
        ys = u.domain.axis_coords(1)
        for (cell, e, _diag) in items:
            cx = 0.5 * (xs[cell[0]] + xs[cell[0] + 1])
            cy = 0.5 * (ys[cell[1]] + ys[cell[1] + 1])
            rc = np.hypot(cx - cutoff.center[0], cy - cutoff.center[1])
            lhs += e * float(cutoff.eta(np.asarray(rc)) ** 2)
    tausq = _translated_norm_sq(u, P)
    deta2 = cutoff.deta(r) ** 2
    valid = u.mask
    rhs = float(np.nansum(np.where(valid, tausq * deta2, 0.0)) * vol)
    if rhs == 0.0:
        if lhs == 0.0:
            return 0.0
        raise DegenerateCutoffError("cutoff gradient support carries no nodes")
    return lhs / rhs


def caccioppoli_ball_ratio(u: QGridField, chart: SheetChart, P, center, r: float) -> float:
    """Ball form: Dir(B_{3r/2}) against (4/r^2) int_{B_2r} |tau_P u|^2."""
    Region.ball(center, 2 * r).check_inside(u.domain)
    lhs = dirichlet_energy(u, chart, Region.ball(center, 1.5 * r))
    tausq = _translated_norm_sq(u, P)
    sel = Region.ball(center, 2 * r).node_mask(u.domain) & u.mask
    rhs = (4.0 / r ** 2) * float(np.nansum(np.where(sel, tausq, 0.0)) * u.domain.cell_volume)
    if rhs == 0.0:
        if lhs == 0.0:
            return 0.0
        raise DegenerateCutoffError("translated field vanishes on the outer ball")
    return lhs / rhs


def admissible_s_interval(m: int) -> tuple:
    return (2.0 * m / (m + 2), 2.0)


def default_s(m: int) -> float:
    """Midpoint of the admissible interval (2m/(m+2), 2)."""
    lo, hi = admissible_s_interval(m)
    return 0.5 * (lo + hi)


def reverse_holder_ratio(u: QGridField, chart: SheetChart, center, r: float,
                         s: Optional[float] = None) -> float:
    """(avg_{B_r} |Du|^2)^(1/2) / (avg_{B_2r} |Du|^s)^(1/s).

    Scaling u -> lambda u leaves the ratio exactly invariant; the sweep
    maximum is the empirical constant of the inequality.
    """
    m = u.domain.m
    s = default_s(m) if s is None else float(s)
    lo, hi = admissible_s_interval(m)
    if not (lo < s < hi):
        raise ValueError(f"s = {s} outside the admissible interval ({lo}, {hi})")
    Region.ball(center, 2 * r).check_inside(u.domain)
    grad, gvalid = chart.gradient()
    dens = (grad ** 2).sum(axis=(-3, -2, -1))
    inner = Region.ball(center, r).node_mask(u.domain) & gvalid
    outer = Region.ball(center, 2 * r).node_mask(u.domain) & gvalid
    if not inner.any() or not outer.any():
        raise ValueError("balls contain no stencil nodes at this resolution")
    lhs = float(np.sqrt(dens[inner].mean()))
    rhs = float((dens[outer] ** (s / 2)).mean() ** (1.0 / s))
    if rhs == 0.0:
        return 0.0 if lhs == 0.0 else np.inf
    return lhs / rhs


@dataclass
class ProbeResult:
    """Outcome of the higher-integrability probe."""

    p_grid: np.ndarray
    growth: np.ndarray            # fitted shell growth rate per p; > 0 converges
    classification: list          # 'convergent' | 'divergent' | 'ambiguous'
    p_star: float                 # crossover estimate; inf if everything converges
    tail_fractions: np.ndarray
    shells: np.ndarray            # (len(p_grid), nshells) shell integrals
    radii: np.ndarray
    inconclusive: bool

    def to_json(self) -> dict:
        return {
            "p_grid": [float(p) for p in self.p_grid],
            "classification": {f"{p:g}": c for p, c in zip(self.p_grid, self.classification)},
            "p_star": "inf" if np.isinf(self.p_star) else float(self.p_star),
            "confidence": {
                "growth_rates": [float(g) for g in self.growth],
                "tail_fractions": [float(t) for t in self.tail_fractions],
                "inconclusive": self.inconclusive,
            },
        }


def integrability_probe(u: QGridField, chart: SheetChart, center,
                        p_grid: Sequence[float], inner_radii: Sequence[float],
                        outer_radius: Optional[float] = None) -> ProbeResult:
    """Classify int |Du|^p near the singularity by shrinking-annulus tails.

    Shell sums over annulus(r_{k+1}, r_k) follow r^(p beta + 2) for a
    power-law gradient; their fitted growth rate crosses zero at the
    integrability threshold, which is returned as p_star. Tail behavior
    over shells separates genuine non-integrability from grid truncation.
    For m >= 3 the shells are tubes around the singular line.
    """
    p_grid = np.asarray(sorted(p_grid), dtype=float)
    if p_grid.min() < 2.0 or p_grid.max() > 8.0:
        raise ValueError("p grid restricted to [2, 8]")
    inner = np.asarray(sorted(inner_radii, reverse=True), dtype=float)
    if len(inner) < 3:
        raise ValueError("need at least 3 shrinking inner radii")
    h = max(u.domain.h[:2])
    if inner[-1] < 4 * h * (1 - 1e-9):
        raise ValueError(f"innermost radius {inner[-1]:.4g} below 4h = {4 * h:.4g}")
    outer = float(outer_radius) if outer_radius else float(min(1.0, 2 * inner[0]))
    radii = np.concatenate([[outer], inner])
    m = u.domain.m
    grad, gvalid = chart.gradient()
    dens = (grad ** 2).sum(axis=(-3, -2, -1))
    r = _radii_tube(u, center) if m >= 3 else _radii(u, center)
    vol = u.domain.cell_volume
    nshell = len(radii) - 1
    shells = np.zeros((len(p_grid), nshell))
    for k in range(nshell):
        sel = gvalid & (r <= radii[k]) & (r > radii[k + 1])
        if not sel.any():
            raise ValueError(f"shell ({radii[k + 1]:.3g}, {radii[k]:.3g}] has no nodes")
        d = dens[sel]
        for ip, p in enumerate(p_grid):
            shells[ip, k] = float((d ** (p / 2)).sum() * vol)
    # growth rate: slope of log(shell mass) against log(radius); a power-law
    # gradient gives p*beta + 2, positive exactly when the integral converges
    growth = np.empty(len(p_grid))
    tails = np.empty(len(p_grid))
    classification = []
    for ip in range(len(p_grid)):
        s = shells[ip]
        with np.errstate(divide="ignore"):
            ys = np.log(s[1:] / s[:-1]) / np.log(radii[2:] / radii[1:-1])
        g = float(np.mean(ys))
        growth[ip] = g
        scatter = float(np.std(ys)) if len(ys) > 1 else 0.0
        margin = max(0.02, 2.0 * scatter / max(np.sqrt(len(ys)), 1.0))
        rho = float(np.exp(np.mean(np.log(radii[2:] / radii[1:-1]))))  # < 1
        if g > 0:
            t = rho ** g
            remainder = s[-1] * t / (1 - t)
            tails[ip] = (s[-1] + remainder) / (s.sum() + remainder)
        else:
            tails[ip] = 1.0
        # shells decaying beyond the noise margin pass the Cauchy test under
        # geometric extrapolation; nondecreasing shells grow log-linearly
        if g >= margin:
            classification.append("convergent")
        elif g <= -margin:
            classification.append("divergent")
        else:
            classification.append("ambiguous")
    inconclusive = all(c == "ambiguous" for c in classification)
    # crossover: zero of the growth rate, linear in p with negative slope
    # for a power-law blowup; fields with no singularity report infinity
    A = np.vstack([p_grid, np.ones_like(p_grid)]).T
    sol, *_ = np.linalg.lstsq(A, growth, rcond=None)
    slope, intercept = float(sol[0]), float(sol[1])
    if slope < -1e-12:
        p_star = -intercept / slope
        if (growth > 0).all() and p_star > 8.0:
            p_star = float("inf")
    else:
        p_star = float("inf") if (growth > 0).all() else float("nan")
    return ProbeResult(p_grid, growth, classification, p_star, tails, shells,
                       radii, inconclusive)


def _radii_tube(f: QGridField, center2) -> np.ndarray:
    X = f.domain.node_grids()
    return np.hypot(X[0] - center2[0], X[1] - center2[1])


def gradient_profile_exponent(u: QGridField, chart: SheetChart, center,
                              r_lo: float, r_hi: float, bins: int = 24):
    """Log-log slope of the radial profile of |Du| (median per annular bin)."""
    grad, gvalid = chart.gradient()
    dens = np.sqrt((grad ** 2).sum(axis=(-3, -2, -1)))
    m = u.domain.m
    r = _radii_tube(u, center) if m >= 3 else _radii(u, center)
    edges = np.geomspace(r_lo, r_hi, bins + 1)
    mids, meds = [], []
    for k in range(bins):
        sel = gvalid & (r >= edges[k]) & (r < edges[k + 1])
        if sel.sum() < 4:
            continue
        mids.append(np.sqrt(edges[k] * edges[k + 1]))
        meds.append(np.median(dens[sel]))
    mids, meds = np.log(mids), np.log(meds)
    A = np.vstack([mids, np.ones_like(mids)]).T
    sol, *_ = np.linalg.lstsq(A, meds, rcond=None)
    resid = float(np.sqrt(np.mean((meds - A @ sol) ** 2)))
    return float(sol[0]), resid
