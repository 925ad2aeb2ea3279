"""Graph currents of Q-valued fields.

The mass of the current carried by a graph is the integral of the sum
over sheets of the Jacobian area element sqrt(det(I_m + J J^T)); for
planar conformal sheets this equals 1 + |J|^2/2 pointwise, which makes
holomorphic graphs energy-calibrated and gives the exact mass-energy
identity checked here. Also: the small-scaling Taylor expansion of the
mass and the mu = 2 lower-bound smoke test on 4-dimensional boxes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .qfield import (
    GridDomain,
    QGridField,
    Region,
    SheetChart,
    _singular_correction,
    canonical_sort,
)


def sheet_jacobians(chart: SheetChart):
    """Per-node, per-sheet m x n Jacobians and their validity mask."""
    grad, gvalid = chart.gradient()
    # grad: shape + (m, Q, n) -> (..., Q, m, n)
    J = np.moveaxis(grad, -3, -2)
    return J, gvalid


def graph_area_elements(chart: SheetChart):
    """sqrt(det(I_m + J J^T)) per node and sheet, with the validity mask."""
    J, gvalid = sheet_jacobians(chart)
    m = chart.field.domain.m
    gram = np.einsum("...an,...bn->...ab", J, J)
    gram = gram + np.eye(m)
    det = np.linalg.det(np.where(np.isfinite(gram), gram, np.eye(m)))
    return np.sqrt(np.maximum(det, 0.0)), gvalid


def _region_measure_counts(f: QGridField, chart: SheetChart, region: Region):
    _, gvalid = chart.gradient()
    rmask = region.node_mask(f.domain)
    stencil_nodes = gvalid & rmask
    excised = chart.branch_corner_mask() & chart.valid & rmask
    return stencil_nodes, excised


def graph_mass(f: QGridField, chart: SheetChart, region: Optional[Region] = None,
               singular_correction: bool = True) -> float:
    """Mass of the graph current over the region (multiplicity one).

    Nodewise sum over sheets of the Gram area element times the cell
    volume; excised branch cells contribute their flat part plus half the
    local branched-model energy (their sheets are conformal there).
    """
    region = region or Region.whole()
    region.check_inside(f.domain)
    area, gvalid = graph_area_elements(chart)
    stencil_nodes, excised = _region_measure_counts(f, chart, region)
    dens = np.where(gvalid[..., None], area, 0.0).sum(-1)
    mass = float(dens[stencil_nodes].sum() * f.domain.cell_volume)
    if singular_correction and f.domain.m == 2:
        mass += f.q * excised.sum() * f.domain.cell_volume
        corr, _ = _singular_correction(chart, region)
        mass += corr / 2.0
    return mass


def conformality_defect(J: np.ndarray) -> float:
    """(|d_x h|^2 - |d_y h|^2)^2 + 4 (d_x h . d_y h)^2 of a planar Jacobian.

    Zero exactly at conformal or anti-conformal points; J has rows d_x h,
    d_y h. Works batched over leading axes.
    """
    J = np.asarray(J, dtype=float)
    gx = J[..., 0, :]
    gy = J[..., 1, :]
    a = (gx ** 2).sum(-1) - (gy ** 2).sum(-1)
    b = (gx * gy).sum(-1)
    out = a ** 2 + 4 * b ** 2
    return float(out) if out.ndim == 0 else out


def conformality_defect_field(f: QGridField, chart: SheetChart) -> np.ndarray:
    """Defect per node and sheet from the chart's finite differences."""
    if f.domain.m != 2:
        raise ValueError("conformality defect is planar")
    J, gvalid = sheet_jacobians(chart)
    d = conformality_defect(J)
    return np.where(gvalid[..., None], d, np.nan)


def area_energy_gap(f: QGridField, chart: SheetChart,
                    region: Optional[Region] = None) -> float:
    """Integral of sum_i (1 + |Df_i|^2 / 2 - area element) >= 0.

    The pointwise area-energy inequality makes every term nonnegative;
    the total vanishes exactly on conformal (holomorphic) fields.
    """
    if f.domain.m != 2:
        raise ValueError("area-energy gap is planar")
    region = region or Region.whole()
    region.check_inside(f.domain)
    area, gvalid = graph_area_elements(chart)
    grad, _ = chart.gradient()
    e_i = (grad ** 2).sum(axis=(-3, -1))        # |Df_i|^2 per sheet
    gap = np.where(gvalid[..., None], 1.0 + e_i / 2.0 - area, 0.0).sum(-1)
    rmask = region.node_mask(f.domain) & gvalid
    return float(gap[rmask].sum() * f.domain.cell_volume)


@dataclass
class TaylorFit:
    """Fitted small-lambda limit of (mass - Q |region|) / lambda^2."""

    limit: float
    remainder_order: float      # mass-level order of the o(lambda^2) term
    lambdas: np.ndarray
    values: np.ndarray          # (mass(lambda f) - Q |region|) / lambda^2

    def to_json(self) -> dict:
        return {"taylor_limit": self.limit, "taylor_order": self.remainder_order,
                "lambdas": [float(v) for v in self.lambdas],
                "values": [float(v) for v in self.values]}


def mass_taylor_fit(f: QGridField, chart: SheetChart, region: Optional[Region],
                    lambdas: Sequence[float]) -> TaylorFit:
    """Fit the limit of (M(T_{lambda f}) - Q |region|) / lambda^2 as lambda -> 0.

    The limit is half the Dirichlet energy; the empirical remainder order
    comes from a two-point Richardson ratio and is reported, not asserted
    (the expansion is exact for holomorphic fields).
    """
    lambdas = np.asarray(list(lambdas), dtype=float)
    if len(lambdas) < 4:
        raise ValueError("need at least 4 lambda values")
    if not np.all(np.diff(lambdas) < 0) or lambdas[-1] <= 0 or lambdas[0] > 1:
        raise ValueError("lambdas must decrease within (0, 1]")
    region = region or Region.whole()
    region.check_inside(f.domain)
    J, gvalid = sheet_jacobians(chart)
    m = f.domain.m
    gram0 = np.einsum("...an,...bn->...ab", J, J)
    gram0 = np.where(np.isfinite(gram0), gram0, 0.0)
    stencil_nodes, excised = _region_measure_counts(f, chart, region)
    corr, _ = _singular_correction(chart, region) if f.domain.m == 2 else (0.0, [])
    measure = (stencil_nodes.sum() + excised.sum()) * f.domain.cell_volume
    vals = []
    for lam in lambdas:
        det = np.linalg.det(np.eye(m) + lam * lam * gram0)
        area = np.sqrt(np.maximum(det, 0.0))
        dens = np.where(gvalid[..., None], area, 0.0).sum(-1)
        mass = float(dens[stencil_nodes].sum() * f.domain.cell_volume)
        mass += f.q * excised.sum() * f.domain.cell_volume
        mass += lam * lam * corr / 2.0
        vals.append((mass - f.q * measure) / lam ** 2)
    vals = np.asarray(vals)
    diffs = np.abs(np.diff(vals))
    scale = max(np.abs(vals).max(), 1e-30)
    # lambda-independent up to stencil noise: the expansion is exact
    if np.all(diffs < 1e-4 * scale):
        return TaylorFit(float(vals.mean()), float("inf"), lambdas, vals)
    # two-point Richardson ratios between consecutive difference pairs
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = diffs[:-1] / diffs[1:]
        betas = np.log(ratios) / np.log(lambdas[:-2] / lambdas[1:-1])
    beta = float(np.nanmedian(betas))
    # extrapolate: v = L + C lambda^beta, least squares
    A = np.vstack([np.ones_like(lambdas), lambdas ** beta]).T
    sol, *_ = np.linalg.lstsq(A, vals, rcond=None)
    return TaylorFit(float(sol[0]), beta + 2.0, lambdas, vals)


def sample_mu2_cover(kind: str, resolution: int, half_width: float = 1.0) -> QGridField:
    """Sample a mu = 2 holomorphic cover on a 4-dimensional box.

    kind 'linear' is the single-valued graph w = z1; kind 'sqrt' is the
    double cover w^2 = z1 z2 (discriminant on the coordinate hyperplanes,
    which the grid offsets avoid). Coarse resolutions only: this feeds an
    inequality smoke test, not a convergence study.
    """
    L = float(half_width)
    dom = GridDomain.box((-L,) * 4, (L,) * 4, resolution)
    X = dom.node_grids()
    z1 = X[0] + 1j * X[1]
    z2 = X[2] + 1j * X[3]
    if kind == "linear":
        w = z1[..., None]
    elif kind == "sqrt":
        s = np.sqrt(z1 * z2)
        w = np.stack([s, -s], axis=-1)
    else:
        raise ValueError(f"unknown mu=2 cover kind {kind!r}")
    values = np.stack([w.real, w.imag], axis=-1)
    return QGridField.from_values(dom, values)


def mass_lower_bound_mu2(g: QGridField, chart: SheetChart,
                         region: Optional[Region] = None) -> float:
    """Ratio mass / (Q |region| + Dir / 4) on a 4-dimensional box; >= 1 up
    to discretization for fields sampled from mu = 2 holomorphic covers."""
    if g.domain.m != 4:
        raise ValueError("mu = 2 check needs a 4-dimensional box (two complex lines)")
    if min(g.domain.resolution) < 8:
        raise ValueError("resolution too low to classify (need >= 8 per axis)")
    region = region or Region.whole()
    area, gvalid = graph_area_elements(chart)
    grad, _ = chart.gradient()
    rmask = region.node_mask(g.domain) & gvalid
    vol = g.domain.cell_volume
    mass = float(np.where(gvalid[..., None], area, 0.0).sum(-1)[rmask].sum() * vol)
    dir_e = float(np.where(gvalid, (grad ** 2).sum(axis=(-3, -2, -1)), 0.0)[rmask].sum() * vol)
    measure = rmask.sum() * vol
    return mass / (g.q * measure + dir_e / 4.0)
