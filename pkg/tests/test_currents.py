import numpy as np
import pytest
from scipy.integrate import dblquad

from qval import (
    GridDomain,
    QGridField,
    Region,
    area_energy_gap,
    conformality_defect,
    conformality_defect_field,
    dirichlet_energy,
    exact_vq_energy,
    graph_mass,
    mass_lower_bound_mu2,
    mass_taylor_fit,
    sample_mu2_cover,
    sheet_align,
)
from qval.currents import graph_area_elements
from conftest import cover_field, cover_chart


def single_valued(domain, fn):
    X = domain.node_grids()
    vals = np.asarray(fn(*X))
    return QGridField.from_values(domain, np.moveaxis(vals, 0, -1)[..., None, :])


class TestGraphMass:
    def test_flat_multiplicity_q(self):
        dom = GridDomain.disk((0.0, 0.0), 1.0, 128)
        vals = np.zeros(dom.shape + (3, 2))
        f = QGridField.from_values(dom, vals)
        chart = sheet_align(f)
        mass = graph_mass(f, chart)
        measure = chart.gradient()[1].sum() * dom.cell_volume
        assert mass == pytest.approx(3 * measure, rel=1e-12)
        assert mass == pytest.approx(3 * np.pi, rel=0.005)

    def test_conformal_doubling(self):
        # h(z) = 2z: area element is exactly 1 + |h'|^2 = 5
        dom = GridDomain.disk((0.0, 0.0), 1.0, 128)
        f = single_valued(dom, lambda x, y: (2 * x, 2 * y))
        chart = sheet_align(f)
        mass = graph_mass(f, chart)
        measure = chart.gradient()[1].sum() * dom.cell_volume
        assert mass == pytest.approx(5 * measure, rel=1e-12)
        assert mass == pytest.approx(5 * np.pi, rel=0.005)

    def test_power_cover_mass_energy_identity(self):
        f = cover_field(2, 256)
        chart = cover_chart(2, 256)
        mass = graph_mass(f, chart)
        assert mass == pytest.approx(2 * np.pi + exact_vq_energy(2, 1.0) / 2, rel=0.01)

    def test_gram_identity_for_holomorphic_sheets(self):
        # det(I + J J^T) = (1 + |w'|^2)^2 for conformal planar sheets
        f = cover_field(2, 128)
        chart = cover_chart(2, 128)
        area, ok = graph_area_elements(chart)
        grad, _ = chart.gradient()
        e_i = (grad ** 2).sum(axis=(-3, -1))
        X, Y = f.domain.node_grids()
        away = ok & (np.hypot(X, Y) > 0.2)
        diff = np.abs(area - (1 + e_i / 2))[away]
        assert diff.max() < 1e-4

    def test_equality_exactly_at_conformal_points(self):
        # wherever the defect vanishes the area element meets 1 + |Df|^2/2
        dom = GridDomain.box((-1.0, -1.0), (1.0, 1.0), (128, 128))
        f = single_valued(dom, lambda x, y: (x * x - y * y, 2 * x * y))
        chart = sheet_align(f)
        d = conformality_defect_field(f, chart)
        area, ok = graph_area_elements(chart)
        grad, _ = chart.gradient()
        e_i = (grad ** 2).sum(axis=(-3, -1))
        sel = ok[..., None] & (d < 1e-10)
        sel[0, :] = sel[-1, :] = sel[:, 0] = sel[:, -1] = False
        gap = np.abs(1 + e_i / 2 - area)[sel[..., 0]]
        assert gap.max() < 1e-10

    def test_mass_dominates_flat_measure(self):
        # sqrt(det) >= 1 per sheet: mass >= Q |region| always
        for Q in (1, 2, 3):
            f = cover_field(Q, 128)
            chart = cover_chart(Q, 128)
            region = Region.ball((0.0, 0.0), 0.8)
            mass = graph_mass(f, chart, region)
            _, gvalid = chart.gradient()
            count = (region.node_mask(f.domain) & gvalid).sum()
            count += (region.node_mask(f.domain) & chart.branch_corner_mask()
                      & chart.valid).sum()
            assert mass >= Q * count * f.domain.cell_volume - 1e-12


class TestConformality:
    def test_squaring_map_defect_vanishes(self):
        # central differences are exact on quadratics; skip the one-sided rim
        dom = GridDomain.box((-1.0, -1.0), (1.0, 1.0), (256, 256))
        f = single_valued(dom, lambda x, y: (x * x - y * y, 2 * x * y))
        d = conformality_defect_field(f, sheet_align(f))
        assert np.nanmax(d[1:-1, 1:-1]) < 1e-10

    def test_projection_defect_one(self):
        J = np.array([[1.0, 0.0], [0.0, 0.0]])   # h(x, y) = (x, 0)
        assert conformality_defect(J) == pytest.approx(1.0, abs=1e-15)

    def test_anticonformal_defect_vanishes(self):
        J = np.array([[1.0, 0.0], [0.0, -1.0]])  # z -> conj(z)
        assert conformality_defect(J) == 0.0

    def test_pointwise_inequality_everywhere(self):
        for Q in (1, 2, 3):
            chart = cover_chart(Q, 128)
            area, ok = graph_area_elements(chart)
            grad, _ = chart.gradient()
            e_i = (grad ** 2).sum(axis=(-3, -1))
            gap = (1 + e_i / 2 - area)[ok]
            scale = (1 + e_i[ok])
            assert np.min(gap / scale) > -1e-12


class TestAreaEnergyGap:
    def test_projection_sheet_gap_density(self):
        # pointwise: 1 + 1/2 - sqrt(2) per unit area
        dom = GridDomain.box((0.0, 0.0), (1.0, 1.0), (64, 64))
        f = single_valued(dom, lambda x, y: (x, 0 * y))
        gap = area_energy_gap(f, sheet_align(f))
        assert gap == pytest.approx(1.5 - np.sqrt(2.0), rel=1e-12)

    def test_constant_zero(self):
        dom = GridDomain.box((0.0, 0.0), (1.0, 1.0), (16, 16))
        f = QGridField.from_values(dom, np.ones(dom.shape + (2, 2)))
        assert area_energy_gap(f, sheet_align(f)) == 0.0

    def test_holomorphic_gap_small(self):
        for Q in (2, 3):
            f = cover_field(Q, 256)
            chart = cover_chart(Q, 256)
            gap = area_energy_gap(f, chart)
            assert gap < 0.01 * graph_mass(f, chart)


class TestMassTaylor:
    def test_scaled_to_zero_is_flat(self):
        f = cover_field(2, 64)
        flat = f.scaled(0.0)
        chart = sheet_align(flat)
        mass = graph_mass(flat, chart)
        measure = chart.gradient()[1].sum() * f.domain.cell_volume
        assert mass == pytest.approx(2 * measure, rel=1e-12)

    def test_parabola_limit_and_order(self):
        # oracle: mass(lambda f) = int_B1 sqrt(1 + 4 lambda^2 x^2)
        dom = GridDomain.disk((0.0, 0.0), 1.0, 256)
        f = single_valued(dom, lambda x, y: (x * x, 0 * y))
        chart = sheet_align(f)
        fit = mass_taylor_fit(f, chart, None, [1.0, 0.5, 0.25, 0.125, 0.0625])
        dir_e = dirichlet_energy(f, chart)
        assert fit.limit == pytest.approx(dir_e / 2, rel=0.02)
        assert fit.limit == pytest.approx(np.pi / 2, rel=0.02)
        assert fit.remainder_order == pytest.approx(4.0, abs=1.0)
        lam = 1.0
        oracle = dblquad(lambda t, r: np.sqrt(1 + 4 * lam ** 2 * (r * np.cos(t)) ** 2) * r,
                         0, 1, 0, 2 * np.pi)[0]
        assert fit.values[0] == pytest.approx((oracle - np.pi) / lam ** 2, rel=0.02)

    def test_power_cover_exactness(self):
        # the scaled variety stays holomorphic: the ratio is lambda-independent
        f = cover_field(2, 256)
        chart = cover_chart(2, 256)
        fit = mass_taylor_fit(f, chart, None, [1.0, 0.5, 0.25, 0.125])
        assert np.all(np.abs(fit.values - np.pi) < 0.01 * np.pi)
        assert np.isinf(fit.remainder_order)

    def test_monotone_lambda_validation(self):
        f = cover_field(2, 64)
        with pytest.raises(ValueError):
            mass_taylor_fit(f, cover_chart(2, 64), None, [0.125, 0.25, 0.5, 1.0])
        with pytest.raises(ValueError):
            mass_taylor_fit(f, cover_chart(2, 64), None, [1.0, 0.5, 0.25])


class TestMu2:
    def test_flat_ratio_one(self):
        dom = GridDomain.box((-1.0,) * 4, (1.0,) * 4, 8)
        g = QGridField.from_values(dom, np.zeros(dom.shape + (1, 2)))
        assert mass_lower_bound_mu2(g, sheet_align(g)) == pytest.approx(1.0, abs=1e-12)

    def test_linear_graph(self):
        # w = z1: mass = 2|Omega|, Dir = 2|Omega|, ratio 4/3
        g = sample_mu2_cover("linear", 12)
        ratio = mass_lower_bound_mu2(g, sheet_align(g))
        assert ratio == pytest.approx(4.0 / 3.0, rel=1e-10)

    def test_sqrt_cover_inequality(self):
        g = sample_mu2_cover("sqrt", 12)
        ratio = mass_lower_bound_mu2(g, sheet_align(g))
        assert ratio >= 1.0 - 1e-9

    def test_dimension_validation(self):
        f = cover_field(2, 64)
        with pytest.raises(ValueError):
            mass_lower_bound_mu2(f, cover_chart(2, 64))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            sample_mu2_cover("cubic", 8)
