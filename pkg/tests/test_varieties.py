import numpy as np
import pytest
from scipy.integrate import quad

from qval import (
    BranchedCoverSpec,
    GridDomain,
    QGridField,
    branch_derivative,
    dirichlet_energy,
    exact_vq_energy,
    power_cover,
    product_extension,
    sample_variety,
    sheet_align,
    two_sqrt_cover,
)
from qval.varieties import BranchPointError, SamplingFailureError
from conftest import cover_field, cover_chart


class TestRoots:
    def test_identity_cover(self):
        f = cover_field(1, 64)
        X, Y = f.domain.node_grids()
        m = f.mask
        assert np.allclose(f.samples[m][:, 0, 0], X[m], atol=1e-12)
        assert np.allclose(f.samples[m][:, 0, 1], Y[m], atol=1e-12)

    def test_square_roots_of_one(self):
        w = power_cover(2).roots_at(np.array(1.0 + 0.0j))
        assert sorted(np.round(w.real, 12)) == [-1.0, 1.0]
        assert np.allclose(w.imag, 0.0, atol=1e-12)

    def test_cube_roots_of_eight(self):
        w = np.sort_complex(power_cover(3).roots_at(np.array(8.0 + 0.0j)))
        expect = np.sort_complex(2.0 * np.exp(2j * np.pi * np.arange(3) / 3))
        assert np.allclose(w, expect, atol=1e-10)

    def test_residuals_below_tolerance(self):
        spec = two_sqrt_cover(0.3)
        dom = GridDomain.disk((0.0, 0.0), 1.0, 64)
        f = sample_variety(spec, dom)
        X, Y = dom.node_grids()
        w = f.samples[..., 0] + 1j * f.samples[..., 1]
        res = np.abs(spec.poly_eval(X + 1j * Y, w))
        assert np.nanmax(res[f.mask]) < 1e-12

    def test_vieta_mean(self):
        for Q in (2, 3, 4):
            f = cover_field(Q, 64)
            means = f.samples.mean(axis=-2)
            assert np.nanmax(np.abs(means[f.mask])) < 1e-12

    def test_node_on_discriminant_rejected(self):
        dom = GridDomain.box((-1.0, -1.0), (1.0, 1.0), (16, 16),
                             offsets=(2.0 / 16 / 2, 2.0 / 16 / 2))
        with pytest.raises(SamplingFailureError):
            sample_variety(power_cover(2), dom)

    def test_planar_only(self):
        dom = GridDomain.box((0.0,) * 3, (1.0,) * 3, 8)
        with pytest.raises(ValueError):
            sample_variety(power_cover(2), dom)


class TestBranchDerivative:
    def test_square_root_at_one(self):
        assert branch_derivative(power_cover(2), 1.0, 1.0) == pytest.approx(0.5, abs=1e-14)

    def test_gradient_norm_identity(self):
        # sum over branches of 2|w'|^2 equals 1/|z| for the double cover
        spec = power_cover(2)
        for z in (0.5 + 0.2j, -0.7 + 0.1j, 0.3 - 0.9j):
            roots = spec.roots_at(np.array(z))
            total = sum(2 * abs(branch_derivative(spec, z, w)) ** 2 for w in roots)
            assert total == pytest.approx(1.0 / abs(z), rel=1e-12)

    def test_finite_difference_oracle(self):
        # continue the branch to z +- h and difference it
        spec = power_cover(3)
        z, h = 0.4 + 0.3j, 1e-5
        w0 = spec.roots_at(np.array(z))[0]
        wp = min(spec.roots_at(np.array(z + h)), key=lambda w: abs(w - w0))
        wm = min(spec.roots_at(np.array(z - h)), key=lambda w: abs(w - w0))
        fd = (wp - wm) / (2 * h)
        assert abs(branch_derivative(spec, z, w0) - fd) < 1e-6

    def test_branch_point_error(self):
        with pytest.raises(BranchPointError):
            branch_derivative(power_cover(2), 0.0, 0.0)


class TestExactEnergy:
    def test_identity_map(self):
        assert exact_vq_energy(1, 1.0) == pytest.approx(2 * np.pi, abs=1e-14)

    @pytest.mark.parametrize("Q,r", [(2, 0.5), (3, 1.0), (4, 0.25)])
    def test_radial_quadrature_oracle(self, Q, r):
        oracle = quad(lambda s: (2.0 / Q) * s ** (2.0 / Q - 2) * 2 * np.pi * s, 0, r)[0]
        assert exact_vq_energy(Q, r) == pytest.approx(oracle, rel=1e-10)

    def test_value_at_one_is_q_independent(self):
        for Q in (1, 2, 3, 4, 7):
            assert exact_vq_energy(Q, 1.0) == pytest.approx(2 * np.pi, abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            exact_vq_energy(0, 1.0)
        with pytest.raises(ValueError):
            exact_vq_energy(2, -1.0)


class TestProductExtension:
    def test_constant_stays_constant(self):
        dom = GridDomain.box((0.0, 0.0), (1.0, 1.0), (12, 12))
        vals = np.full(dom.shape + (2, 2), 1.5)
        vals[..., 1, :] = -0.5
        g = QGridField.from_values(dom, vals)
        f = product_extension(g, 4, 0.0, 2.0, 8)
        assert f.domain.m == 4
        assert np.allclose(f.samples[f.mask].reshape(-1, 2, 2)[:, 0, :], -0.5)

    def test_energy_factorizes_exactly(self):
        dom = GridDomain.box((0.0, 0.0), (1.0, 1.0), (16, 16))
        X, Y = dom.node_grids()
        vals = np.zeros(dom.shape + (2, 2))
        vals[..., 0, 0] = X * X
        vals[..., 0, 1] = Y
        vals[..., 1, 0] = 4.0 + Y * X
        vals[..., 1, 1] = 7.0
        g = QGridField.from_values(dom, vals)
        dir2 = dirichlet_energy(g, sheet_align(g))
        f = product_extension(g, 5, 0.0, 1.0, 8)   # transverse measure 1^3
        dir5 = dirichlet_energy(f, sheet_align(f))
        assert dir5 == pytest.approx(dir2, rel=1e-12)

    def test_requires_m3(self):
        g = cover_field(2, 64)
        with pytest.raises(ValueError):
            product_extension(g, 2)

    def test_disk_base_becomes_cylinder(self):
        g = cover_field(2, 64)
        f = product_extension(g, 3, 0.0, 1.0, 8)
        assert f.domain.kind == "cylinder"
        # in-plane nodes coincide with the base grid
        assert np.allclose(f.domain.axis_coords(0), g.domain.axis_coords(0))
        dir2 = dirichlet_energy(g, cover_chart(2, 64))
        dir3 = dirichlet_energy(f, sheet_align(f), singular_correction=False)
        plain2 = dirichlet_energy(g, cover_chart(2, 64), singular_correction=False)
        assert dir3 == pytest.approx(plain2, rel=1e-10)
        assert dir2 == pytest.approx(2 * np.pi, rel=0.05)


class TestSpecSerialization:
    def test_json_roundtrip(self):
        spec = two_sqrt_cover(0.4)
        again = BranchedCoverSpec.from_json(spec.to_json())
        assert again.Q == spec.Q and again.coeffs == spec.coeffs

    def test_power_shorthand(self):
        spec = BranchedCoverSpec.from_string("power:3")
        assert spec.Q == 3
        assert spec.coeffs[0] == (0.0, -1.0)

    def test_monic_validation(self):
        with pytest.raises(ValueError):
            BranchedCoverSpec(2, ((0.0,),))
