import numpy as np
import pytest

from qval import (
    QPoint,
    DimensionMismatchError,
    OracleCapacityError,
    metric_G,
    metric_G_bruteforce,
    eta_mean,
    tau_translate,
)


def qp(*rows):
    return QPoint(np.array(rows, dtype=float))


def random_qpoint(rng, q, n, scale=1.0):
    return QPoint(rng.normal(0.0, scale, size=(q, n)))


class TestMetric:
    def test_repeated_points_single_matching(self):
        a = qp((0, 0), (0, 0))
        b = qp((3, 4), (3, 4))
        assert metric_G(a, b) == pytest.approx(np.sqrt(50), abs=1e-12)

    def test_permutation_invariance(self):
        a = qp((0, 0), (1, 0))
        b = qp((1, 0), (0, 0))
        assert metric_G(a, b) == 0.0
        assert a == b
        assert hash(a) == hash(b)

    def test_crossed_matching_beats_identity(self):
        # identity pairing costs 1 + 1 = 2; crossed costs 9 + 1 = 10
        a = qp((0, 0), (2, 0))
        b = qp((1, 0), (3, 0))
        assert metric_G(a, b) == pytest.approx(np.sqrt(2), abs=1e-12)
        assert metric_G_bruteforce(a, b) == pytest.approx(np.sqrt(2), abs=1e-12)

    def test_self_distance_zero(self, rng):
        for _ in range(20):
            a = random_qpoint(rng, 4, 3)
            assert metric_G(a, a) == 0.0
            assert metric_G_bruteforce(a, a) == 0.0

    def test_oracle_agreement_random(self, rng):
        for _ in range(500):
            q = int(rng.integers(1, 7))
            n = int(rng.integers(1, 5))
            a = random_qpoint(rng, q, n)
            b = random_qpoint(rng, q, n)
            assert abs(metric_G(a, b) - metric_G_bruteforce(a, b)) < 1e-12

    def test_symmetry(self, rng):
        for _ in range(50):
            a = random_qpoint(rng, 5, 2)
            b = random_qpoint(rng, 5, 2)
            assert metric_G(a, b) == pytest.approx(metric_G(b, a), abs=1e-12)

    def test_triangle_inequality(self, rng):
        for _ in range(200):
            q = int(rng.integers(1, 6))
            a, b, c = (random_qpoint(rng, q, 3) for _ in range(3))
            assert metric_G(a, c) <= metric_G(a, b) + metric_G(b, c) + 1e-12

    def test_translation_and_rotation_invariance(self, rng):
        for _ in range(50):
            a = random_qpoint(rng, 4, 3)
            b = random_qpoint(rng, 4, 3)
            d = metric_G(a, b)
            P = rng.normal(size=3)
            assert metric_G(tau_translate(a, P), tau_translate(b, P)) == pytest.approx(d, abs=1e-10)
            O, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            ra = QPoint(a.points @ O.T)
            rb = QPoint(b.points @ O.T)
            assert metric_G(ra, rb) == pytest.approx(d, abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            metric_G(qp((0, 0)), qp((0, 0), (1, 1)))
        with pytest.raises(DimensionMismatchError):
            metric_G(qp((0, 0)), qp((0, 0, 0)))

    def test_oracle_capacity(self, rng):
        a = random_qpoint(rng, 9, 2)
        b = random_qpoint(rng, 9, 2)
        with pytest.raises(OracleCapacityError):
            metric_G_bruteforce(a, b)


class TestEtaMean:
    def test_two_points(self):
        assert np.allclose(eta_mean(qp((0, 0), (2, 0))), [1, 0])

    def test_multiplicity(self):
        p = qp((3, -1), (3, -1), (3, -1))
        assert np.allclose(eta_mean(p), [3, -1])

    def test_roots_of_unity_center(self):
        # the w^(Q-1) coefficient of w^Q - z vanishes, so the roots sum to 0
        for Q in (2, 3, 5):
            z = 0.7 + 1.3j
            ws = np.abs(z) ** (1 / Q) * np.exp(
                1j * (np.angle(z) + 2 * np.pi * np.arange(Q)) / Q)
            p = QPoint(np.stack([ws.real, ws.imag], axis=-1))
            assert np.linalg.norm(eta_mean(p)) < 1e-12

    def test_mean_controlled_by_metric(self, rng):
        # Cauchy-Schwarz over the optimal matching
        for _ in range(100):
            q = int(rng.integers(1, 6))
            a = random_qpoint(rng, q, 2)
            b = random_qpoint(rng, q, 2)
            lhs = np.linalg.norm(eta_mean(a) - eta_mean(b))
            assert lhs <= metric_G(a, b) / np.sqrt(q) + 1e-12


class TestTau:
    def test_example(self):
        shifted = tau_translate(qp((1, 0), (3, 0)), np.array([1.0, 0.0]))
        assert shifted == qp((0, 0), (2, 0))

    def test_centering(self, rng):
        a = random_qpoint(rng, 5, 3)
        centered = tau_translate(a, eta_mean(a))
        assert np.linalg.norm(eta_mean(centered)) < 1e-12

    def test_identity(self, rng):
        a = random_qpoint(rng, 3, 2)
        assert tau_translate(a, np.zeros(2)) == a

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            tau_translate(qp((0, 0)), np.zeros(3))


class TestQPoint:
    def test_canonical_order(self):
        p = QPoint(np.array([[2.0, 0.0], [1.0, 5.0], [1.0, -1.0]]))
        assert np.array_equal(p.points[:, 0], [1.0, 1.0, 2.0])
        assert p.points[0, 1] == -1.0

    def test_json_roundtrip(self, rng):
        p = random_qpoint(rng, 4, 3)
        assert QPoint.from_json(p.to_json()) == p

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            QPoint(np.array([[np.nan, 0.0]]))
