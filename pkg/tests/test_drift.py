import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from coulombgas.drift import (CorrectionTable, DriftSpec, elliptic_drift, exterior_field,
                              finite_drift, taylor_correction_constants, taylor_residual,
                              truncated_drift)
from coulombgas.errors import DomainError
from coulombgas.kernels import MultiIndex, kernel_partial, multi_indices_upto
from coulombgas.model import (CoefficientField, ConfinementField, GibbsModel, gaussian_model,
                              periodic_model, radii)


def ring_points(rng, n, d, rmin, rmax):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.uniform(rmin, rmax, (n, 1))


def disk_grid(q, pitch, d=2):
    t = np.arange(-q, q + pitch / 2, pitch)
    g = np.stack(np.meshgrid(*[t] * d, indexing="ij"), axis=-1).reshape(-1, d)
    return g[radii(g) <= q]


class TestFiniteDrift:
    def test_examples(self):
        m = GibbsModel(2, 2.0, 2, ConfinementField("zero"))
        pos = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert np.array_equal(finite_drift(m, 0, pos), [2.0, 0.0])
        g = gaussian_model(1, beta=2.0, c=1.0)
        x = np.array([[0.3, -0.4]])
        assert np.allclose(finite_drift(g, 0, x), -2 * 2.0 * x[0], atol=1e-15)

    def test_equals_log_density_gradient_row(self):
        rng = np.random.default_rng(0)
        for m in (gaussian_model(8), periodic_model(8), GibbsModel(3, 1.2, 8)):
            pos = m.domain.wrap(rng.uniform(-1.4, 1.4, (8, m.dim)))
            full = m.log_density_gradient(pos)
            for i in range(8):
                assert np.array_equal(finite_drift(m, i, pos), full[i])

    def test_errors(self):
        m = gaussian_model(2)
        with pytest.raises(DomainError):
            finite_drift(m, 0, np.array([[1.0, 0], [1.0, 0]]))
        with pytest.raises(DomainError):
            finite_drift(m, 5, np.array([[1.0, 0], [0.0, 0]]))


class TestCorrectionConstants:
    def test_empty_exterior(self):
        t = taylor_correction_constants(np.zeros((0, 2)), 2.0, 3)
        assert np.array_equal(t.values, np.zeros_like(t.values))
        assert len(t.indices) == 10

    def test_antipodal_pair(self):
        y = np.array([[3.0, 1.0], [-3.0, -1.0]])
        t = taylor_correction_constants(y, 2.0, 2)
        assert np.array_equal(t[(0, 0)], [0.0, 0.0])
        # odd orders cancel too, even orders double
        assert np.allclose(t[(1, 0)], 2 * taylor_correction_constants(y[:1], 2.0, 2)[(1, 0)])

    def test_single_point(self):
        t = taylor_correction_constants(np.array([[3.0, 0.0]]), 2.0, 0)
        assert np.allclose(t[(0, 0)], [-1 / 3, 0.0], atol=1e-16)

    def test_definition(self):
        rng = np.random.default_rng(1)
        for d in (2, 3):
            ys = ring_points(rng, 15, d, 2.5, 6.0)
            t = taylor_correction_constants(ys, 2.0, 3)
            assert set(t.indices) == set(multi_indices_upto(d, 3))
            for idx in t.indices:
                ref = np.array([sum(kernel_partial(d, c, idx, -y) for y in ys)
                                for c in range(d)]) / idx.factorial
                assert np.allclose(t[idx], ref, rtol=1e-12, atol=1e-15)

    def test_first_order_matches_field_derivative(self):
        # independent oracle: central differences of the exact exterior field at 0
        rng = np.random.default_rng(2)
        ys = ring_points(rng, 20, 2, 3.0, 8.0)
        t = taylor_correction_constants(ys, 2.0, 2)
        h = 1e-4
        for k, idx in enumerate([(1, 0), (0, 1)]):
            e = np.eye(2)[k] * h
            fd = (exterior_field(ys, e) - exterior_field(ys, -e)) / (2 * h)
            assert np.allclose(t[idx], fd, atol=1e-9)
        # second order: (1/2) f''
        e = np.array([h, 0.0])
        fd2 = (exterior_field(ys, e) - 2 * exterior_field(ys, np.zeros(2))
               + exterior_field(ys, -e)) / h**2
        assert np.allclose(t[(2, 0)], 0.5 * fd2, atol=1e-6)

    def test_rejects_interior_points(self):
        with pytest.raises(DomainError):
            taylor_correction_constants(np.array([[1.0, 0.0]]), 2.0, 1)
        with pytest.raises(DomainError):
            taylor_correction_constants(np.array([[2.0, 0.0]]), 2.0, 1)

    def test_order_independent_of_input_order(self):
        rng = np.random.default_rng(3)
        ys = ring_points(rng, 30, 2, 2.5, 9.0)
        a = taylor_correction_constants(ys, 2.0, 2)
        b = taylor_correction_constants(ys[rng.permutation(30)], 2.0, 2)
        assert np.array_equal(a.values, b.values)


class TestResidual:
    def test_zero_at_origin_and_for_empty_exterior(self):
        rng = np.random.default_rng(4)
        ys = ring_points(rng, 25, 2, 3.0, 10.0)
        for l0 in range(4):
            assert np.array_equal(taylor_residual(ys, 3.0, l0, np.zeros(2)), np.zeros(2))
        assert np.array_equal(taylor_residual(np.zeros((0, 2)), 3.0, 2, np.array([1.0, 2.0])),
                              np.zeros(2))

    def test_shrinks_with_order(self):
        y = np.array([[4.0, 0.0]])
        grid = disk_grid(1.0, 0.05)
        sups = [max(np.linalg.norm(taylor_residual(y, 1.0, l0, x)) for x in grid)
                for l0 in (1, 2, 3)]
        assert sups[1] <= sups[0] / 2 and sups[2] <= sups[1] / 2

    def test_vanishes_at_rate(self):
        # residual is O(|x|^(l0+1)) near the origin
        rng = np.random.default_rng(5)
        ys = ring_points(rng, 10, 2, 3.0, 6.0)
        u = np.array([0.6, 0.8])
        for l0 in (0, 1, 2):
            r1 = np.linalg.norm(taylor_residual(ys, 3.0, l0, 0.02 * u))
            r2 = np.linalg.norm(taylor_residual(ys, 3.0, l0, 0.01 * u))
            assert r1 / r2 == pytest.approx(2.0 ** (l0 + 1), rel=0.05)

    def test_exact_minus_polynomial(self):
        rng = np.random.default_rng(6)
        ys = ring_points(rng, 10, 3, 2.0, 5.0)
        x = np.array([0.3, -0.2, 0.5])
        t = taylor_correction_constants(ys, 2.0, 2)
        direct = sum(y_field for y_field in (x - ys) / radii(x - ys)[:, None] ** 3)
        assert np.allclose(taylor_residual(ys, 2.0, 2, x), direct - t.polynomial(x), atol=1e-14)

    def test_precondition(self):
        with pytest.raises(DomainError):
            taylor_residual(np.array([[5.0, 0.0]]), 2.0, 1, np.array([3.0, 0.0]))

    def test_correction_terms_vanish_beyond_outermost_point(self):
        rng = np.random.default_rng(7)
        pos = ring_points(rng, 40, 2, 0.0, 5.0)
        R = float(radii(pos).max()) + 0.1
        ext = pos[radii(pos) > R]
        assert np.array_equal(taylor_correction_constants(ext, R, 3, 2).values, np.zeros((10, 2)))
        assert np.array_equal(taylor_residual(ext, R, 3, np.array([0.5, 0.5])), np.zeros(2))


class TestTruncatedDrift:
    def setup_method(self):
        rng = np.random.default_rng(8)
        self.pos = ring_points(rng, 60, 2, 0.0, 6.0)
        self.pos[0] = [0.1, -0.2]
        self.model = gaussian_model(60, beta=2.0, c=0.8)

    def test_decomposition_is_bit_exact(self):
        m, pos, R, l0 = self.model, self.pos, 3.0, 2
        for i in np.nonzero(radii(pos) <= R)[0][:8]:
            corr = truncated_drift(m, DriftSpec(R, l0, "corrected"), i, pos)
            naive = truncated_drift(m, DriftSpec(R, l0, "naive"), i, pos)
            ext = pos[radii(pos) > R]
            table = taylor_correction_constants(ext, R, l0, 2)
            extra = table.polynomial(pos[i]) + taylor_residual(ext, R, l0, pos[i], table)
            assert np.array_equal(corr, naive + m.beta * extra)

    def test_naive_formula(self):
        m, pos, R = self.model, self.pos, 2.5
        i = 3
        x = pos[i]
        others = np.delete(pos, i, axis=0)
        inside = others[radii(others) <= R]
        ref = m.beta * (-m.confinement.gradient(x)
                        + np.sum((x - inside) / radii(x - inside)[:, None] ** 2, axis=0))
        assert np.allclose(truncated_drift(m, DriftSpec(R, 2, "naive"), i, pos), ref, atol=1e-12)

    def test_translation_invariant_formula(self):
        m, pos, R = self.model, self.pos, 2.0
        i = 5
        x = pos[i]
        others = np.delete(pos, i, axis=0)
        near = others[radii(others - x) <= R]
        ref = m.beta * np.sum((x - near) / radii(x - near)[:, None] ** 2, axis=0)
        got = truncated_drift(m, DriftSpec(R, 2, "translation_invariant"), i, pos)
        assert np.allclose(got, ref, atol=1e-12)

    def test_whole_config_inside(self):
        m, pos = self.model, self.pos
        R = float(radii(pos).max()) + 1.0
        for i in (0, 10, 40):
            corr = truncated_drift(m, DriftSpec(R, 2, "corrected"), i, pos)
            naive = truncated_drift(m, DriftSpec(R, 2, "naive"), i, pos)
            assert np.array_equal(corr, naive)
            assert np.allclose(corr, finite_drift(m, i, pos), rtol=1e-12, atol=1e-12)

    def test_corrected_recovers_full_drift(self):
        # the exact residual makes the corrected drift the full-sum drift for any R
        m, pos = self.model, self.pos
        for R in (1.0, 2.0, 4.0):
            corr = truncated_drift(m, DriftSpec(R, 2, "corrected"), 0, pos)
            assert np.allclose(corr, finite_drift(m, 0, pos), rtol=1e-10, atol=1e-10)

    def test_finite_mode(self):
        m, pos = self.model, self.pos
        assert np.array_equal(truncated_drift(m, DriftSpec(1.0, mode="finite"), 7, pos),
                              finite_drift(m, 7, pos))

    def test_errors(self):
        m, pos = self.model, self.pos
        outside = int(np.argmax(radii(pos)))
        with pytest.raises(DomainError):
            truncated_drift(m, DriftSpec(1.0, 2, "corrected"), outside, pos)
        bad = pos.copy()
        bad[1] = bad[0]
        with pytest.raises(DomainError):
            truncated_drift(m, DriftSpec(3.0, 2, "naive"), 0, bad)
        with pytest.raises(DomainError):
            DriftSpec(0.0)
        with pytest.raises(DomainError):
            DriftSpec(1.0, 99)
        with pytest.raises(DomainError):
            DriftSpec(1.0, mode="other")


class TestEllipticDrift:
    def test_identity(self):
        d = np.array([1.5, -2.0])
        assert np.array_equal(elliptic_drift(CoefficientField(), d, np.zeros(2)), 0.5 * d)

    def test_divergence_only(self):
        a = CoefficientField("diagonal", 0.3)
        x = np.array([0.7, -1.1])
        assert np.allclose(elliptic_drift(a, np.zeros(2), x), 0.5 * 0.3 * np.cos(x))

    def test_general(self):
        a = CoefficientField("diagonal", -0.2)
        x = np.array([[0.7, -1.1], [2.0, 0.4]])
        d = np.array([[1.0, 2.0], [-3.0, 0.5]])
        ref = 0.5 * (a.divergence(x) + np.einsum("nij,nj->ni", a.matrix(x), d))
        assert np.allclose(elliptic_drift(a, d, x), ref, atol=1e-15)


class TestPairForces:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
    def test_antisymmetry(self, v):
        x, y = np.array(v[:2]), np.array(v[2:])
        # below ~1e-150 the squared separation underflows and counts as coincident
        assume(np.linalg.norm(x - y) > 1e-150)
        assert np.array_equal(exterior_field(y[None], x), -exterior_field(x[None], y))

    def test_underflowing_separation_is_coincident(self):
        with pytest.raises(DomainError):
            exterior_field(np.array([[0.0, 2.5e-278]]), np.zeros(2))

    def test_table_lookup(self):
        t = CorrectionTable(2, 1.0, 1, tuple(multi_indices_upto(2, 1)), np.arange(6.0).reshape(3, 2))
        assert np.array_equal(t[MultiIndex((0, 1))], [4.0, 5.0])
        assert np.allclose(t.polynomial(np.array([2.0, 3.0])), [0 + 2 * 2 + 3 * 4, 1 + 2 * 3 + 3 * 5])
        assert math.isclose(t[(1, 0)][0], 2.0)
