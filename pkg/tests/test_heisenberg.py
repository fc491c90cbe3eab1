"""
ハイゼンベルク群の作用・軌道ステンシル・滑らかさプローブのユニットテスト
"""

import unittest

import numpy as np

from utils.error_handler import ValidationError
from utils.grid import SampledFn, make_grid
from utils.heisenberg import (
    OrbitStencil,
    conjugate,
    covariance_residual,
    default_probe_step,
    modulate,
    orbit_b,
    smoothness_probe,
    translate,
    translation_matrix,
)
from utils.module_space import FiberSet, ModuleVec, embed_scalar, module_norm
from utils.quantize import ModuleOp, op_norm, quantize
from utils.symbols import build_family, sample_family, smoothing_image


def gaussian_vec(grid, fibers=None):
    fibers = fibers or FiberSet.scalar()
    values = np.exp(-0.5 * np.sum(grid.nodes() ** 2, axis=-1))
    return embed_scalar(SampledFn(grid, values), fibers)


class TestGroupAction(unittest.TestCase):
    """平行移動と変調"""

    def setUp(self):
        self.grid = make_grid(1, 128, 8.0)
        self.f = gaussian_vec(self.grid)

    def test_aligned_translation_is_roll(self):
        out = translate(self.f, self.grid.h).values[0]
        self.assertLessEqual(np.max(np.abs(out - np.roll(self.f.values[0], 1))), 1e-12)

    def test_unaligned_translation(self):
        out = translate(self.f, 0.3).values[0]
        expected = np.exp(-0.5 * (self.grid.x_axis - 0.3) ** 2)
        self.assertLessEqual(np.max(np.abs(out - expected)), 1e-10)

    def test_unitary(self):
        self.assertAlmostEqual(module_norm(translate(self.f, 0.37)), module_norm(self.f), places=12)
        self.assertAlmostEqual(module_norm(modulate(self.f, 1.3)), module_norm(self.f), places=12)

    def test_weyl_commutation(self):
        """T_z M_ζ = e^{-iζz} M_ζ T_z"""
        z, zeta = 0.4, 1.1
        lhs = translate(modulate(self.f, zeta), z).values
        rhs = np.exp(-1j * zeta * z) * modulate(translate(self.f, z), zeta).values
        self.assertLessEqual(np.max(np.abs(lhs - rhs)), 1e-10)

    def test_translation_matrix_matches_translate(self):
        grid = make_grid(1, 32, 6.0)
        f = gaussian_vec(grid)
        matrix = translation_matrix(grid, 0.21)
        self.assertLessEqual(np.max(np.abs(matrix @ f.values[0] - translate(f, 0.21).values[0])), 1e-12)

    def test_dimension_checked(self):
        with self.assertRaises(ValidationError):
            translate(self.f, [0.1, 0.2])


class TestConjugate(unittest.TestCase):
    """A_{z,ζ} と共変性"""

    def setUp(self):
        self.grid = make_grid(1, 64, 8.0)
        self.a = sample_family(build_family("gaussian", {}, 1), self.grid, FiberSet.scalar())
        self.op = quantize(self.a)

    def test_zero_shift_is_exact(self):
        np.testing.assert_array_equal(conjugate(self.op, 0.0, 0.0).matrices, self.op.matrices)

    def test_aligned_covariance(self):
        """conjugate(O(a), z, ζ) = O(a(· + z, · + ζ))"""
        residual = covariance_residual(self.a, self.grid.h, self.grid.dxi)
        self.assertLessEqual(residual, 1e-9)
        residual = covariance_residual(self.a, -3 * self.grid.h, 2 * self.grid.dxi)
        self.assertLessEqual(residual, 1e-9)

    def test_multiplier_is_translation_invariant(self):
        a = sample_family(build_family("multiplier", {"profile": {"family": "gaussian"}}, 1),
                          self.grid, FiberSet.scalar())
        op = quantize(a)
        self.assertLessEqual(op_norm(conjugate(op, 5 * self.grid.h, 0.0) - op), 1e-10)

    def test_group_property(self):
        zero = 0.0
        twice = conjugate(conjugate(self.op, 0.3, zero), 0.45, zero)
        once = conjugate(self.op, 0.75, zero)
        self.assertLessEqual(op_norm(twice - once), 1e-10)

    def test_norm_preserved(self):
        moved = conjugate(self.op, 0.3, -0.8)
        self.assertAlmostEqual(op_norm(moved), op_norm(self.op), delta=1e-6)

    def test_two_dimensional_aligned_covariance(self):
        grid = make_grid(2, 32, 7.0)
        a = sample_family(build_family("gaussian", {}, 2), grid, FiberSet.scalar())
        residual = covariance_residual(a, [grid.h, -grid.h], [0.0, grid.dxi])
        self.assertLessEqual(residual, 1e-9)


class TestOrbitStencil(unittest.TestCase):
    """(1 + ∂)² の差分ステンシル"""

    def test_second_order_coefficients(self):
        stencil = OrbitStencil(1.0, 2)
        self.assertEqual(stencil.first_derivative(), {-1: -0.5, 1: 0.5})
        self.assertEqual(stencil.second_derivative(), {-1: 1.0, 0: -2.0, 1: 1.0})
        self.assertEqual(stencil.coefficients(), {-1: 0.0, 0: -1.0, 1: 2.0})

    def test_fourth_order_is_exact_on_quartics(self):
        """5 点ステンシルは 4 次多項式の 1, 2 階微分を厳密に再現"""
        stencil = OrbitStencil(0.5, 4)
        p = np.polynomial.Polynomial([0.3, -1.0, 2.0, 0.5, -0.25])
        t = 0.7
        first = sum(c * p(t + k * 0.5) for k, c in stencil.first_derivative().items())
        second = sum(c * p(t + k * 0.5) for k, c in stencil.second_derivative().items())
        self.assertAlmostEqual(first, p.deriv(1)(t), places=10)
        self.assertAlmostEqual(second, p.deriv(2)(t), places=10)

    def test_tensor_terms(self):
        stencil = OrbitStencil(0.25, 2)
        terms = stencil.terms(2)
        self.assertEqual(len(terms), 9)
        self.assertAlmostEqual(sum(c for _, c in terms), 1.0)
        self.assertEqual(len(OrbitStencil(0.25, 4).terms(4)), 5 ** 4)

    def test_invalid_stencil(self):
        with self.assertRaises(ValidationError):
            OrbitStencil(0.0, 2)
        with self.assertRaises(ValidationError):
            OrbitStencil(0.1, 3)


class TestOrbitB(unittest.TestCase):
    """B_{z,ζ} の差分実現"""

    def setUp(self):
        self.grid = make_grid(1, 32, 6.0)
        self.fibers = FiberSet.numbered(2)

    def test_identity_orbit_is_identity(self):
        """恒等作用素の軌道は定数なので B = I"""
        identity = ModuleOp.identity(self.fibers, self.grid)
        B = orbit_b(identity, 0.5, -0.5)
        self.assertLessEqual(np.max(np.abs(B.matrices - identity.matrices)), 1e-10)

    def test_linearity(self):
        rng = np.random.default_rng(8)
        shape = (2, 32, 32)
        A = ModuleOp(self.fibers, self.grid, rng.standard_normal(shape))
        C = ModuleOp(self.fibers, self.grid, rng.standard_normal(shape))
        combined = orbit_b(A.scale(2.0) + C.scale(-1.5), 0.0, 0.3)
        separate = orbit_b(A, 0.0, 0.3).scale(2.0) + orbit_b(C, 0.0, 0.3).scale(-1.5)
        self.assertLessEqual(np.max(np.abs(combined.matrices - separate.matrices)), 1e-10)

    def test_workers_do_not_change_result(self):
        a = sample_family(build_family("gaussian", {}, 1), self.grid, self.fibers)
        op = quantize(a)
        serial = orbit_b(op, self.grid.h, 0.2)
        parallel = orbit_b(op, self.grid.h, 0.2, workers=3)
        np.testing.assert_array_equal(serial.matrices, parallel.matrices)

    def test_tiny_step_rejected(self):
        identity = ModuleOp.identity(self.fibers, self.grid)
        with self.assertRaises(ValidationError):
            orbit_b(identity, 0.0, 0.0, OrbitStencil(1e-6 * self.grid.h))

    def test_default_stencil_matches_smoothing_image(self):
        """δ = h の既定ステンシルで ‖B_{0,0} - O(b)‖ ≤ 10⁻³ (N = 128)"""
        grid = make_grid(1, 128, 8.0)
        a = sample_family(build_family("gaussian", {}, 1), grid, FiberSet.scalar())
        B = orbit_b(quantize(a), 0.0, 0.0)
        expected = quantize(smoothing_image(a))
        self.assertLessEqual(op_norm(B - expected), 1e-3)


class TestSmoothnessProbe(unittest.TestCase):
    """軌道の滑らかさ診断"""

    def test_default_step(self):
        self.assertAlmostEqual(default_probe_step(make_grid(1, 128, 8.0)), 0.5)
        self.assertAlmostEqual(default_probe_step(make_grid(1, 64, 8.0)), 1.0)
        coarse = make_grid(2, 24, 6.14)
        self.assertAlmostEqual(default_probe_step(coarse), coarse.h)

    def test_identity_is_consistent(self):
        grid = make_grid(1, 32, 6.0)
        report = smoothness_probe(ModuleOp.identity(FiberSet.scalar(), grid))
        self.assertTrue(report.consistent)
        self.assertEqual(report.flag, "consistent with C^2")
        self.assertEqual(len(report.rows), 4)
        self.assertLessEqual(report.max_derivative(), 1e-12)

    def test_directions_subset(self):
        grid = make_grid(2, 8, 3.0)
        report = smoothness_probe(ModuleOp.identity(FiberSet.scalar(), grid), max_order=1, directions=("z",))
        self.assertEqual([row.direction for row in report.rows], ["z1", "z2"])

    def test_quantized_gaussian_has_finite_derivatives(self):
        grid = make_grid(1, 64, 8.0)
        op = quantize(sample_family(build_family("gaussian", {}, 1), grid, FiberSet.scalar()))
        report = smoothness_probe(op)
        for row in report.rows:
            self.assertTrue(np.all(np.isfinite(row.derivative_norms)))
            self.assertGreater(row.derivative_norms[0], 0.0)

    def test_steep_sigmoid_is_not_consistent(self):
        """幅 0.05 の tanh の掛け算は刻みより鋭く、差分の比が 2 次の範囲に入らない"""
        grid = make_grid(1, 64, 8.0)
        family = build_family("multiplication", {"profile": {"family": "sigmoid", "width": 0.05}}, 1)
        report = smoothness_probe(quantize(sample_family(family, grid, FiberSet.scalar())))
        self.assertFalse(report.consistent)
        self.assertEqual(report.flag, "not consistent")
        z_rows = [row for row in report.rows if row.direction == "z1"]
        self.assertTrue(all(row.ratio < 1.0 for row in z_rows))

    def test_invalid_order(self):
        grid = make_grid(1, 16, 4.0)
        with self.assertRaises(ValidationError):
            smoothness_probe(ModuleOp.identity(FiberSet.scalar(), grid), max_order=3)


if __name__ == '__main__':
    unittest.main()
