"""
量子化・作用素代数・べき乗法ノルムのユニットテスト
"""

import unittest
from unittest.mock import patch

import numpy as np

from utils.error_handler import GridMismatchError, ValidationError
from utils.grid import SampledFn, forward_transform, inverse_transform, make_grid
from utils.module_space import FiberSet, ModuleVec, embed_scalar, random_module_vec, tensor
from utils.quantize import (
    QUANTIZED_PREFIX,
    ModuleOp,
    adjoint,
    apply,
    commutator,
    compose,
    cv_bound_report,
    direct_apply_oracle,
    fiber_op,
    is_quantized,
    largest_singular_value,
    op_norm,
    op_norm_report,
    quantize,
    symbol_apply,
    tensor_extend,
)
from utils.symbols import build_family, sample_family


def family_symbol(name, params, grid, fibers=None, amplitudes=None):
    fibers = fibers or FiberSet.scalar()
    return sample_family(build_family(name, params, grid.n, amplitudes), grid, fibers)


class TestQuantize(unittest.TestCase):
    """閉形式の作用を持つシンボル"""

    def setUp(self):
        self.grid = make_grid(1, 128, 8.0)
        self.x = self.grid.x_axis
        self.fibers = FiberSet.scalar()
        self.f = embed_scalar(SampledFn(self.grid, np.exp(-self.x ** 2 / 2)), self.fibers)

    def test_constant_symbol_is_identity(self):
        op = quantize(family_symbol("constant", {}, self.grid))
        np.testing.assert_allclose(op.matrices[0], np.eye(128), atol=1e-12)

    def test_multiplication_symbol(self):
        """ξ に依存しないシンボルは掛け算作用素"""
        a = family_symbol("multiplication", {"profile": {"family": "gaussian", "width": 1.5}}, self.grid)
        op = quantize(a)
        m = np.exp(-0.5 * (self.x / 1.5) ** 2)
        np.testing.assert_allclose(op.matrices[0], np.diag(m), atol=1e-12)
        self.assertLessEqual(np.max(np.abs(apply(op, self.f).values[0] - m * self.f.values[0])), 1e-10)

    def test_multiplier_symbol(self):
        """x に依存しないシンボルはフーリエ乗数"""
        a = family_symbol("multiplier", {"profile": {"family": "gaussian", "width": 2.0}}, self.grid)
        psi = np.exp(-0.5 * (self.grid.xi_axis / 2.0) ** 2)
        expected = inverse_transform(psi * forward_transform(self.f.values, self.grid), self.grid)
        self.assertLessEqual(np.max(np.abs(apply(quantize(a), self.f).values - expected)), 1e-10)

    def test_grid_step_shift(self):
        """e^{ihξ} は 1 ステップの平行移動"""
        a = family_symbol("multiplier", {"profile": {"family": "plane_wave", "frequency": self.grid.h}}, self.grid)
        out = apply(quantize(a), self.f).values[0]
        self.assertLessEqual(np.max(np.abs(out - np.roll(self.f.values[0], -1))), 1e-10)

    def test_matrix_fft_and_oracle_paths_agree(self):
        a = family_symbol("gaussian", {"width_x": 1.3, "center_xi": 0.4}, self.grid)
        matrix_path = apply(quantize(a), self.f).values
        fft_path = symbol_apply(a, self.f).values
        oracle = direct_apply_oracle(a, self.f).values
        self.assertLessEqual(np.max(np.abs(matrix_path - fft_path)), 1e-12)
        self.assertLessEqual(np.max(np.abs(fft_path - oracle)), 1e-10)

    def test_gaussian_closed_form(self):
        """O(e^{-x²/2}e^{-ξ²/2}) e^{-x²/2} = e^{-3x²/4}/√2"""
        a = family_symbol("gaussian", {}, self.grid)
        out = symbol_apply(a, self.f).values[0]
        self.assertLessEqual(np.max(np.abs(out - np.exp(-0.75 * self.x ** 2) / np.sqrt(2))), 1e-10)

    def test_linearity(self):
        a = family_symbol("gaussian", {}, self.grid)
        b = family_symbol("trig", {"freq_x": np.pi / 8, "freq_xi": np.pi / 4}, self.grid)
        combined = quantize(a.scale(2.0) + b.scale(-0.5j))
        expected = 2.0 * quantize(a).matrices - 0.5j * quantize(b).matrices
        self.assertLessEqual(np.max(np.abs(combined.matrices - expected)), 1e-12)

    def test_provenance(self):
        op = quantize(family_symbol("gaussian", {}, self.grid))
        self.assertTrue(op.provenance.startswith(QUANTIZED_PREFIX))
        self.assertTrue(is_quantized(op))
        self.assertTrue(is_quantized(op.scale(2.0)))
        self.assertTrue(is_quantized(ModuleOp.identity(self.fibers, self.grid)))
        self.assertFalse(is_quantized(op + op))
        self.assertFalse(is_quantized(compose(op, op)))

    def test_grid_mismatch(self):
        a = family_symbol("gaussian", {}, self.grid)
        with self.assertRaises(GridMismatchError):
            quantize(a, make_grid(1, 128, 6.0))

    def test_oracle_size_limit(self):
        grid = make_grid(1, 258, 8.0)
        a = family_symbol("constant", {}, grid)
        f = ModuleVec.zeros(FiberSet.scalar(), grid)
        with self.assertRaises(ValidationError):
            direct_apply_oracle(a, f)


class TestOperatorAlgebra(unittest.TestCase):
    """随伴・合成・交換子"""

    def setUp(self):
        self.grid = make_grid(1, 64, 8.0)
        self.fibers = FiberSet.numbered(2)
        self.rng = np.random.default_rng(3)

    def random_op(self):
        shape = (self.fibers.m, self.grid.size, self.grid.size)
        return ModuleOp(self.fibers, self.grid, self.rng.standard_normal(shape) + 1j * self.rng.standard_normal(shape))

    def test_adjoint_identity(self):
        """⟨Af, g⟩ = ⟨f, A*g⟩ (ファイバーごと)"""
        A = self.random_op()
        f = random_module_vec(self.fibers, self.grid, self.rng)
        g = random_module_vec(self.fibers, self.grid, self.rng)
        for idx in range(self.fibers.m):
            lhs = np.vdot(apply(A, f).values[idx], g.values[idx])
            rhs = np.vdot(f.values[idx], apply(adjoint(A), g).values[idx])
            self.assertLessEqual(abs(lhs - rhs), 1e-10 * max(1.0, abs(lhs)))

    def test_adjoint_of_multiplication(self):
        m = np.exp(1j * self.grid.x_axis)
        op = ModuleOp.multiplication(self.fibers, self.grid, m)
        expected = ModuleOp.multiplication(self.fibers, self.grid, np.conj(m))
        np.testing.assert_allclose(adjoint(op).matrices, expected.matrices, atol=1e-12)

    def test_canonical_commutation(self):
        """[x, D] u = i·u (D は乗数 ξ)"""
        grid = make_grid(1, 128, 8.0)
        fibers = FiberSet.scalar()
        X = quantize(family_symbol("multiplication", {"profile": {"family": "linear"}}, grid))
        D = quantize(family_symbol("multiplier", {"profile": {"family": "linear"}}, grid))
        u = embed_scalar(SampledFn(grid, np.exp(-grid.x_axis ** 2 / 2)), fibers)
        out = apply(commutator(X, D), u).values[0]
        self.assertLessEqual(np.max(np.abs(out - 1j * u.values[0])), 1e-8)

    def test_compose_submultiplicative(self):
        A, B = self.random_op(), self.random_op()
        self.assertLessEqual(op_norm(compose(A, B)), op_norm(A) * op_norm(B) + 1e-6)

    def test_fiber_op(self):
        A = self.random_op()
        np.testing.assert_array_equal(fiber_op(A, "lambda2"), A.matrices[1])


class TestNorm(unittest.TestCase):
    """べき乗法による作用素ノルム"""

    def setUp(self):
        self.grid = make_grid(1, 16, 4.0)

    def test_identity(self):
        self.assertAlmostEqual(op_norm(ModuleOp.identity(FiberSet.scalar(), self.grid)), 1.0, delta=1e-8)

    def test_max_over_fibers(self):
        """(I, 2I, 0.5I) のノルムは 2"""
        eye = np.eye(self.grid.size)
        op = ModuleOp(FiberSet.numbered(3), self.grid, np.stack([eye, 2 * eye, 0.5 * eye]))
        report = op_norm_report(op)
        self.assertAlmostEqual(report.value, 2.0, delta=1e-8)
        self.assertTrue(report.converged)
        self.assertEqual(len(report.per_fiber), 3)

    def test_multiplication_norm_is_sup(self):
        grid = make_grid(1, 64, 8.0)
        op = ModuleOp.multiplication(FiberSet.scalar(), grid, np.exp(-grid.x_axis ** 2 / 2))
        self.assertAlmostEqual(op_norm(op), 1.0, delta=1e-6)

    def test_matches_dense_svd(self):
        rng = np.random.default_rng(9)
        matrix = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        value, _, converged = largest_singular_value(matrix)
        self.assertTrue(converged)
        self.assertAlmostEqual(value, np.linalg.svd(matrix, compute_uv=False)[0], delta=1e-6)

    def test_zero_operator(self):
        self.assertEqual(op_norm(ModuleOp.zeros(FiberSet.scalar(), self.grid)), 0.0)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        matrix = rng.standard_normal((16, 16))
        self.assertEqual(largest_singular_value(matrix), largest_singular_value(matrix))


class TestTensorExtend(unittest.TestCase):
    """A⊗I"""

    def test_factorization_against_kronecker(self):
        grid = make_grid(1, 16, 4.0)
        fibers = FiberSet.numbered(2)
        rng = np.random.default_rng(4)
        shape = (2, 16, 16)
        A = ModuleOp(fibers, grid, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        f = random_module_vec(fibers, grid, rng)
        g = random_module_vec(fibers, grid, rng)
        extended = tensor_extend(A)
        lhs = extended.apply(tensor(f, g)).values
        rhs = tensor(apply(A, f), g).values
        self.assertLessEqual(np.max(np.abs(lhs - rhs)), 1e-12)
        dense = apply(extended.to_module_op(), tensor(f, g)).values
        self.assertLessEqual(np.max(np.abs(dense - lhs)), 1e-12)

    def test_requires_one_dimensional_operator(self):
        grid = make_grid(2, 8, 2.0)
        with self.assertRaises(ValidationError):
            tensor_extend(ModuleOp.identity(FiberSet.scalar(), grid))


class TestOperationLogging(unittest.TestCase):
    """量子化の呼び出しログ (グリッドとファイバーの形状、所要時間)"""

    def setUp(self):
        self.grid = make_grid(1, 16, 4.0)
        self.a = family_symbol("gaussian", {}, self.grid, FiberSet.numbered(2))

    @patch("utils.error_handler.logger")
    def test_logs_shapes_and_timing(self, mock_logger):
        quantize(self.a)
        messages = [call.args[0] for call in mock_logger.debug.call_args_list]
        self.assertIn("🔧 quantize (n=1, N=16, L=4, m=2)", messages)
        self.assertTrue(any(m.startswith("✅ quantize 完了") for m in messages))
        mock_logger.error.assert_not_called()

    @patch("utils.error_handler.logger")
    def test_logs_failure_and_reraises(self, mock_logger):
        with self.assertRaises(GridMismatchError):
            quantize(self.a, make_grid(1, 16, 5.0))
        mock_logger.error.assert_called_once()
        self.assertIn("GridMismatchError", mock_logger.error.call_args.args[0])


class TestCVBound(unittest.TestCase):

    def test_ratio_is_finite(self):
        grid = make_grid(1, 64, 4 * np.pi)
        record = cv_bound_report(family_symbol("trig", {"freq_x": 1.0, "freq_xi": 1.0}, grid))
        self.assertGreater(record.ratio, 0.0)
        self.assertAlmostEqual(record.ratio, record.norm / record.seminorm)

    def test_zero_symbol_rejected(self):
        grid = make_grid(1, 16, 4.0)
        with self.assertRaises(ValidationError):
            cv_bound_report(family_symbol("constant", {"value": 0.0}, grid))


if __name__ == '__main__':
    unittest.main()
