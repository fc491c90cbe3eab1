"""
グリッド・フーリエ変換・求積のユニットテスト
"""

import unittest

import numpy as np

from utils import grid as grid_module
from utils.error_handler import GridMismatchError, ValidationError
from utils.grid import (
    SampledFn,
    forward_transform,
    fourier,
    inverse_fourier,
    inverse_transform,
    make_grid,
    quad,
    quad_freq,
    random_test_functions,
    require_same_grid,
    sampled,
)


class TestGrid(unittest.TestCase):
    """Grid の構成と検証"""

    def test_nodes_and_spacing(self):
        """x_j = -L + jh、ξ_k = (π/L)k"""
        grid = make_grid(1, 8, 4.0)
        self.assertEqual(grid.h, 1.0)
        self.assertAlmostEqual(grid.dxi, np.pi / 4)
        np.testing.assert_allclose(grid.x_axis, np.arange(-4.0, 4.0))
        np.testing.assert_allclose(grid.xi_axis, np.pi / 4 * np.arange(-4, 4))

    def test_two_dimensional_nodes_are_row_major(self):
        """2 次元ノードは行優先で (Nⁿ, n)"""
        grid = make_grid(2, 8, 4.0)
        nodes = grid.nodes()
        self.assertEqual(nodes.shape, (64, 2))
        np.testing.assert_allclose(nodes[1], [-4.0, -3.0])
        np.testing.assert_allclose(nodes[8], [-3.0, -4.0])

    def test_odd_N_rejected(self):
        """N が奇数なら ValidationError"""
        with self.assertRaises(ValidationError) as ctx:
            make_grid(1, 9, 4.0)
        self.assertIn("N must be even", str(ctx.exception))

    def test_invalid_dimension_and_width(self):
        with self.assertRaises(ValidationError):
            make_grid(3, 8, 4.0)
        with self.assertRaises(ValidationError):
            make_grid(1, 8, 0.0)
        with self.assertRaises(ValidationError):
            make_grid(1, 6, 4.0)

    def test_alignment(self):
        grid = make_grid(1, 16, 4.0)
        self.assertTrue(grid.is_aligned(3 * grid.h, grid.h))
        self.assertFalse(grid.is_aligned(0.3 * grid.h, grid.h))
        np.testing.assert_array_equal(grid.steps(-2 * grid.h), [-2])

    def test_grid_mismatch(self):
        with self.assertRaises(GridMismatchError):
            require_same_grid(make_grid(1, 8, 4.0), make_grid(1, 8, 5.0))


class TestFourier(unittest.TestCase):
    """対称正規化フーリエ変換"""

    def setUp(self):
        self.grid = make_grid(1, 128, 8.0)
        self.x = self.grid.x_axis
        self.xi = self.grid.xi_axis

    def test_gaussian_self_transform(self):
        """e^{-x²/2} の変換は e^{-ξ²/2}"""
        f = SampledFn(self.grid, np.exp(-self.x ** 2 / 2))
        error = np.max(np.abs(fourier(f).values - np.exp(-self.xi ** 2 / 2)))
        self.assertLessEqual(error, 1e-10)

    def test_first_hermite_transform(self):
        """x·e^{-x²/2} の変換は -iξ·e^{-ξ²/2}"""
        f = SampledFn(self.grid, self.x * np.exp(-self.x ** 2 / 2))
        expected = -1j * self.xi * np.exp(-self.xi ** 2 / 2)
        self.assertLessEqual(np.max(np.abs(fourier(f).values - expected)), 1e-9)

    def test_roundtrip_and_parseval(self):
        """往復誤差と Parseval 恒等式"""
        for f in random_test_functions(self.grid, 20, seed=7):
            g = fourier(f)
            self.assertLessEqual(np.max(np.abs(inverse_fourier(g).values - f.values)), 1e-12)
            energy = quad(SampledFn(self.grid, np.abs(f.values) ** 2))
            spectral = quad_freq(SampledFn(self.grid, np.abs(g.values) ** 2, "frequency"))
            self.assertLessEqual(abs(spectral - energy), 1e-10 * abs(energy))

    def test_translation_modulation_exchange(self):
        """F(f(· - a)) = e^{-iaξ} F f (グリッド整列の a)"""
        f = grid_module.test_function("gaussian", {"width": 0.7}, self.grid)
        steps = 5
        shifted = SampledFn(self.grid, np.roll(f.values, steps))
        expected = np.exp(-1j * steps * self.grid.h * self.xi) * fourier(f).values
        self.assertLessEqual(np.max(np.abs(fourier(shifted).values - expected)), 1e-10)

    def test_domain_is_checked(self):
        f = SampledFn(self.grid, np.exp(-self.x ** 2 / 2))
        with self.assertRaises(ValidationError):
            inverse_fourier(f)
        with self.assertRaises(ValidationError):
            fourier(fourier(f))

    def test_batch_axes(self):
        """先頭軸はバッチとして独立に変換"""
        f = np.exp(-self.x ** 2 / 2)
        batch = np.stack([f, 2 * f, 1j * f])
        out = forward_transform(batch, self.grid)
        single = forward_transform(f, self.grid)
        np.testing.assert_allclose(out, np.stack([single, 2 * single, 1j * single]), atol=1e-13)
        np.testing.assert_allclose(inverse_transform(out, self.grid), batch, atol=1e-13)

    def test_two_dimensional_gaussian(self):
        grid = make_grid(2, 64, 8.0)
        values = np.exp(-0.5 * np.sum(grid.nodes() ** 2, axis=-1))
        spectrum = fourier(SampledFn(grid, values)).values.ravel()
        expected = np.exp(-0.5 * np.sum(grid.nodes("frequency") ** 2, axis=-1))
        self.assertLessEqual(np.max(np.abs(spectrum - expected)), 1e-10)


class TestQuadrature(unittest.TestCase):
    """位置側・周波数側の求積"""

    def setUp(self):
        self.grid = make_grid(1, 128, 8.0)
        self.x = self.grid.x_axis

    def test_gaussian_integral(self):
        """∫ e^{-x²} = √π"""
        value = quad(SampledFn(self.grid, np.exp(-self.x ** 2)))
        self.assertLessEqual(abs(value - np.sqrt(np.pi)), 1e-12)

    def test_odd_integrand(self):
        value = quad(SampledFn(self.grid, self.x * np.exp(-self.x ** 2 / 2)))
        self.assertLessEqual(abs(value), 1e-13)


class TestTestFunctions(unittest.TestCase):
    """テスト関数の生成と有効台条件"""

    def setUp(self):
        self.grid = make_grid(1, 128, 8.0)

    def test_families_satisfy_support(self):
        for family in grid_module.TEST_FAMILIES:
            f = grid_module.test_function(family, {"index": 2, "frequency": 1.0}, self.grid)
            self.assertTrue(f.has_effective_support())

    def test_off_center_rejected(self):
        with self.assertRaises(ValidationError):
            grid_module.test_function("gaussian", {"center": 7.5}, self.grid)

    def test_unknown_family(self):
        with self.assertRaises(ValidationError):
            grid_module.test_function("lorentzian", {}, self.grid)

    def test_generic_constructor_only_warns(self):
        """汎用コンストラクタは有効台条件違反を警告のみ"""
        with self.assertWarns(RuntimeWarning):
            f = sampled(self.grid, np.ones(self.grid.N))
        self.assertEqual(f.values.shape, (128,))

    def test_non_finite_rejected(self):
        values = np.zeros(self.grid.N)
        values[3] = np.nan
        with self.assertRaises(ValidationError):
            SampledFn(self.grid, values)

    def test_random_functions_are_reproducible(self):
        first = random_test_functions(self.grid, 5, seed=3)
        second = random_test_functions(self.grid, 5, seed=3)
        for f, g in zip(first, second):
            np.testing.assert_array_equal(f.values, g.values)


if __name__ == '__main__':
    unittest.main()
