"""
ℝⁿ の離散化、対称正規化フーリエ変換、求積、テスト関数生成
"""

import logging
import warnings
from dataclasses import dataclass
from typing import ClassVar, Dict, Optional, Tuple

import numpy as np
import scipy.fft as sfft

from utils.error_handler import GridMismatchError, ValidationError
from utils.profiles import (
    Profile,
    gaussian_profile,
    hermite_profile,
    modulated_gaussian_profile,
)

logger = logging.getLogger(__name__)

# 独立な変換を並列化しても演算順序は変わらない
FFT_WORKERS = 1

POSITION = "position"
FREQUENCY = "frequency"

# 境界ノードでの相対振幅の上限 (有効台条件)
SUPPORT_TOLERANCE = 1e-10


@dataclass(frozen=True)
class Grid:
    """
    位置・周波数の一様グリッド

    x_j = -L + j·h (h = 2L/N)、ξ_k = (π/L)·k (k = -N/2 … N/2-1)。
    """
    n: int
    N: int
    L: float

    MIN_NODES: ClassVar[int] = 8
    SUPPORTED_DIMS: ClassVar[Tuple[int, ...]] = (1, 2)

    def __post_init__(self):
        if self.n not in self.SUPPORTED_DIMS:
            raise ValidationError(f"次元 n は 1 または 2: {self.n}")
        if self.N % 2 != 0:
            raise ValidationError(f"N must be even: {self.N}")
        if self.N < self.MIN_NODES:
            raise ValidationError(f"N は {self.MIN_NODES} 以上: {self.N}")
        if not self.L > 0:
            raise ValidationError(f"L は正である必要があります: {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def dxi(self) -> float:
        return np.pi / self.L

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N ** self.n

    @property
    def x_axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    @property
    def xi_axis(self) -> np.ndarray:
        return self.dxi * np.arange(-self.N // 2, self.N // 2)

    @property
    def axis_signs(self) -> np.ndarray:
        """(-1)^k, k = -N/2 … N/2-1"""
        return np.where(np.arange(-self.N // 2, self.N // 2) % 2 == 0, 1.0, -1.0)

    def nodes(self, domain: str = POSITION) -> np.ndarray:
        """
        ノード座標を行優先で並べた配列

        Returns:
            形状 (Nⁿ, n)
        """
        axis = self.x_axis if domain == POSITION else self.xi_axis
        mesh = np.meshgrid(*([axis] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def signs(self) -> np.ndarray:
        """形状 grid.shape の (-1)^{k_1 + … + k_n}"""
        out = self.axis_signs
        for _ in range(self.n - 1):
            out = np.multiply.outer(out, self.axis_signs)
        return out

    def is_aligned(self, offset, spacing: float, atol: float = 1e-12) -> bool:
        """offset が spacing の整数倍か (各成分)"""
        ratio = np.atleast_1d(np.asarray(offset, dtype=float)) / spacing
        return bool(np.all(np.abs(ratio - np.round(ratio)) <= atol * np.maximum(1.0, np.abs(ratio))))

    def steps(self, offset) -> np.ndarray:
        """位置オフセットをグリッドステップ数に変換"""
        return np.round(np.atleast_1d(np.asarray(offset, dtype=float)) / self.h).astype(int)

    def to_dict(self) -> Dict:
        return {"n": self.n, "N": self.N, "L": self.L}

    def axis_grid(self) -> "Grid":
        """同じ軸の 1 次元グリッド"""
        return Grid(1, self.N, self.L)


def make_grid(n: int, N: int, L: float) -> Grid:
    """
    グリッドを生成

    Args:
        n: 空間次元 (1 または 2)
        N: 軸あたりのノード数 (偶数、8 以上)
        L: 位置領域の半幅

    Returns:
        Grid
    """
    grid = Grid(int(n), int(N), float(L))
    logger.debug(f"グリッド生成: n={grid.n}, N={grid.N}, L={grid.L}, h={grid.h:.6g}")
    return grid


def require_same_grid(*grids: Grid):
    """全グリッドが一致することを確認"""
    first = grids[0]
    for other in grids[1:]:
        if other != first:
            raise GridMismatchError(f"グリッド不一致: {first} と {other}")


@dataclass(frozen=True, eq=False)
class SampledFn:
    """グリッド上の複素サンプル関数"""
    grid: Grid
    values: np.ndarray
    domain: str = POSITION

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.size != self.grid.size:
            raise ValidationError(f"サンプル数 {values.size} が Nⁿ = {self.grid.size} と一致しません")
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValidationError("サンプルに非有限値が含まれています")
        if self.domain not in (POSITION, FREQUENCY):
            raise ValidationError(f"未知のドメイン: {self.domain}")
        object.__setattr__(self, "values", values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def boundary_ratio(self) -> float:
        """境界ノードの最大振幅 / 全体の最大振幅"""
        peak = float(np.max(np.abs(self.values)))
        if peak == 0.0:
            return 0.0
        edge = 0.0
        for axis in range(self.grid.n):
            first = np.take(self.values, 0, axis=axis)
            last = np.take(self.values, -1, axis=axis)
            edge = max(edge, float(np.max(np.abs(first))), float(np.max(np.abs(last))))
        return edge / peak

    def has_effective_support(self) -> bool:
        return self.boundary_ratio() <= SUPPORT_TOLERANCE


def sampled(grid: Grid, values, domain: str = POSITION) -> SampledFn:
    """
    汎用コンストラクタ (有効台条件の違反は警告のみ)
    """
    fn = SampledFn(grid, values, domain)
    if not fn.has_effective_support():
        message = f"有効台条件を満たしません (境界比 {fn.boundary_ratio():.2e})"
        logger.warning(f"⚠️ {message}")
        warnings.warn(message, RuntimeWarning, stacklevel=2)
    return fn


def _require_domain(f: SampledFn, domain: str):
    if f.domain != domain:
        raise ValidationError(f"{domain} 側の関数が必要です (受け取り: {f.domain})")


def forward_transform(values: np.ndarray, grid: Grid) -> np.ndarray:
    """
    位置側サンプル配列 → 周波数側サンプル配列

    末尾 n 軸を変換し、先頭の軸はバッチとして扱う。
    """
    out = np.asarray(values, dtype=complex)
    for axis in range(-grid.n, 0):
        out = sfft.fftshift(sfft.fft(out, axis=axis, workers=FFT_WORKERS), axes=axis)
    scale = (grid.h / np.sqrt(2.0 * np.pi)) ** grid.n
    return scale * grid.signs() * out


def inverse_transform(values: np.ndarray, grid: Grid) -> np.ndarray:
    """周波数側サンプル配列 → 位置側サンプル配列"""
    out = grid.signs() * np.asarray(values, dtype=complex)
    for axis in range(-grid.n, 0):
        out = sfft.ifft(sfft.ifftshift(out, axes=axis), axis=axis, workers=FFT_WORKERS)
    scale = (grid.dxi * grid.N / np.sqrt(2.0 * np.pi)) ** grid.n
    return scale * out


def fourier(f: SampledFn) -> SampledFn:
    """
    û(ξ_k) = (2π)^{-n/2} hⁿ Σ_j e^{-i x_j·ξ_k} f(x_j) を FFT で計算

    Args:
        f: 位置側の関数

    Returns:
        周波数側の関数
    """
    _require_domain(f, POSITION)
    return SampledFn(f.grid, forward_transform(f.values, f.grid), FREQUENCY)


def inverse_fourier(g: SampledFn) -> SampledFn:
    """fourier の逆変換 (随伴)"""
    _require_domain(g, FREQUENCY)
    return SampledFn(g.grid, inverse_transform(g.values, g.grid), POSITION)


def quad(f: SampledFn) -> complex:
    """hⁿ Σ_j f(x_j)"""
    _require_domain(f, POSITION)
    return complex(f.grid.h ** f.grid.n * np.sum(f.values))


def quad_freq(g: SampledFn) -> complex:
    """Δξⁿ Σ_k g(ξ_k)"""
    _require_domain(g, FREQUENCY)
    return complex(g.grid.dxi ** g.grid.n * np.sum(g.values))


def evaluate_profile(profile: Profile, grid: Grid, domain: str = POSITION) -> np.ndarray:
    """プロファイルをグリッドノード上で評価 (形状 grid.shape)"""
    return profile(grid.nodes(domain)).reshape(grid.shape)


TEST_FAMILIES = ("gaussian", "hermite", "modulated_gaussian")


def test_function(family: str, params: Optional[Dict], grid: Grid) -> SampledFn:
    """
    シュワルツ級のテスト関数を生成

    Args:
        family: gaussian | hermite | modulated_gaussian
        params: center, width, index (hermite, ≤ 8), frequency (modulated_gaussian)
        grid: グリッド

    Returns:
        有効台条件を満たす位置側 SampledFn

    Raises:
        ValidationError: 未知の族、または有効台条件違反
    """
    params = dict(params or {})
    center = params.get("center", 0.0)
    width = params.get("width", 1.0)
    if family == "gaussian":
        profile = gaussian_profile(grid.n, width, center)
    elif family == "hermite":
        profile = hermite_profile(grid.n, int(params.get("index", 0)), width, center)
    elif family == "modulated_gaussian":
        profile = modulated_gaussian_profile(grid.n, width, params.get("frequency", 0.0), center)
    else:
        raise ValidationError(f"未知のテスト関数族: {family} (有効: {', '.join(TEST_FAMILIES)})")

    fn = SampledFn(grid, evaluate_profile(profile, grid))
    if not fn.has_effective_support():
        raise ValidationError(
            f"{family}{params} は有効台条件に違反します (境界比 {fn.boundary_ratio():.2e})"
        )
    return fn


def random_test_functions(grid: Grid, count: int, seed: int = 42) -> list:
    """
    乱数パラメータのテスト関数列 (自己テスト用)

    中心は |c| ≤ L/8、幅は [0.5, 0.8]、Hermite 指数は 0..3 から選ぶ。
    """
    rng = np.random.default_rng(seed)
    functions = []
    for _ in range(count):
        family = TEST_FAMILIES[int(rng.integers(len(TEST_FAMILIES)))]
        params = {
            "center": float(rng.uniform(-grid.L / 8, grid.L / 8)),
            "width": float(rng.uniform(0.5, 0.8)),
            "index": int(rng.integers(0, 4)),
            "frequency": float(rng.uniform(-2.0, 2.0)),
        }
        functions.append(test_function(family, params, grid))
    return functions
