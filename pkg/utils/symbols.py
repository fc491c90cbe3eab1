"""
位相空間シンボル a(x,ξ) の標本化、シフト、Calderón–Vaillancourt セミノルム、平滑化像
"""

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.fft as sfft

from utils.error_handler import ValidationError
from utils.grid import FFT_WORKERS, Grid, require_same_grid
from utils.module_space import FiberSet, require_same_fibers
from utils.profiles import (
    Profile,
    chain_rule_terms,
    constant_profile,
    gaussian_profile,
    profile_from_spec,
    sine_profile,
)

logger = logging.getLogger(__name__)

SKEW_TOLERANCE = 1e-12

# 周波数 θ に対する θL/π の整数からの相対ずれの上限
RESONANCE_TOLERANCE = 1e-9

# (1 + ∂)² = 1 + 2∂ + ∂²
SMOOTHING_STENCIL: Dict[int, float] = {0: 1.0, 1: 2.0, 2: 1.0}


def skew_matrix(J, n: int) -> np.ndarray:
    """
    歪対称行列 J を検証して返す

    Raises:
        ValidationError: 形状違い、または ‖J + Jᵀ‖_∞ > 1e-12
    """
    if np.size(J) != n * n:
        raise ValidationError(f"J は {n}×{n} 行列である必要があります")
    J = np.asarray(J, dtype=float).reshape(n, n)
    if np.max(np.abs(J + J.T)) > SKEW_TOLERANCE:
        raise ValidationError(f"J は歪対称である必要があります: {J.tolist()}")
    return J


def smoothing_terms(num_vars: int) -> Dict[Tuple[int, ...], float]:
    """∏_i (1 + ∂_i)² を展開した {多重指数: 係数} (3^{num_vars} 項)"""
    terms = {}
    for combo in itertools.product(sorted(SMOOTHING_STENCIL), repeat=num_vars):
        coeff = 1.0
        for order in combo:
            coeff *= SMOOTHING_STENCIL[order]
        terms[combo] = coeff
    return terms


@dataclass(eq=False)
class SymbolFamily:
    """
    閉形式のシンボル族 a_λ(w) = amp_λ · scale · P(A·(w + offset)), w = (x, ξ)

    smoothed が真のとき、評価値は ∏(1+∂_x)²(1+∂_ξ)² を施した平滑化像。
    """
    name: str
    params: Dict
    n: int
    profile: Profile
    pullback: np.ndarray
    scale: complex = 1.0
    offset: np.ndarray = field(default=None)
    amplitudes: Optional[Tuple[complex, ...]] = None
    smoothed: bool = False

    NAMES: ClassVar[Tuple[str, ...]] = (
        "gaussian", "trig", "multiplication", "multiplier",
        "shear_plus", "shear_minus", "constant",
    )

    def __post_init__(self):
        self.pullback = np.asarray(self.pullback, dtype=float).reshape(self.profile.dim, 2 * self.n)
        if self.offset is None:
            self.offset = np.zeros(2 * self.n)
        self.offset = np.asarray(self.offset, dtype=float).reshape(2 * self.n)
        if self.amplitudes is not None:
            self.amplitudes = tuple(complex(a) for a in self.amplitudes)

    def fiber_amplitudes(self, fibers: FiberSet) -> np.ndarray:
        if self.amplitudes is None:
            return np.full(fibers.m, self.scale, dtype=complex)
        if len(self.amplitudes) != fibers.m:
            raise ValidationError(
                f"振幅の数 {len(self.amplitudes)} がファイバー数 {fibers.m} と一致しません"
            )
        return self.scale * np.asarray(self.amplitudes, dtype=complex)

    def _derivative(self, w: np.ndarray, multi_index: Sequence[int]) -> np.ndarray:
        y = (w + self.offset) @ self.pullback.T
        total = np.zeros(w.shape[:-1], dtype=complex)
        for gamma, coeff in chain_rule_terms(self.pullback, multi_index).items():
            total = total + coeff * self.profile(y, gamma)
        return total

    def base(self, x: np.ndarray, xi: np.ndarray, multi_index: Optional[Sequence[int]] = None) -> np.ndarray:
        """
        振幅を除いた (偏導関数の) 値

        Args:
            x: 形状 (..., n)
            xi: 形状 (..., n) (x とブロードキャスト可能)
            multi_index: (x_1..x_n, ξ_1..ξ_n) に対する微分多重指数

        Returns:
            形状 (...) の複素数配列
        """
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast_shapes(x.shape, xi.shape)
        w = np.concatenate([np.broadcast_to(x, shape), np.broadcast_to(xi, shape)], axis=-1)
        mu = tuple(multi_index) if multi_index is not None else (0,) * (2 * self.n)
        if not self.smoothed:
            return self._derivative(w, mu)
        total = np.zeros(w.shape[:-1], dtype=complex)
        for nu, coeff in smoothing_terms(2 * self.n).items():
            total = total + coeff * self._derivative(w, tuple(a + b for a, b in zip(mu, nu)))
        return total

    def evaluate(self, x, xi, fibers: FiberSet, multi_index: Optional[Sequence[int]] = None) -> np.ndarray:
        """ファイバーごとの値 (形状 (m, ...))"""
        base = self.base(x, xi, multi_index)
        amps = self.fiber_amplitudes(fibers)
        return amps.reshape((-1,) + (1,) * base.ndim) * base[None, ...]

    def shifted(self, z, zeta) -> "SymbolFamily":
        shift = np.concatenate([np.atleast_1d(np.asarray(z, dtype=float)),
                                np.atleast_1d(np.asarray(zeta, dtype=float))])
        return replace(self, offset=self.offset + shift)

    def smoothing(self) -> "SymbolFamily":
        return replace(self, smoothed=True)

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "params": self.params,
            "n": self.n,
            "offset": self.offset.tolist(),
            "amplitudes": None if self.amplitudes is None else [[a.real, a.imag] for a in self.amplitudes],
            "smoothed": self.smoothed,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SymbolFamily":
        family = build_family(data["name"], data.get("params", {}), data["n"])
        amplitudes = data.get("amplitudes")
        return replace(
            family,
            offset=np.asarray(data.get("offset", np.zeros(2 * data["n"])), dtype=float),
            amplitudes=None if amplitudes is None else tuple(complex(re, im) for re, im in amplitudes),
            smoothed=bool(data.get("smoothed", False)),
        )

    def tag(self) -> str:
        params = ",".join(f"{k}={self.params[k]}" for k in sorted(self.params) if k != "J")
        return f"{self.name}({params})"


def build_family(name: str, params: Optional[Dict], n: int, amplitudes: Optional[Sequence[complex]] = None) -> SymbolFamily:
    """
    族名とパラメータから SymbolFamily を構成

    Args:
        name: gaussian | trig | multiplication | multiplier | shear_plus | shear_minus | constant
        params: 族パラメータ (profile はプロファイル指定辞書)
        n: 空間次元
        amplitudes: ファイバーごとの振幅 (省略時はすべて 1)

    Returns:
        SymbolFamily
    """
    params = dict(params or {})
    eye = np.eye(n)
    zero = np.zeros((n, n))
    scale = 1.0
    if name == "constant":
        profile = constant_profile(0)
        pullback = np.zeros((0, 2 * n))
        scale = complex(params.get("value", 1.0))
    elif name == "gaussian":
        wx = float(params.get("width_x", 1.0))
        wxi = float(params.get("width_xi", 1.0))
        cx = params.get("center_x", 0.0)
        cxi = params.get("center_xi", 0.0)
        px = gaussian_profile(n, wx, cx)
        pxi = gaussian_profile(n, wxi, cxi)
        profile = Profile(px.factors + pxi.factors)
        pullback = np.eye(2 * n)
    elif name == "trig":
        fx = sine_profile(n, params.get("freq_x", 1.0))
        fxi = sine_profile(n, params.get("freq_xi", 1.0))
        profile = Profile(fx.factors + fxi.factors)
        pullback = np.eye(2 * n)
    elif name in ("multiplication", "multiplier", "shear_plus", "shear_minus"):
        if "profile" not in params:
            raise ValidationError(f"{name} には profile パラメータが必要です")
        profile = profile_from_spec(params["profile"], n)
        if name == "multiplication":
            pullback = np.hstack([eye, zero])
        elif name == "multiplier":
            pullback = np.hstack([zero, eye])
        else:
            J = skew_matrix(params.get("J", zero), n)
            sign = 1.0 if name == "shear_plus" else -1.0
            pullback = np.hstack([eye, sign * J])
    else:
        raise ValidationError(f"未知のシンボル族: {name} (有効: {', '.join(SymbolFamily.NAMES)})")

    if not np.isfinite(scale):
        raise ValidationError("定数シンボルの値が非有限です")
    return SymbolFamily(
        name=name,
        params=params,
        n=n,
        profile=profile,
        pullback=pullback,
        scale=scale,
        amplitudes=None if amplitudes is None else tuple(amplitudes),
    )


@dataclass(eq=False)
class Symbol:
    """
    (x,ξ) 積グリッド上のファイバーごとのサンプル

    values の形状は (m, Nⁿ, Nⁿ) で、軸 1 が位置ノード、軸 2 が周波数ノード
    (いずれも行優先で平坦化)。
    """
    fibers: FiberSet
    grid: Grid
    values: np.ndarray
    family: Optional[SymbolFamily] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        expected = (self.fibers.m, self.grid.size, self.grid.size)
        if values.size != int(np.prod(expected)):
            raise ValidationError(f"シンボルの形状 {values.shape} が {expected} と一致しません")
        values = values.reshape(expected)
        if not np.all(np.isfinite(values)):
            raise ValidationError("シンボルに非有限値が含まれています (有界でない)")
        self.values = values

    def __add__(self, other: "Symbol") -> "Symbol":
        require_same_grid(self.grid, other.grid)
        require_same_fibers(self.fibers, other.fibers)
        return Symbol(self.fibers, self.grid, self.values + other.values)

    def scale(self, factor: complex) -> "Symbol":
        return Symbol(self.fibers, self.grid, factor * self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


def _phase_nodes(grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """形状 (Nⁿ, 1, n) と (1, Nⁿ, n) の位置・周波数ノード"""
    return grid.nodes("position")[:, None, :], grid.nodes("frequency")[None, :, :]


def require_resonant(family: SymbolFamily, grid: Grid) -> None:
    """
    trig 族の周波数が π/L の整数倍であることを確認

    Raises:
        ValidationError: 周期拡張が滑らかにならない周波数
    """
    if family.name != "trig":
        return
    for key in ("freq_x", "freq_xi"):
        freq = np.atleast_1d(np.asarray(family.params.get(key, 1.0), dtype=float))
        multiple = freq * grid.L / np.pi
        if np.any(np.abs(multiple - np.round(multiple)) > RESONANCE_TOLERANCE * np.maximum(1.0, np.abs(multiple))):
            raise ValidationError(
                f"trig の {key}={freq.tolist()} は π/L = {np.pi / grid.L:.6g} の整数倍ではありません"
            )


def sample_family(family: SymbolFamily, grid: Grid, fibers: FiberSet) -> Symbol:
    """
    閉形式の族をグリッド上で標本化

    Args:
        family: シンボル族
        grid: 演算子グリッド
        fibers: ファイバー集合

    Returns:
        記述子付きの Symbol
    """
    if family.n != grid.n:
        raise ValidationError(f"族の次元 {family.n} とグリッド次元 {grid.n} が一致しません")
    require_resonant(family, grid)
    x, xi = _phase_nodes(grid)
    values = family.evaluate(x, xi, fibers)
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{family.tag()} の標本が有界ではありません")
    return Symbol(fibers, grid, values, family)


def _as_phase_array(a: Symbol) -> np.ndarray:
    """形状 (m,) + (N,)*n + (N,)*n"""
    return a.values.reshape((a.fibers.m,) + a.grid.shape + a.grid.shape)


def shift_symbol(a: Symbol, z, zeta) -> Symbol:
    """
    (x,ξ) ↦ a(x+z, ξ+ζ)

    記述子があれば解析的に再標本化し、なければ巡回インデックスシフト
    (z は h、ζ は π/L の整数倍に限る)。
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    if z.size != a.grid.n or zeta.size != a.grid.n:
        raise ValidationError(f"シフトの次元が n = {a.grid.n} と一致しません")
    if a.family is not None:
        return sample_family(a.family.shifted(z, zeta), a.grid, a.fibers)

    if not (a.grid.is_aligned(z, a.grid.h) and a.grid.is_aligned(zeta, a.grid.dxi)):
        raise ValidationError(
            f"記述子のないシンボルはグリッド整列シフトのみ対応: z={z.tolist()}, ζ={zeta.tolist()}"
        )
    steps = np.concatenate([np.round(z / a.grid.h), np.round(zeta / a.grid.dxi)]).astype(int)
    values = np.roll(_as_phase_array(a), tuple(-steps), axis=tuple(range(1, 2 * a.grid.n + 1)))
    return Symbol(a.fibers, a.grid, values)


def spectral_derivative(values: np.ndarray, axis: int, spacing: float, order: int = 1) -> np.ndarray:
    """
    周期拡張上のフーリエ微分

    奇数階ではナイキスト成分を落とす。
    """
    if order == 0:
        return values
    N = values.shape[axis]
    k = 2.0 * np.pi * sfft.fftfreq(N, d=spacing)
    multiplier = (1j * k) ** order
    if order % 2 == 1:
        multiplier[N // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = N
    spectrum = sfft.fft(values, axis=axis, workers=FFT_WORKERS)
    return sfft.ifft(spectrum * multiplier.reshape(shape), axis=axis, workers=FFT_WORKERS)


def _phase_axis_spacing(grid: Grid) -> List[Tuple[int, float]]:
    """位相配列 (m, x…, ξ…) の各変数軸と刻み"""
    axes = [(1 + i, grid.h) for i in range(grid.n)]
    axes += [(1 + grid.n + i, grid.dxi) for i in range(grid.n)]
    return axes


def symbol_derivative(a: Symbol, multi_index: Sequence[int]) -> np.ndarray:
    """
    ∂_x^α ∂_ξ^β a のノード値 (形状 (m, Nⁿ, Nⁿ))

    記述子があれば解析的に、なければスペクトル微分で計算する。
    """
    if a.family is not None:
        x, xi = _phase_nodes(a.grid)
        return a.family.evaluate(x, xi, a.fibers, multi_index)
    out = _as_phase_array(a)
    for (axis, spacing), order in zip(_phase_axis_spacing(a.grid), multi_index):
        out = spectral_derivative(out, axis, spacing, order)
    return out.reshape(a.values.shape)


def cv_seminorm(a: Symbol) -> float:
    """
    max_{α,β ≤ (1,…,1)} sup |∂_x^α ∂_ξ^β a| (ノード・ファイバー上の上限)
    """
    best = 0.0
    for multi_index in itertools.product((0, 1), repeat=2 * a.grid.n):
        value = float(np.max(np.abs(symbol_derivative(a, multi_index))))
        logger.debug(f"CV 項 {multi_index}: {value:.6g}")
        best = max(best, value)
    return best


def smoothing_image(a: Symbol) -> Symbol:
    """
    b = ∏_j (1+∂_{x_j})²(1+∂_{ξ_j})² a

    記述子があれば平滑化済み記述子を持つ解析的な像を、なければスペクトル微分による
    記述子なしの像を返す。
    """
    if a.family is not None and not a.family.smoothed:
        return sample_family(a.family.smoothing(), a.grid, a.fibers)

    out = _as_phase_array(a)
    for axis, spacing in _phase_axis_spacing(a.grid):
        first = spectral_derivative(out, axis, spacing, 1)
        second = spectral_derivative(out, axis, spacing, 2)
        out = out + 2.0 * first + second
    return Symbol(a.fibers, a.grid, out.reshape(a.values.shape))


def strip_family(a: Symbol) -> Symbol:
    """記述子を外したコピー (スペクトル経路の検証用)"""
    return Symbol(a.fibers, a.grid, a.values.copy())
