"""
ハイゼンベルク群の作用: 平行移動・変調、共役軌道 A_{z,ζ}、平滑化軌道 B_{z,ζ} の差分実現、
共変性残差、滑らかさプローブ
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.error_handler import ValidationError
from utils.grid import Grid, forward_transform, inverse_transform
from utils.module_space import ModuleVec
from utils.quantize import ModuleOp, op_norm, quantize
from utils.symbols import Symbol, shift_symbol

logger = logging.getLogger(__name__)

# δ の下限 (h に対する比)。これ未満では打ち消し誤差が支配的になる
MIN_STEP_RATIO = 1e-4

# Richardson 比がこの範囲なら 2 次精度の差分と整合
RICHARDSON_RANGE = (3.0, 5.0)

# 差分が丸め誤差の水準なら軌道は (局所的に) 多項式とみなす
EXACT_TOLERANCE = 1e-10


def _vector(value, n: int) -> np.ndarray:
    out = np.atleast_1d(np.asarray(value, dtype=float))
    if out.size != n:
        raise ValidationError(f"ベクトルの次元 {out.size} が n = {n} と一致しません")
    return out


def translate(f: ModuleVec, z) -> ModuleVec:
    """T_z u(x) = u(x - z) (周波数側の乗数 e^{-iz·ξ})"""
    grid = f.grid
    z = _vector(z, grid.n)
    multiplier = np.exp(-1j * (grid.nodes("frequency") @ z)).reshape(grid.shape)
    spectrum = forward_transform(f.values, grid)
    return ModuleVec(f.fibers, grid, inverse_transform(spectrum * multiplier, grid))


def modulate(f: ModuleVec, zeta) -> ModuleVec:
    """M_ζ u(x) = e^{iζ·x} u(x)"""
    grid = f.grid
    zeta = _vector(zeta, grid.n)
    phase = np.exp(1j * (grid.nodes("position") @ zeta)).reshape(grid.shape)
    return ModuleVec(f.fibers, grid, f.values * phase)


def translation_matrix(grid: Grid, z) -> np.ndarray:
    """T_z の密行列 (グリッド非整列のシフト用)"""
    z = _vector(z, grid.n)
    basis = np.eye(grid.size, dtype=complex).reshape((grid.size,) + grid.shape)
    multiplier = np.exp(-1j * (grid.nodes("frequency") @ z)).reshape(grid.shape)
    images = inverse_transform(forward_transform(basis, grid) * multiplier, grid)
    return images.reshape(grid.size, grid.size).T


def conjugate(op: ModuleOp, z, zeta) -> ModuleOp:
    """
    A_{z,ζ} = T_{-z} M_{-ζ} A M_ζ T_z

    U = M_ζ T_z として U* A U を計算する。z が h の整数倍なら T_z は巡回置換、
    そうでなければ密なフーリエ乗数行列。
    """
    grid = op.grid
    z = _vector(z, grid.n)
    zeta = _vector(zeta, grid.n)
    phase = np.exp(1j * (grid.nodes("position") @ zeta))

    if grid.is_aligned(z, grid.h):
        steps = grid.steps(z)
        index = np.arange(grid.size).reshape(grid.shape)
        inv = np.roll(index, tuple(-steps), axis=tuple(range(grid.n))).ravel()
        ph = phase[inv]
        moved = op.matrices[:, inv][:, :, inv]
        matrices = np.conj(ph)[None, :, None] * moved * ph[None, None, :]
    else:
        unitary = phase[:, None] * translation_matrix(grid, z)
        matrices = unitary.conj().T[None, :, :] @ op.matrices @ unitary[None, :, :]
    return ModuleOp(op.fibers, grid, matrices, "conjugate")


@dataclass(frozen=True)
class OrbitStencil:
    """
    ∏_j (1+∂_{z_j})²(1+∂_{ζ_j})² を 1 次元ステンシル 1 + 2∂ + ∂² のテンソル積で実現

    order=2 は中心差分 (オフセット -1, 0, 1)、order=4 は 5 点中心差分
    (オフセット -2 … 2)。δ = h で平滑化像との差を 10⁻³ 未満にするには 4 次が要る。
    """
    delta: float
    order: int = 4

    SUPPORTED_ORDERS: ClassVar[Tuple[int, ...]] = (2, 4)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValidationError(f"δ は正である必要があります: {self.delta}")
        if self.order not in self.SUPPORTED_ORDERS:
            raise ValidationError(f"ステンシル次数は 2 または 4: {self.order}")

    def first_derivative(self) -> Dict[int, float]:
        d = self.delta
        if self.order == 2:
            return {-1: -1.0 / (2 * d), 1: 1.0 / (2 * d)}
        return {-2: 1.0 / (12 * d), -1: -8.0 / (12 * d), 1: 8.0 / (12 * d), 2: -1.0 / (12 * d)}

    def second_derivative(self) -> Dict[int, float]:
        d2 = self.delta ** 2
        if self.order == 2:
            return {-1: 1.0 / d2, 0: -2.0 / d2, 1: 1.0 / d2}
        return {-2: -1.0 / (12 * d2), -1: 16.0 / (12 * d2), 0: -30.0 / (12 * d2),
                1: 16.0 / (12 * d2), 2: -1.0 / (12 * d2)}

    def coefficients(self) -> Dict[int, float]:
        """1 + 2∂ + ∂² のオフセット別係数"""
        table = {0: 1.0}
        for offset, c in self.first_derivative().items():
            table[offset] = table.get(offset, 0.0) + 2.0 * c
        for offset, c in self.second_derivative().items():
            table[offset] = table.get(offset, 0.0) + c
        return dict(sorted(table.items()))

    def terms(self, num_vars: int) -> List[Tuple[Tuple[int, ...], float]]:
        """テンソル積の (オフセット組, 係数) を決定的な順序で列挙"""
        table = self.coefficients()
        out = []
        for combo in itertools.product(list(table), repeat=num_vars):
            coeff = 1.0
            for offset in combo:
                coeff *= table[offset]
            out.append((combo, coeff))
        return out

    @classmethod
    def for_grid(cls, grid: Grid, order: int = 4, delta: Optional[float] = None) -> "OrbitStencil":
        return cls(grid.h if delta is None else float(delta), order)


def orbit_b(op: ModuleOp, z, zeta, stencil: Optional[OrbitStencil] = None, workers: int = 1) -> ModuleOp:
    """
    B_{z,ζ} の差分実現: ステンシルの各オフセットで conjugate を評価して線形結合

    Args:
        op: 有界作用素
        z, zeta: 軌道の中心
        stencil: 差分ステンシル (省略時は δ = h の 4 次)
        workers: オフセット評価の並列数 (結合順序は固定)

    Returns:
        ModuleOp
    """
    grid = op.grid
    stencil = stencil or OrbitStencil.for_grid(grid)
    if stencil.delta < MIN_STEP_RATIO * grid.h:
        raise ValidationError(
            f"δ = {stencil.delta:.3e} は小さすぎます (下限 {MIN_STEP_RATIO} · h = {MIN_STEP_RATIO * grid.h:.3e})"
        )
    z = _vector(z, grid.n)
    zeta = _vector(zeta, grid.n)
    terms = stencil.terms(2 * grid.n)

    def evaluate(term):
        combo, _ = term
        offsets = stencil.delta * np.asarray(combo, dtype=float)
        return conjugate(op, z + offsets[:grid.n], zeta + offsets[grid.n:]).matrices

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            orbit = list(pool.map(evaluate, terms))
    else:
        orbit = [evaluate(term) for term in terms]

    total = np.zeros_like(op.matrices)
    for (_, coeff), matrices in zip(terms, orbit):
        total += coeff * matrices
    return ModuleOp(op.fibers, grid, total, "orbit_b")


def covariance_residual(a: Symbol, z, zeta) -> float:
    """‖conjugate(O(a), z, ζ) - O(shift(a, z, ζ))‖"""
    op = quantize(a)
    shifted = quantize(shift_symbol(a, z, zeta))
    return op_norm(conjugate(op, z, zeta) - shifted)


@dataclass(frozen=True)
class ProbeRow:
    direction: str
    order: int
    steps: Tuple[float, ...]
    derivative_norms: Tuple[float, ...]
    ratio: float
    consistent: bool


@dataclass(frozen=True)
class SmoothnessReport:
    rows: Tuple[ProbeRow, ...]
    max_order: int

    @property
    def consistent(self) -> bool:
        return all(row.consistent for row in self.rows)

    @property
    def flag(self) -> str:
        if self.consistent:
            return f"consistent with C^{self.max_order}"
        return "not consistent"

    def max_derivative(self) -> float:
        return max((max(row.derivative_norms) for row in self.rows), default=0.0)


def default_probe_step(grid: Grid) -> float:
    """h·min(4, max(1, floor(1/h)))"""
    return grid.h * min(4, max(1, int(np.floor(1.0 / grid.h))))


def _finite_difference(op: ModuleOp, direction: Tuple[str, int], order: int, step: float) -> ModuleOp:
    grid = op.grid
    unit = np.zeros(grid.n)
    unit[direction[1]] = step
    zero = np.zeros(grid.n)

    def point(sign: int) -> ModuleOp:
        if direction[0] == "z":
            return conjugate(op, sign * unit, zero)
        return conjugate(op, zero, sign * unit)

    plus, minus = point(1), point(-1)
    if order == 1:
        return (plus - minus).scale(1.0 / (2 * step))
    return (plus - point(0).scale(2.0) + minus).scale(1.0 / step ** 2)


def smoothness_probe(
    op: ModuleOp,
    max_order: int = 2,
    delta: Optional[float] = None,
    directions: Optional[Sequence[str]] = None,
) -> SmoothnessReport:
    """
    軌道の差分微分の作用素ノルムと Richardson 比による滑らかさ診断

    刻み δ, δ/2, δ/4 の差分 E を作り、比 ‖E(δ)-E(δ/2)‖ / ‖E(δ/2)-E(δ/4)‖ が
    [3, 5] に入れば 2 次差分と整合とみなす。既定の δ は 1 以下で最大の h の
    整数倍 (上限 4h)。

    Args:
        op: 有界作用素
        max_order: 1 または 2
        delta: 最大刻み
        directions: "z" と "zeta" の部分集合 (省略時は両方)

    Returns:
        SmoothnessReport (診断のみ、受け入れ判定には使わない)
    """
    if max_order not in (1, 2):
        raise ValidationError(f"max_order は 1 または 2: {max_order}")
    grid = op.grid
    delta = default_probe_step(grid) if delta is None else float(delta)
    kinds = tuple(directions) if directions is not None else ("z", "zeta")
    steps = (delta, delta / 2, delta / 4)

    rows = []
    for kind in kinds:
        for axis in range(grid.n):
            direction = (kind, axis)
            for order in range(1, max_order + 1):
                diffs = [_finite_difference(op, direction, order, s) for s in steps]
                norms = tuple(op_norm(d) for d in diffs)
                upper = op_norm(diffs[0] - diffs[1])
                lower = op_norm(diffs[1] - diffs[2])
                scale = max(1.0, max(norms))
                if upper <= EXACT_TOLERANCE * scale and lower <= EXACT_TOLERANCE * scale:
                    ratio, consistent = 4.0, True
                else:
                    ratio = upper / lower if lower > 0 else float("inf")
                    consistent = RICHARDSON_RANGE[0] <= ratio <= RICHARDSON_RANGE[1]
                label = f"{kind}{axis + 1}"
                logger.debug(f"プローブ {label} 次数 {order}: ノルム {norms}, 比 {ratio:.3f}")
                rows.append(ProbeRow(label, order, steps, norms, ratio, consistent))

    report = SmoothnessReport(tuple(rows), max_order)
    if not report.consistent:
        logger.warning(f"⚠️ 滑らかさプローブ: {report.flag}")
    return report
