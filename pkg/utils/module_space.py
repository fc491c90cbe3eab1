"""
可換係数代数 C = C(Ω) 上のヒルベルト加群ベクトル

Ω は有限個のファイバー λ_1 … λ_m で標本化し、C(Ω) の元はファイバー上の
ベクトル、C*-ノルムはファイバー上の最大値として扱う。
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from utils.error_handler import FiberMismatchError, ValidationError
from utils.grid import Grid, SampledFn, POSITION, make_grid, require_same_grid

logger = logging.getLogger(__name__)

# ⟨f,f⟩ の丸め誤差による負値の許容幅
POSITIVITY_SLACK = 1e-14


@dataclass(frozen=True)
class FiberSet:
    """Ω の標本点ラベル"""
    labels: Tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        if len(labels) < 1:
            raise ValidationError("ファイバー数 m は 1 以上")
        if len(set(labels)) != len(labels):
            raise ValidationError(f"ファイバーラベルが重複しています: {labels}")
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise FiberMismatchError(f"未知のファイバーラベル: {label} (有効: {', '.join(self.labels)})")

    @classmethod
    def scalar(cls) -> "FiberSet":
        """m = 1 (C = ℂ)"""
        return cls(("scalar",))

    @classmethod
    def numbered(cls, m: int) -> "FiberSet":
        return cls(tuple(f"lambda{i + 1}" for i in range(m)))


def require_same_fibers(*fibers: FiberSet):
    first = fibers[0]
    for other in fibers[1:]:
        if other != first:
            raise FiberMismatchError(f"ファイバー集合の不一致: {first.labels} と {other.labels}")


@dataclass(frozen=True, eq=False)
class ModuleVec:
    """ファイバーごとの位置側サンプル (形状 (m,) + grid.shape)"""
    fibers: FiberSet
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        expected = (self.fibers.m,) + self.grid.shape
        if values.size != int(np.prod(expected)):
            raise ValidationError(f"ModuleVec の形状 {values.shape} が {expected} と一致しません")
        values = values.reshape(expected)
        if not np.all(np.isfinite(values)):
            raise ValidationError("ModuleVec に非有限値が含まれています")
        object.__setattr__(self, "values", values)

    @property
    def flat(self) -> np.ndarray:
        """形状 (m, Nⁿ)"""
        return self.values.reshape(self.fibers.m, self.grid.size)

    @classmethod
    def from_slices(cls, fibers: FiberSet, slices: Sequence[SampledFn]) -> "ModuleVec":
        if len(slices) != fibers.m:
            raise FiberMismatchError(f"スライス数 {len(slices)} がファイバー数 {fibers.m} と一致しません")
        require_same_grid(*[s.grid for s in slices])
        return cls(fibers, slices[0].grid, np.stack([s.values for s in slices]))

    @classmethod
    def zeros(cls, fibers: FiberSet, grid: Grid) -> "ModuleVec":
        return cls(fibers, grid, np.zeros((fibers.m,) + grid.shape, dtype=complex))

    def __add__(self, other: "ModuleVec") -> "ModuleVec":
        _require_compatible(self, other)
        return ModuleVec(self.fibers, self.grid, self.values + other.values)

    def __sub__(self, other: "ModuleVec") -> "ModuleVec":
        _require_compatible(self, other)
        return ModuleVec(self.fibers, self.grid, self.values - other.values)

    def scale(self, factor: complex) -> "ModuleVec":
        return ModuleVec(self.fibers, self.grid, factor * self.values)


def _require_compatible(f: ModuleVec, g: ModuleVec):
    require_same_grid(f.grid, g.grid)
    require_same_fibers(f.fibers, g.fibers)


def scalar_inner(f: SampledFn, g: SampledFn) -> complex:
    """L² 内積 hⁿ Σ conj(f)·g"""
    require_same_grid(f.grid, g.grid)
    return complex(f.grid.h ** f.grid.n * np.vdot(f.values.ravel(), g.values.ravel()))


def _clamped_norm(value: complex) -> float:
    real = value.real
    if real < -POSITIVITY_SLACK:
        raise ValidationError(f"⟨f,f⟩ が負になりました: {real:.3e}")
    return float(np.sqrt(max(real, 0.0)))


def l2_norm(f: SampledFn) -> float:
    """スカラー L² ノルム (module_norm と同じ演算経路)"""
    return _clamped_norm(scalar_inner(f, f))


def cstar_inner(f: ModuleVec, g: ModuleVec) -> np.ndarray:
    """
    C 値内積 ⟨f,g⟩ をファイバーごとに評価

    Args:
        f, g: 同じグリッド・ファイバー集合上の ModuleVec

    Returns:
        長さ m の複素ベクトル
    """
    _require_compatible(f, g)
    return np.array([
        scalar_inner(eval_fiber(f, label), eval_fiber(g, label)) for label in f.fibers.labels
    ])


def module_norm(f: ModuleVec) -> float:
    """‖f‖ = max_λ ⟨f,f⟩(λ)^{1/2}"""
    return max(l2_norm(eval_fiber(f, label)) for label in f.fibers.labels)


def embed_scalar(u: SampledFn, fibers: FiberSet) -> ModuleVec:
    """ũ(x) = u(x)·1_C"""
    if u.domain != POSITION:
        raise ValidationError("埋め込みには位置側の関数が必要です")
    return ModuleVec(fibers, u.grid, np.broadcast_to(u.values, (fibers.m,) + u.grid.shape).copy())


def eval_fiber(f: ModuleVec, label: str) -> SampledFn:
    """(V_λ f)(x) = [f(x)](λ)"""
    return SampledFn(f.grid, f.values[f.fibers.index(label)], POSITION)


def tensor(f: ModuleVec, g: ModuleVec) -> ModuleVec:
    """
    (f⊗g)(x, y) = f(x)·g(y) をファイバーごとに構成

    1 軸グリッド上の入力から、同じ軸で作った 2 次元グリッド上の ModuleVec を返す。
    """
    require_same_fibers(f.fibers, g.fibers)
    require_same_grid(f.grid, g.grid)
    if f.grid.n != 1:
        raise ValidationError("tensor は 1 次元グリッド上の入力のみ対応")
    target = make_grid(2, f.grid.N, f.grid.L)
    values = f.values[:, :, None] * g.values[:, None, :]
    return ModuleVec(f.fibers, target, values)


def random_module_vec(fibers: FiberSet, grid: Grid, rng: np.random.Generator) -> ModuleVec:
    """ガウス包絡を掛けた乱数ベクトル (性質テスト用)"""
    envelope = np.exp(-0.5 * np.sum(grid.nodes() ** 2, axis=-1)).reshape(grid.shape)
    noise = rng.standard_normal((fibers.m,) + grid.shape) + 1j * rng.standard_normal((fibers.m,) + grid.shape)
    return ModuleVec(fibers, grid, noise * envelope)
