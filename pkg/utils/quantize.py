"""
量子化写像 O: シンボル → 擬微分作用素

作用素はファイバー対角の密行列族 (M_λ) として保持し、求積重みは行列に
折り込む: (Op f)_λ = M_λ · f_λ。位置グリッドの重み hⁿ は一様なので、
重み付き内積に関する随伴は共役転置と一致する。
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.fft as sfft

from utils.error_handler import GridMismatchError, ValidationError, log_grid_operation
from utils.grid import FFT_WORKERS, Grid, forward_transform, make_grid, require_same_grid
from utils.module_space import FiberSet, ModuleVec, require_same_fibers
from utils.symbols import Symbol, cv_seminorm

logger = logging.getLogger(__name__)

# べき乗法の既定値
POWER_SEED = 42
POWER_TOLERANCE = 1e-8
POWER_MAX_ITER = 10_000

# 直接求積オラクルのサイズ上限 (軸あたりノード数)
ORACLE_MAX_NODES = {1: 256, 2: 32}

# quantize が付ける provenance の接頭辞
QUANTIZED_PREFIX = "O:"


@dataclass(eq=False)
class ModuleOp:
    """ファイバー対角の作用素 (matrices の形状 (m, Nⁿ, Nⁿ))"""
    fibers: FiberSet
    grid: Grid
    matrices: np.ndarray
    provenance: Optional[str] = None

    def __post_init__(self):
        matrices = np.asarray(self.matrices, dtype=complex)
        expected = (self.fibers.m, self.grid.size, self.grid.size)
        if matrices.shape != expected:
            raise ValidationError(f"作用素の形状 {matrices.shape} が {expected} と一致しません")
        if not np.all(np.isfinite(matrices)):
            raise ValidationError("作用素に非有限値が含まれています")
        self.matrices = matrices

    @classmethod
    def identity(cls, fibers: FiberSet, grid: Grid) -> "ModuleOp":
        eye = np.broadcast_to(np.eye(grid.size, dtype=complex), (fibers.m, grid.size, grid.size))
        return cls(fibers, grid, eye.copy(), "identity")

    @classmethod
    def zeros(cls, fibers: FiberSet, grid: Grid) -> "ModuleOp":
        return cls(fibers, grid, np.zeros((fibers.m, grid.size, grid.size), dtype=complex), "zero")

    @classmethod
    def multiplication(cls, fibers: FiberSet, grid: Grid, values: np.ndarray) -> "ModuleOp":
        """位置ノード上の値による掛け算作用素 (values の形状 (m, Nⁿ) または (Nⁿ,))"""
        values = np.broadcast_to(np.asarray(values, dtype=complex).reshape(-1, grid.size), (fibers.m, grid.size))
        matrices = np.zeros((fibers.m, grid.size, grid.size), dtype=complex)
        idx = np.arange(grid.size)
        matrices[:, idx, idx] = values
        return cls(fibers, grid, matrices, "multiplication")

    def _check(self, other: "ModuleOp"):
        require_same_grid(self.grid, other.grid)
        require_same_fibers(self.fibers, other.fibers)

    def __add__(self, other: "ModuleOp") -> "ModuleOp":
        self._check(other)
        return ModuleOp(self.fibers, self.grid, self.matrices + other.matrices)

    def __sub__(self, other: "ModuleOp") -> "ModuleOp":
        self._check(other)
        return ModuleOp(self.fibers, self.grid, self.matrices - other.matrices)

    def scale(self, factor: complex) -> "ModuleOp":
        return ModuleOp(self.fibers, self.grid, factor * self.matrices, self.provenance)


@log_grid_operation
def quantize(a: Symbol, grid: Optional[Grid] = None) -> ModuleOp:
    """
    M_λ[j,k] = N^{-n} Σ_ξ e^{i(x_j - x_k)·ξ} a_λ(x_j, ξ)

    行ブロックごとに周波数軸の FFT 1 回で組み立てる。

    Args:
        a: シンボル
        grid: 作用素グリッド (省略時はシンボルのグリッド)

    Returns:
        ModuleOp
    """
    grid = grid or a.grid
    if grid != a.grid:
        raise GridMismatchError(f"シンボルのグリッド {a.grid} と作用素グリッド {grid} が一致しません")

    x = grid.nodes("position")
    xi = grid.nodes("frequency")
    phase = np.exp(1j * (x @ xi.T))
    signs = grid.signs()
    freq_axes = tuple(range(-grid.n, 0))

    matrices = np.empty_like(a.values)
    for idx in range(a.fibers.m):
        rows = (phase * a.values[idx]).reshape((grid.size,) + grid.shape) * signs
        rows = sfft.ifftshift(rows, axes=freq_axes)
        rows = sfft.fftn(rows, axes=freq_axes, workers=FFT_WORKERS)
        matrices[idx] = rows.reshape(grid.size, grid.size) / grid.size
    provenance = QUANTIZED_PREFIX + (a.family.tag() if a.family is not None else "sampled")
    return ModuleOp(a.fibers, grid, matrices, provenance)


def is_quantized(op: ModuleOp) -> bool:
    """quantize の出力 (またはそのスカラー倍・恒等・零) か"""
    provenance = op.provenance or ""
    return provenance.startswith(QUANTIZED_PREFIX) or provenance in ("identity", "zero")


def apply(op: ModuleOp, f: ModuleVec) -> ModuleVec:
    """ファイバーごとの行列ベクトル積"""
    require_same_grid(op.grid, f.grid)
    require_same_fibers(op.fibers, f.fibers)
    out = np.einsum("mjk,mk->mj", op.matrices, f.flat)
    return ModuleVec(f.fibers, f.grid, out)


def symbol_apply(a: Symbol, f: ModuleVec) -> ModuleVec:
    """
    FFT 経路: (Op u)(x_j) = (2π)^{-n/2} Δξⁿ Σ_ξ e^{i x_j·ξ} a(x_j,ξ) û(ξ)
    """
    require_same_grid(a.grid, f.grid)
    require_same_fibers(a.fibers, f.fibers)
    grid = a.grid
    u_hat = forward_transform(f.values, grid).reshape(f.fibers.m, grid.size)
    phase = np.exp(1j * (grid.nodes("position") @ grid.nodes("frequency").T))
    scale = (grid.dxi / np.sqrt(2.0 * np.pi)) ** grid.n
    out = scale * np.einsum("jk,mjk,mk->mj", phase, a.values, u_hat)
    return ModuleVec(f.fibers, grid, out)


def direct_apply_oracle(a: Symbol, f: ModuleVec) -> ModuleVec:
    """
    高速変換を使わない二重リーマン和による参照値

    Raises:
        ValidationError: グリッドがオラクル上限を超える
    """
    require_same_grid(a.grid, f.grid)
    require_same_fibers(a.fibers, f.fibers)
    grid = a.grid
    limit = ORACLE_MAX_NODES[grid.n]
    if grid.N > limit:
        raise ValidationError(f"直接オラクルは N ≤ {limit} (n = {grid.n}) のみ: N = {grid.N}")

    x = grid.nodes("position")
    xi = grid.nodes("frequency")
    kernel = np.exp(-1j * (xi @ x.T))
    norm = (2.0 * np.pi) ** (-grid.n / 2)
    out = np.empty((f.fibers.m, grid.size), dtype=complex)
    for idx in range(f.fibers.m):
        u_hat = norm * grid.h ** grid.n * (kernel @ f.flat[idx])
        synthesis = np.exp(1j * (x @ xi.T)) * a.values[idx]
        out[idx] = norm * grid.dxi ** grid.n * (synthesis @ u_hat)
    return ModuleVec(f.fibers, grid, out)


def adjoint(op: ModuleOp) -> ModuleOp:
    return ModuleOp(op.fibers, op.grid, np.conj(np.transpose(op.matrices, (0, 2, 1))), "adjoint")


def compose(A: ModuleOp, B: ModuleOp) -> ModuleOp:
    A._check(B)
    return ModuleOp(A.fibers, A.grid, A.matrices @ B.matrices, "compose")


def commutator(A: ModuleOp, B: ModuleOp) -> ModuleOp:
    """[A, B] = AB - BA"""
    A._check(B)
    return ModuleOp(A.fibers, A.grid, A.matrices @ B.matrices - B.matrices @ A.matrices, "commutator")


def fiber_op(op: ModuleOp, label: str) -> np.ndarray:
    """T_λ (V_λ T = T_λ V_λ)"""
    return op.matrices[op.fibers.index(label)]


@dataclass(frozen=True)
class NormEstimate:
    """べき乗法によるノルム推定"""
    value: float
    per_fiber: Tuple[float, ...]
    iterations: Tuple[int, ...]
    converged: bool


def largest_singular_value(
    matrix: np.ndarray,
    seed: int = POWER_SEED,
    tol: float = POWER_TOLERANCE,
    max_iter: int = POWER_MAX_ITER,
) -> Tuple[float, int, bool]:
    """
    T*T へのべき乗法で最大特異値を推定

    Rayleigh 商 ‖T x‖² の変化量と収縮率から残差を見積もり、
    相対誤差が tol 以下になった時点で停止する。

    Returns:
        (推定値, 反復回数, 収束したか)
    """
    if not np.any(matrix):
        return 0.0, 0, True

    rng = np.random.default_rng(seed)
    size = matrix.shape[1]
    x = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    x /= np.linalg.norm(x)

    estimate = 0.0
    previous_change = None
    for iteration in range(1, max_iter + 1):
        y = matrix @ x
        current = float(np.real(np.vdot(y, y)))
        z = matrix.conj().T @ y
        z_norm = np.linalg.norm(z)
        if z_norm == 0.0:
            # 零空間に入った場合は初期化し直す
            x = rng.standard_normal(size) + 1j * rng.standard_normal(size)
            x /= np.linalg.norm(x)
            continue
        x = z / z_norm

        change = abs(current - estimate)
        estimate = current
        if previous_change is not None and previous_change > 0.0:
            rate = change / previous_change
            remaining = change * rate / (1.0 - rate) if rate < 1.0 else change
        else:
            remaining = change
        previous_change = change
        if iteration > 1 and change <= tol * current and remaining <= tol * current:
            return float(np.sqrt(current)), iteration, True

    logger.warning(f"⚠️ べき乗法が {max_iter} 回で収束しませんでした (最終推定値 {np.sqrt(estimate):.6g})")
    return float(np.sqrt(estimate)), max_iter, False


def op_norm_report(
    op: ModuleOp,
    seed: int = POWER_SEED,
    tol: float = POWER_TOLERANCE,
    max_iter: int = POWER_MAX_ITER,
) -> NormEstimate:
    """‖T‖ = max_λ ‖T_λ‖ とファイバーごとの内訳"""
    values, iterations, flags = [], [], []
    for idx in range(op.fibers.m):
        value, count, ok = largest_singular_value(op.matrices[idx], seed, tol, max_iter)
        values.append(value)
        iterations.append(count)
        flags.append(ok)
    return NormEstimate(max(values), tuple(values), tuple(iterations), all(flags))


def op_norm(op: ModuleOp) -> float:
    return op_norm_report(op).value


@dataclass(eq=False)
class TensorExtendedOp:
    """A⊗I: 第 1 変数に A、第 2 変数に恒等を作用させる (行列を持たない)"""
    base: ModuleOp
    grid: Grid

    def apply(self, f: ModuleVec) -> ModuleVec:
        require_same_grid(self.grid, f.grid)
        require_same_fibers(self.base.fibers, f.fibers)
        out = np.einsum("mjk,mkl->mjl", self.base.matrices, f.values)
        return ModuleVec(f.fibers, self.grid, out)

    def to_module_op(self) -> ModuleOp:
        """密な Kronecker 積 (小規模の検証用)"""
        eye = np.eye(self.base.grid.N, dtype=complex)
        matrices = np.stack([np.kron(m, eye) for m in self.base.matrices])
        return ModuleOp(self.base.fibers, self.grid, matrices, "tensor_extend")


def tensor_extend(op: ModuleOp) -> TensorExtendedOp:
    """(A⊗I)(f⊗g) = Af⊗g"""
    if op.grid.n != 1:
        raise ValidationError("tensor_extend は 1 次元グリッド上の作用素のみ対応")
    return TensorExtendedOp(op, make_grid(2, op.grid.N, op.grid.L))


@dataclass(frozen=True)
class CVBoundRecord:
    norm: float
    seminorm: float
    ratio: float


def cv_bound_report(a: Symbol) -> CVBoundRecord:
    """
    経験的な比 ‖O(a)‖ / セミノルム (定数 k の下界)

    Raises:
        ValidationError: セミノルムが 1e-12 以下 (零シンボル)
    """
    seminorm = cv_seminorm(a)
    if seminorm <= 1e-12:
        raise ValidationError("退化したシンボル (セミノルム 0) では比を定義できません")
    norm = op_norm(quantize(a))
    record = CVBoundRecord(norm, seminorm, norm / seminorm)
    logger.info(f"📊 CV 比: ‖O(a)‖={norm:.6g}, セミノルム={seminorm:.6g}, 比={record.ratio:.6g}")
    return record
