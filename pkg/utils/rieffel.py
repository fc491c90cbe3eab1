"""
シアーシンボルの作用素 L_F, R_G と可換子の検証

L_F はシンボル F(x + Jξ)、R_G はシンボル G(x - Jξ) の量子化。
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.error_handler import PerformanceLogger, ValidationError, log_grid_operation
from utils.grid import Grid
from utils.heisenberg import SmoothnessReport, smoothness_probe
from utils.module_space import FiberSet
from utils.profiles import profile_tag
from utils.quantize import ModuleOp, commutator, op_norm, quantize
from utils.recover import RecoveryParams, recover_symbol
from utils.symbols import build_family, sample_family, skew_matrix

logger = logging.getLogger(__name__)

# ノルムがこれ以下の作用素では相対残差を定義しない
DEGENERATE_NORM = 1e-14

# 可換子に入っているとみなす残差の上限 (デモの既定値)
COMMUTANT_TOLERANCE = 1e-3

DEFAULT_G_FAMILY: Tuple[Dict, ...] = (
    {"family": "gaussian", "width": 0.7},
    {"family": "gaussian", "width": 1.0},
    {"family": "gaussian", "width": 1.5},
    {"family": "hermite", "index": 1, "width": 1.0},
    {"family": "hermite", "index": 2, "width": 1.0},
    {"family": "modulated_gaussian", "width": 1.0, "frequency": 1.0},
)


def default_G_family(count: Optional[int] = None) -> List[Dict]:
    """G の有限族 (ガウシアン 3 幅、Hermite 指数 1, 2、変調ガウシアン)"""
    members = [dict(spec) for spec in DEFAULT_G_FAMILY]
    return members if count is None else members[:count]


def balanced_half_width(N: int) -> float:
    """位置幅 2L と周波数幅 πN/L を揃える L = sqrt(πN/2)"""
    return float(np.sqrt(np.pi * N / 2.0))


def j_tag(J) -> str:
    return ";".join(",".join(f"{v:g}" for v in row) for row in np.atleast_2d(np.asarray(J, dtype=float)))


def _shear_operator(name: str, F: Dict, J, grid: Grid, fibers: FiberSet) -> ModuleOp:
    J = skew_matrix(J, grid.n)
    family = build_family(name, {"profile": F, "J": J.tolist()}, grid.n)
    return quantize(sample_family(family, grid, fibers))


def make_LF(F: Dict, J, grid: Grid, fibers: FiberSet) -> ModuleOp:
    """
    L_F = O(F(x + Jξ))

    Args:
        F: プロファイル指定 (例: {"family": "gaussian", "width": 1.0})
        J: 反対称行列 (n = 1 では 0)
        grid: 作用素グリッド
        fibers: ファイバー集合

    Returns:
        ModuleOp

    Raises:
        ValidationError: J が反対称でない
    """
    return _shear_operator("shear_plus", F, J, grid, fibers)


def make_RG(G: Dict, J, grid: Grid, fibers: FiberSet) -> ModuleOp:
    """R_G = O(G(x - Jξ)) = make_LF(G, -J)"""
    return _shear_operator("shear_minus", G, J, grid, fibers)


@dataclass(frozen=True)
class CommutantResult:
    """max_G ‖[A, R_G]‖ / (‖A‖·‖R_G‖) と G ごとの内訳"""
    residual: float
    attained_by: str
    per_G: Tuple[Tuple[str, float], ...]


@log_grid_operation
def commutant_residual(A: ModuleOp, G_list: Sequence[Dict], J, workers: int = 1) -> CommutantResult:
    """
    A が R_G の可換子に入っているかの相対残差

    G ごとに R_G を組み立てて並列に評価し、最大値は G_list の順に決定的に取る。

    Raises:
        ValidationError: G_list が空、またはノルムが退化
    """
    if not G_list:
        raise ValidationError("G_list が空です")
    norm_A = op_norm(A)
    if norm_A <= DEGENERATE_NORM:
        raise ValidationError(f"‖A‖ = {norm_A:.3e} が退化しています")

    def evaluate(G: Dict) -> float:
        R = make_RG(G, J, A.grid, A.fibers)
        norm_R = op_norm(R)
        if norm_R <= DEGENERATE_NORM:
            raise ValidationError(f"‖R_G‖ = {norm_R:.3e} が退化しています ({profile_tag(G)})")
        return op_norm(commutator(A, R)) / (norm_A * norm_R)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(evaluate, G_list))
    else:
        values = [evaluate(G) for G in G_list]

    per_G = tuple((profile_tag(G), value) for G, value in zip(G_list, values))
    best = max(range(len(values)), key=lambda i: (values[i], -i))
    logger.info(f"📊 可換子残差: {values[best]:.3e} ({per_G[best][0]})")
    return CommutantResult(values[best], per_G[best][0], per_G)


def translation_smooth_probe(A: ModuleOp, max_order: int = 2, delta: Optional[float] = None) -> SmoothnessReport:
    """z ↦ T_{-z} A T_z の滑らかさプローブ (ζ 方向なし)"""
    return smoothness_probe(A, max_order=max_order, delta=delta, directions=("z",))


@dataclass
class ConjectureReport:
    """L_F 型の特徴付けの前向きデモ結果"""
    F_tag: str
    J_tag: str
    smooth: SmoothnessReport
    commutant: CommutantResult
    in_commutant: bool
    recovery_error: float = float("nan")
    recovered: List[complex] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        if not self.in_commutant:
            return "not in commutant"
        return "in commutant" if self.smooth.consistent else "in commutant, smoothness not confirmed"

    @property
    def flags(self) -> str:
        return f"smooth={self.smooth.flag};{self.verdict}"


def conjecture_demo(
    F: Dict,
    J,
    params: RecoveryParams,
    grid: Grid,
    points: Sequence[Tuple],
    fibers: Optional[FiberSet] = None,
    G_list: Optional[Sequence[Dict]] = None,
    operator: Optional[ModuleOp] = None,
    tolerance: float = COMMUTANT_TOLERANCE,
    workers: int = 1,
) -> ConjectureReport:
    """
    A = L_F について (i) 平行移動の滑らかさ (ii) 可換子残差 (iii) シンボル回復を確認

    Args:
        F: プロファイル指定
        J: 反対称行列
        params: 回復パラメータ (粗い n = 2 用)
        grid: 作用素グリッド
        points: 回復点
        fibers: ファイバー集合 (省略時はスカラー)
        G_list: 可換子の検証に使う G (省略時は既定の族)
        operator: L_F の代わりに検証する作用素 (負の対照用)
        tolerance: (ii) の合格閾値
        workers: 並列数

    Returns:
        ConjectureReport ((ii) に失敗した場合は回復を省略)
    """
    fibers = fibers or FiberSet.scalar()
    G_list = list(G_list) if G_list is not None else default_G_family()
    A = operator if operator is not None else make_LF(F, J, grid, fibers)

    with PerformanceLogger("平行移動の滑らかさ"):
        smooth = translation_smooth_probe(A)
    with PerformanceLogger("可換子残差"):
        commutant = commutant_residual(A, G_list, J, workers)

    report = ConjectureReport(
        F_tag=profile_tag(F),
        J_tag=j_tag(J),
        smooth=smooth,
        commutant=commutant,
        in_commutant=commutant.residual <= tolerance,
    )
    if not report.in_commutant:
        logger.warning(f"⚠️ 可換子に入っていません (残差 {commutant.residual:.3e})")
        return report

    family = build_family("shear_plus", {"profile": F, "J": skew_matrix(J, grid.n).tolist()}, grid.n)
    with PerformanceLogger("シンボル回復"):
        recovered = recover_symbol(A, points, params, experimental=operator is not None, workers=workers)
    errors = []
    for p, (z, zeta) in enumerate(points):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
        exact = family.evaluate(z[None, :], zeta[None, :], fibers)[:, 0]
        errors.append(float(np.max(np.abs(recovered[p] - exact))))
    report.recovered = [complex(v) for v in recovered[:, 0]]
    report.recovery_error = max(errors)
    logger.info(f"📊 デモ: {report.verdict}, 回復誤差 {report.recovery_error:.3e}")
    return report
