"""
シンボル回復: 核 γ₁, γ₂, u, v、再構成積分 (直接経路)、左逆写像 S (作用素経路)

直接経路は平滑化像 b の閉形式記述子を使って三重積分を中点則で評価し、
既定では刻みを半分にした値と Richardson 外挿する。作用素経路は orbit_b で
B_{z,ζ} を作り、η ノードごとの F*v(·,η) に B を作用させてから conj(u) と積分する。
η 方向の和は位置・周波数について分離できるので、点に依存しない核行列
P = Σ_η conj(u)·F*v を一度だけ組み立てる。
"""

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.bootstrap import params_hash
from utils.error_handler import NumericalInstabilityError, PerformanceLogger, ValidationError, log_grid_operation
from utils.grid import Grid
from utils.heisenberg import OrbitStencil, orbit_b
from utils.quantize import ModuleOp, is_quantized, quantize
from utils.symbols import Symbol, shift_symbol, smoothing_image

logger = logging.getLogger(__name__)

# γ₂ の裾 ∫_T^∞ t e^{-t} dt = (T+1)e^{-T} を 10⁻³ 未満に抑える下限
TAIL_MIN = 12.0
# 粗いパラメータ (n = 2 のデモ) での下限
COARSE_TAIL_MIN = 6.0

# F*v のパネル求積: パネル幅の上限と 1 パネルあたりの Gauss-Legendre 分点数
PANEL_WIDTH = 0.5
PANEL_NODES = 12

RESULT_COLUMNS = [
    "experiment", "n", "fiber", "z", "zeta", "re_S", "im_S",
    "re_a", "im_a", "abs_err", "params_hash", "runtime_ms",
]


@dataclass(frozen=True)
class RecoveryParams:
    """
    回復の求積パラメータ

    x, η ∈ [-T, 0]、ξ ∈ [η, η + W]。Q* は各変数の分点数、delta は orbit_b の
    差分刻み (None ならグリッド刻み h)。richardson が真なら直接経路は
    (Q, 2Q) の求積値を外挿する。
    """
    T: float = 16.0
    W: float = 16.0
    Qx: int = 160
    Qxi: int = 160
    Qeta: int = 160
    midpoint: bool = True
    delta: Optional[float] = None
    stencil_order: int = 4
    richardson: bool = True
    jump_correction: bool = True
    coarse: bool = False

    def __post_init__(self):
        minimum = COARSE_TAIL_MIN if self.coarse else TAIL_MIN
        if self.T < minimum or self.W < minimum:
            raise ValidationError(
                f"裾の切断が大きすぎます: T={self.T}, W={self.W} (下限 {minimum})"
            )
        for name in ("Qx", "Qxi", "Qeta"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} は 1 以上: {getattr(self, name)}")
        if self.delta is not None and not self.delta > 0:
            raise ValidationError(f"δ は正である必要があります: {self.delta}")
        if not self.midpoint:
            logger.warning("⚠️ 中点オフセットなしでは分点が核の不連続線に近づきます")

    @property
    def tail_bound(self) -> float:
        """切断誤差の目安 (T+1)e^{-T} + (W+1)e^{-W}"""
        return (self.T + 1) * np.exp(-self.T) + (self.W + 1) * np.exp(-self.W)

    @property
    def rule_order(self) -> int:
        """刻みに対する求積誤差の次数 (中点則 2、端点則 1)"""
        return 2 if self.midpoint else 1

    def refined(self, factor: int = 2, **overrides) -> "RecoveryParams":
        """全分点数を factor 倍にしたパラメータ"""
        data = asdict(self)
        for name in ("Qx", "Qxi", "Qeta"):
            data[name] = int(data[name]) * factor
        data.update(overrides)
        return RecoveryParams(**data)

    def without_extrapolation(self) -> "RecoveryParams":
        return replace(self, richardson=False)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "RecoveryParams":
        data = dict(data or {})
        if "Q" in data:
            q = int(data.pop("Q"))
            for name in ("Qx", "Qxi", "Qeta"):
                data.setdefault(name, q)
        return cls(**data)


def gamma1(t):
    """(∂_t + 1) の基本解: t ≥ 0 で e^{-t}、それ以外 0"""
    t = np.asarray(t, dtype=float)
    return np.where(t >= 0, np.exp(-np.maximum(t, 0.0)), 0.0)


def gamma2(t):
    """(∂_t + 1)² の基本解: t ≥ 0 で t·e^{-t}、それ以外 0"""
    t = np.asarray(t, dtype=float)
    positive = np.maximum(t, 0.0)
    return np.where(t >= 0, positive * np.exp(-positive), 0.0)


def kernel_v(xi, eta):
    """v(ξ,η) = γ₁(ξ - η) / (1 + iξ)²"""
    xi = np.asarray(xi, dtype=float)
    return gamma1(xi - np.asarray(eta, dtype=float)) / (1.0 + 1j * xi) ** 2


def kernel_u(x, eta):
    """
    u(x,η) = (1 + ∂_η)[(1 - iη)² γ₂(-x) γ₂(-η) e^{ixη}]

    領域 {x ≤ 0, η ≤ 0} での積の微分による閉形式 (それ以外は 0)。
    η = 0 では η < 0 側の極限値を返す。
    """
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    inside = (x <= 0) & (eta <= 0)
    xs = np.minimum(x, 0.0)
    es = np.minimum(eta, 0.0)
    a = 1.0 - 1j * es
    bracket = a * (1.0 + es * (2.0 + 1j * xs)) - 2j * es
    value = xs * np.exp(xs) * np.exp((1.0 + 1j * xs) * es) * a * bracket
    return np.where(inside, value, 0.0)


def kernel_u_bracket(x, eta):
    """(1 - iη)² γ₂(-x) γ₂(-η) e^{ixη} (差分オラクル用)"""
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return (1.0 - 1j * eta) ** 2 * gamma2(-x) * gamma2(-eta) * np.exp(1j * x * eta)


def _coordinatewise(kernel, first, second):
    first = np.asarray(first, dtype=float)
    second = np.asarray(second, dtype=float)
    if first.shape[-1:] != second.shape[-1:]:
        raise ValidationError(f"次元の不一致: {first.shape} と {second.shape}")
    if first.shape[-1] not in (1, 2):
        raise ValidationError(f"n は 1 または 2: {first.shape[-1]}")
    out = kernel(first[..., 0], second[..., 0])
    for i in range(1, first.shape[-1]):
        out = out * kernel(first[..., i], second[..., i])
    return out


def kernel_u_n(x, eta):
    """u_n(x,η) = ∏_i u(x_i, η_i) (最終軸が成分)"""
    return _coordinatewise(kernel_u, x, eta)


def kernel_v_n(xi, eta):
    """v_n(ξ,η) = ∏_i v(ξ_i, η_i) (最終軸が成分)"""
    return _coordinatewise(kernel_v, xi, eta)


def _nodes(lower: float, upper: float, count: int, midpoint: bool) -> np.ndarray:
    step = (upper - lower) / count
    offset = 0.5 if midpoint else 0.0
    return lower + (np.arange(count) + offset) * step


def frequency_weights(xi_axis: np.ndarray, eta: np.ndarray, jump_correction: bool = True) -> np.ndarray:
    """
    一様な周波数分点上で ∫_η^∞ dξ を近似する相対重み (形状 (Qη, N))

    ξ < η の分点は 0。jump_correction が真なら、η の直上の 2 分点に
    跳びを跨ぐ台形則の重みを与える。θ = (ξ_{k0} - η)/Δξ として
    w_{k0} = 1/2 + θ(2+θ)/2、w_{k0+1} = 1 - θ²/2。
    """
    xi_axis = np.asarray(xi_axis, dtype=float)
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    weights = (xi_axis[None, :] >= eta[:, None]).astype(float)
    if not jump_correction:
        return weights
    spacing = xi_axis[1] - xi_axis[0]
    first = np.searchsorted(xi_axis, eta, side="left")
    for q, k0 in enumerate(first):
        # 下端より下の η では跳びがグリッド外にある
        if (k0 == 0 and eta[q] < xi_axis[0]) or k0 >= xi_axis.size:
            continue
        theta = (xi_axis[k0] - eta[q]) / spacing
        weights[q, k0] = 0.5 + 0.5 * theta * (2.0 + theta)
        if k0 + 1 < xi_axis.size:
            weights[q, k0 + 1] = 1.0 - 0.5 * theta ** 2
    return weights


def _u_samples(x_axis: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """conj(u(x_j, η_q)) (形状 (N, Qη))。x > 0 の行は評価せず 0"""
    if np.any(eta > 0):
        raise ValidationError("η 分点は η ≤ 0 に限ります")
    out = np.zeros((x_axis.size, eta.size), dtype=complex)
    rows = x_axis <= 0
    out[rows] = np.conj(kernel_u(x_axis[rows][:, None], eta[None, :]))
    return out


def _v_samples(xi_axis: np.ndarray, eta: np.ndarray, jump_correction: bool) -> np.ndarray:
    """重み付き v(ξ_k, η_q) (形状 (Qη, N))。ξ < η の列は評価せず 0"""
    weights = frequency_weights(xi_axis, eta, jump_correction)
    out = np.zeros(weights.shape, dtype=complex)
    support = weights != 0.0
    rows, cols = np.nonzero(support)
    out[rows, cols] = weights[rows, cols] * kernel_v(xi_axis[cols], eta[rows])
    return out


def _panel_rule(width: float, max_frequency: float) -> Tuple[np.ndarray, np.ndarray]:
    """[0, width] の複合 Gauss-Legendre 則。1 パネルでの位相の回りは π 以下"""
    span = min(PANEL_WIDTH, np.pi / max(max_frequency, 1.0))
    panels = int(np.ceil(width / span))
    span = width / panels
    nodes, weights = np.polynomial.legendre.leggauss(PANEL_NODES)
    s = (np.arange(panels)[:, None] + 0.5 * (nodes[None, :] + 1.0)) * span
    w = np.broadcast_to(0.5 * span * weights, s.shape)
    return s.ravel(), w.ravel()


def adjoint_transform_v(x_axis: np.ndarray, eta: np.ndarray, W: float) -> np.ndarray:
    """
    (F* v(·,η_q))(x_l) = (2π)^{-1/2} ∫_η^{η+W} e^{i x_l ξ} v(ξ,η_q) dξ (形状 (Qη, N))

    ξ = η + s と置くと被積分関数は e^{ixη}·e^{(ix-1)s}/(1+i(η+s))² で、s ∈ [0, W] で
    滑らか。跳びは積分の下端に来るので、作用素グリッドの周波数分点には依らない
    パネル求積で直接評価する。
    """
    x_axis = np.asarray(x_axis, dtype=float)
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    s, w = _panel_rule(W, float(np.max(np.abs(x_axis))))
    envelope = w * np.exp(-s) / (1.0 + 1j * (eta[:, None] + s[None, :])) ** 2
    oscillation = np.exp(1j * np.outer(s, x_axis))
    return np.exp(1j * np.outer(eta, x_axis)) * (envelope @ oscillation) / np.sqrt(2.0 * np.pi)


def _point(z, zeta, n: int) -> Tuple[np.ndarray, np.ndarray]:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    if z.size != n or zeta.size != n:
        raise ValidationError(f"回復点の次元が n = {n} と一致しません: z={z.tolist()}, ζ={zeta.tolist()}")
    return z, zeta


def _check_finite(values: np.ndarray, context: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NumericalInstabilityError(f"{context}: 非有限値が発生しました")
    return values


def reconstruct_from_b(b: Symbol, z, zeta, params: RecoveryParams) -> np.ndarray:
    """
    a(z,ζ) = ∫ conj(u(x,η)) e^{ix·ξ} b(x+z, ξ+ζ) v(ξ,η) dξ dx dη

    記述子付きの b は中点則で評価し、params.richardson が真なら刻み h と h/2 の
    値から (2^p I(h/2) - I(h)) / (2^p - 1) (p は rule_order) を返す。

    Args:
        b: 平滑化像 (記述子付き)、または記述子なしの n = 1 標本
        z, zeta: 評価点
        params: 求積パラメータ

    Returns:
        ファイバーごとの複素値 (長さ m)

    Raises:
        ValidationError: 記述子なしでグリッド非整列の点、または n = 2 の記述子なし標本
    """
    n = b.grid.n
    z, zeta = _point(z, zeta, n)
    if not np.any(b.values):
        return np.zeros(b.fibers.m, dtype=complex)
    if b.family is None:
        return _reconstruct_sampled(b, z, zeta, params)

    coarse = _reconstruct_midpoint(b, z, zeta, params)
    if not params.richardson:
        return coarse
    fine = _reconstruct_midpoint(b, z, zeta, params.refined(2))
    gain = 2.0 ** params.rule_order
    return (gain * fine - coarse) / (gain - 1.0)


def _reconstruct_midpoint(b: Symbol, z: np.ndarray, zeta: np.ndarray, params: RecoveryParams) -> np.ndarray:
    n = b.grid.n
    eta_axis = _nodes(-params.T, 0.0, params.Qeta, params.midpoint)
    x_axis = _nodes(-params.T, 0.0, params.Qx, params.midpoint)
    s_axis = _nodes(0.0, params.W, params.Qxi, params.midpoint)
    weight = (params.T / params.Qeta * params.T / params.Qx * params.W / params.Qxi) ** n

    x_nodes = np.stack(np.meshgrid(*([x_axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    s_nodes = np.stack(np.meshgrid(*([s_axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    ux = x_nodes[:, None, :]

    total = np.zeros(b.fibers.m, dtype=complex)
    for eta in itertools.product(eta_axis, repeat=n):
        eta = np.asarray(eta)
        xi = eta[None, :] + s_nodes
        u = np.conj(kernel_u_n(x_nodes, eta[None, :]))
        v = kernel_v_n(xi, eta[None, :])
        phase = np.exp(1j * np.sum(ux * xi[None, :, :], axis=-1))
        values = b.family.evaluate(ux + z, xi[None, :, :] + zeta, b.fibers)
        total += np.einsum("j,mjk,jk,k->m", u, values, phase, v)
    return _check_finite(weight * total, "reconstruct_from_b")


def _reconstruct_sampled(b: Symbol, z: np.ndarray, zeta: np.ndarray, params: RecoveryParams) -> np.ndarray:
    """記述子なし n = 1 の b: グリッド分点そのもので求積"""
    grid = b.grid
    if grid.n != 1:
        raise ValidationError("記述子なしの再構成は n = 1 のみ対応")
    shifted = shift_symbol(b, z, zeta).values
    x_axis, xi_axis = grid.x_axis, grid.xi_axis
    eta_axis = _nodes(-params.T, 0.0, params.Qeta, params.midpoint)
    inside = (x_axis >= -params.T).astype(float)
    U = _u_samples(x_axis, eta_axis) * inside[:, None]
    V = _v_samples(xi_axis, eta_axis, params.jump_correction)
    kernel = (U @ V) * np.exp(1j * np.outer(x_axis, xi_axis))
    weight = params.T / params.Qeta * grid.h * grid.dxi
    return _check_finite(weight * np.einsum("mjk,jk->m", shifted, kernel), "reconstruct_from_b")


def recovery_kernel(grid: Grid, params: RecoveryParams) -> np.ndarray:
    """
    点に依存しない核行列 c · (⊗ⁿ P)、P[j,l] = Σ_q conj(u(x_j,η_q)) (F* v(·,η_q))(x_l)

    (S A)(z,ζ)_λ = Σ_{j,l} B_λ[j,l] · K[j,l] となる K を返す。F*v は
    adjoint_transform_v で位置分点ごとに評価する。
    """
    axis = grid.axis_grid()
    eta_axis = _nodes(-params.T, 0.0, params.Qeta, params.midpoint)
    U = _u_samples(axis.x_axis, eta_axis)
    Fv = adjoint_transform_v(axis.x_axis, eta_axis, params.W)
    P = U @ Fv
    if grid.n == 2:
        P = np.kron(P, P)
    scale = (2.0 * np.pi) ** (grid.n / 2) * (params.T / params.Qeta * grid.h) ** grid.n
    return scale * P


@log_grid_operation
def recover_symbol(
    op: ModuleOp,
    points: Sequence[Tuple],
    params: RecoveryParams,
    experimental: bool = False,
    workers: int = 1,
) -> np.ndarray:
    """
    (S A)(z,ζ) = (2π)^{n/2} ⟨ũ, (B_{z,ζ} F* ⊗ I) ṽ⟩ を各点で評価

    Args:
        op: 有界作用素 (quantize の出力、または experimental=True)
        points: (z, ζ) の列
        params: 求積パラメータ
        experimental: 量子化でない作用素の回復を許可する
        workers: 点ごとの並列数

    Returns:
        形状 (点数, m) の複素配列

    Raises:
        ValidationError: グリッドが核の台に対して小さい、または量子化でない作用素
        NumericalInstabilityError: 非有限値
    """
    grid = op.grid
    if grid.L < params.T:
        raise ValidationError(f"作用素グリッドの半幅 L={grid.L} が T={params.T} より小さい")
    if not is_quantized(op) and not experimental:
        raise ValidationError(
            f"量子化でない作用素 ({op.provenance}) の回復には experimental=True が必要です"
        )
    stencil = OrbitStencil.for_grid(grid, params.stencil_order, params.delta)
    kernel = _check_finite(recovery_kernel(grid, params), "recovery_kernel")
    points = [_point(z, zeta, grid.n) for z, zeta in points]

    def recover_one(item):
        index, (z, zeta) = item
        logger.info(f"🔧 回復点 {index + 1}/{len(points)}: z={z.tolist()}, ζ={zeta.tolist()}")
        B = orbit_b(op, z, zeta, stencil)
        return np.einsum("mjl,jl->m", B.matrices, kernel)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(recover_one, enumerate(points)))
    else:
        values = [recover_one(item) for item in enumerate(points)]
    return _check_finite(np.array(values).reshape(len(points), op.fibers.m), "recover_symbol")


def exact_values(a: Symbol, points: Sequence[Tuple]) -> np.ndarray:
    """記述子から a(z,ζ) を評価 (形状 (点数, m))"""
    if a.family is None:
        raise ValidationError("厳密値の評価には記述子付きのシンボルが必要です")
    out = []
    for z, zeta in points:
        z, zeta = _point(z, zeta, a.grid.n)
        out.append(a.family.evaluate(z[None, :], zeta[None, :], a.fibers)[:, 0])
    return np.array(out)


def format_coordinate(value) -> str:
    """ベクトル座標は ';' で連結"""
    return ";".join(f"{v:.6g}" for v in np.atleast_1d(np.asarray(value, dtype=float)))


def result_rows(
    experiment: str,
    a: Symbol,
    points: Sequence[Tuple],
    recovered: np.ndarray,
    exact: np.ndarray,
    hash_value: str,
    runtime_ms: float = 0.0,
) -> pd.DataFrame:
    """結果 CSV スキーマの DataFrame"""
    rows = []
    for p, (z, zeta) in enumerate(points):
        for idx, label in enumerate(a.fibers.labels):
            value, truth = complex(recovered[p, idx]), complex(exact[p, idx])
            rows.append({
                "experiment": experiment,
                "n": a.grid.n,
                "fiber": label,
                "z": format_coordinate(z),
                "zeta": format_coordinate(zeta),
                "re_S": value.real,
                "im_S": value.imag,
                "re_a": truth.real,
                "im_a": truth.imag,
                "abs_err": abs(value - truth),
                "params_hash": hash_value,
                "runtime_ms": runtime_ms,
            })
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def roundtrip_report(
    a: Symbol,
    points: Sequence[Tuple],
    params: RecoveryParams,
    experiment: str = "roundtrip",
    workers: int = 1,
    record_timing: bool = False,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    S∘O の往復誤差 (作用素経路) と再構成積分の誤差 (直接経路)

    Returns:
        (作用素経路の表, 直接経路の表) いずれも結果 CSV スキーマ
    """
    if a.family is None:
        raise ValidationError("roundtrip_report には記述子付きのシンボルが必要です")
    hash_value = params_hash(a.grid.to_dict(), params.to_dict())
    exact = exact_values(a, points)

    started = time.perf_counter()
    with PerformanceLogger("作用素経路の回復"):
        recovered = recover_symbol(quantize(a), points, params, workers=workers)
    operator_ms = (time.perf_counter() - started) * 1000 if record_timing else 0.0

    started = time.perf_counter()
    with PerformanceLogger("直接経路の再構成"):
        b = smoothing_image(a)
        direct = np.array([reconstruct_from_b(b, z, zeta, params) for z, zeta in points])
    direct_ms = (time.perf_counter() - started) * 1000 if record_timing else 0.0

    operator_table = result_rows(experiment, a, points, recovered, exact, hash_value, operator_ms)
    direct_table = result_rows(f"{experiment}-direct", a, points, direct, exact, hash_value, direct_ms)
    logger.info(
        f"📊 往復誤差: 作用素経路 {operator_table['abs_err'].max():.3e}, "
        f"直接経路 {direct_table['abs_err'].max():.3e}"
    )
    return operator_table, direct_table
