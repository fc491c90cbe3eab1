"""
実験レジストリと実行ハーネス

各実験は設定辞書から表 (pandas.DataFrame) とアサーションの列を作る。
run_experiment は CSV と JSON サマリーを書き出し、全アサーションの合否を返す。
"""

import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.bootstrap import DEFAULT_SEED, EXPERIMENTS, config_hash, ensure_output_dir, params_hash
from utils.error_handler import ConfigError, PerformanceLogger
from utils.grid import (
    Grid,
    evaluate_profile,
    forward_transform,
    fourier,
    inverse_fourier,
    inverse_transform,
    make_grid,
    random_test_functions,
    test_function,
)
from utils.heisenberg import conjugate, covariance_residual, smoothness_probe
from utils.module_space import FiberSet, ModuleVec, embed_scalar, eval_fiber
from utils.profiles import gaussian_profile, profile_tag
from utils.quantize import (
    ModuleOp,
    apply,
    cv_bound_report,
    direct_apply_oracle,
    fiber_op,
    op_norm,
    quantize,
    symbol_apply,
)
from utils.recover import (
    RecoveryParams,
    exact_values,
    reconstruct_from_b,
    recover_symbol,
    result_rows,
    roundtrip_report,
)
from utils.rieffel import (
    balanced_half_width,
    commutant_residual,
    conjecture_demo,
    default_G_family,
    j_tag,
    make_LF,
)
from utils.symbols import Symbol, build_family, sample_family, smoothing_image

logger = logging.getLogger(__name__)

CHECK_COLUMNS = ["experiment", "check", "value", "tolerance", "pass"]
RIEFFEL_COLUMNS = ["experiment", "n", "N", "J_tag", "F_tag", "G_tag", "residual", "recovery_err", "flags"]
CONVERGENCE_COLUMNS = ["experiment", "N", "Q", "max_abs_err", "ratio"]

DEFAULT_J = [[0.0, 1.0], [-1.0, 0.0]]
DEFAULT_F = {"family": "gaussian", "width": 1.0}


@dataclass(frozen=True)
class Assertion:
    name: str
    value: float
    tolerance: float
    passed: bool

    def to_dict(self) -> Dict:
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance, "pass": self.passed}


def at_most(name: str, value: float, tolerance: float) -> Assertion:
    value = float(value)
    return Assertion(name, value, float(tolerance), bool(value <= tolerance))


def at_least(name: str, value: float, tolerance: float) -> Assertion:
    value = float(value)
    return Assertion(name, value, float(tolerance), bool(value >= tolerance))


@dataclass
class ExperimentResult:
    """CSV 表 (ファイル名の接尾辞 → 表) とアサーション"""
    tables: Dict[str, pd.DataFrame]
    assertions: List[Assertion]

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)


@dataclass
class Context:
    """実験ランナーに渡す設定の読み出しヘルパー"""
    config: Dict
    workers: int = 1
    defaults: Dict[str, float] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.config["experiment"]

    @property
    def seed(self) -> int:
        return int(self.config.get("seed", DEFAULT_SEED))

    @property
    def options(self) -> Dict:
        return self.config.get("options", {})

    @property
    def record_timing(self) -> bool:
        return bool(self.config.get("timing_in_csv", False))

    def tolerance(self, key: str) -> float:
        return float(self.config.get("tolerances", {}).get(key, self.defaults[key]))

    def grid(self, N: Optional[int] = None, L: Optional[float] = None) -> Grid:
        spec = self.config["grid"]
        return make_grid(spec["n"], N or spec["N"], spec["L"] if L is None else L)

    def fibers(self) -> FiberSet:
        labels = self.config.get("fibers")
        return FiberSet(tuple(labels)) if labels else FiberSet.scalar()

    def symbol(self, spec: Dict, grid: Grid, fibers: FiberSet) -> Symbol:
        family = build_family(spec["family"], spec.get("params"), grid.n, spec.get("amplitudes"))
        return sample_family(family, grid, fibers)

    def symbol_specs(self, default: Sequence[Dict]) -> List[Dict]:
        if "symbols" in self.config:
            return list(self.config["symbols"])
        if "symbol" in self.config:
            return [self.config["symbol"]]
        return list(default)

    def points(self) -> List[Tuple]:
        if "points" in self.config:
            return [(p["z"], p["zeta"]) for p in self.config["points"]]
        n = self.config["grid"]["n"]
        if n == 1:
            values = (-0.5, 0.0, 0.5)
            return [(z, zeta) for z in values for zeta in values]
        return [((0.0, 0.0), zeta) for zeta in ((0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, -0.5))]

    def recovery(self, **overrides) -> RecoveryParams:
        data = dict(self.config.get("recovery", {}))
        data.update(overrides)
        return RecoveryParams.from_dict(data)


def check_table(experiment: str, assertions: Sequence[Assertion], diagnostics: Sequence[Dict] = ()) -> pd.DataFrame:
    rows = [
        {"experiment": experiment, "check": a.name, "value": a.value, "tolerance": a.tolerance, "pass": a.passed}
        for a in assertions
    ]
    rows += [dict(experiment=experiment, **d) for d in diagnostics]
    return pd.DataFrame(rows, columns=CHECK_COLUMNS)


def _max_abs(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


# =============================================================================
# 実験ランナー
# =============================================================================

def run_ft_selftest(ctx: Context) -> ExperimentResult:
    """フーリエ変換の往復・Parseval・ガウシアン自己変換"""
    grid = ctx.grid()
    functions = random_test_functions(grid, int(ctx.options.get("count", 8)), ctx.seed)

    roundtrip = max(_max_abs(inverse_fourier(fourier(f)).values, f.values) for f in functions)
    parseval = 0.0
    for f in functions:
        energy = np.sum(np.abs(f.values) ** 2) * grid.h ** grid.n
        spectral = np.sum(np.abs(fourier(f).values) ** 2) * grid.dxi ** grid.n
        parseval = max(parseval, abs(spectral - energy) / energy)

    gaussian = test_function("gaussian", {"width": 1.0}, grid)
    expected = evaluate_profile(gaussian_profile(grid.n), grid, "frequency")
    self_transform = _max_abs(fourier(gaussian).values, expected)

    assertions = [
        at_most("fourier_roundtrip", roundtrip, ctx.tolerance("roundtrip")),
        at_most("parseval_relative", parseval, ctx.tolerance("parseval")),
        at_most("gaussian_self_transform", self_transform, ctx.tolerance("self_transform")),
    ]
    return ExperimentResult({"": check_table(ctx.name, assertions)}, assertions)


def run_quantize_check(ctx: Context) -> ExperimentResult:
    """閉形式の作用を持つシンボルと直接求積オラクルによる量子化の検証"""
    grid = ctx.grid()
    fibers = ctx.fibers()
    f = embed_scalar(test_function("gaussian", {"width": 1.0}, grid), fibers)
    tol = ctx.tolerance("exact")
    axes = tuple(range(1, grid.n + 1))

    def family_symbol(name: str, params: Dict) -> Symbol:
        return sample_family(build_family(name, params, grid.n), grid, fibers)

    mult = family_symbol("multiplication", {"profile": {"family": "gaussian", "width": 1.5, "center": 0.5}})
    expected = mult.values[:, :, 0].reshape((fibers.m,) + grid.shape) * f.values
    mult_err = _max_abs(apply(quantize(mult), f).values, expected)

    multiplier = family_symbol("multiplier", {"profile": {"family": "gaussian", "width": 2.0}})
    spectrum = multiplier.values[:, 0, :].reshape((fibers.m,) + grid.shape)
    expected = inverse_transform(spectrum * forward_transform(f.values, grid), grid)
    multiplier_err = _max_abs(apply(quantize(multiplier), f).values, expected)

    constant = family_symbol("constant", {"value": 2.5})
    constant_err = _max_abs(apply(quantize(constant), f).values, 2.5 * f.values)

    steps = int(ctx.options.get("shift_steps", 2))
    shift = family_symbol("multiplier", {"profile": {"family": "plane_wave", "frequency": steps * grid.h}})
    expected = np.roll(f.values, tuple([-steps] * grid.n), axis=axes)
    shift_err = _max_abs(apply(quantize(shift), f).values, expected)

    gaussian = family_symbol("gaussian", {})
    fft_path = symbol_apply(gaussian, f)
    oracle_err = _max_abs(fft_path.values, direct_apply_oracle(gaussian, f).values)
    matrix_err = _max_abs(apply(quantize(gaussian), f).values, fft_path.values)
    radius2 = np.sum(grid.nodes() ** 2, axis=-1).reshape(grid.shape)
    baseline = np.exp(-0.75 * radius2) / 2.0 ** (grid.n / 2)
    baseline_err = _max_abs(fft_path.values, np.broadcast_to(baseline, fft_path.values.shape))

    assertions = [
        at_most("multiplication_symbol", mult_err, tol),
        at_most("multiplier_symbol", multiplier_err, tol),
        at_most("constant_symbol", constant_err, tol),
        at_most("grid_step_shift_symbol", shift_err, tol),
        at_most("fft_vs_direct_oracle", oracle_err, tol),
        at_most("matrix_vs_fft_path", matrix_err, tol),
        at_most("gaussian_closed_form_baseline", baseline_err, ctx.tolerance("baseline")),
    ]
    return ExperimentResult({"": check_table(ctx.name, assertions)}, assertions)


def run_covariance(ctx: Context) -> ExperimentResult:
    """conjugate(O(a)) = O(shift a) と群の性質"""
    grid = ctx.grid()
    fibers = ctx.fibers()
    specs = ctx.symbol_specs([{"family": "gaussian"}])
    a = ctx.symbol(specs[0], grid, fibers)
    pairs = ctx.options.get("aligned_steps", [[0, 0], [1, 0], [0, 1], [2, -1], [-3, 2]])

    worst = 0.0
    for z_steps, zeta_steps in pairs:
        z = np.full(grid.n, z_steps * grid.h)
        zeta = np.full(grid.n, zeta_steps * grid.dxi)
        residual = covariance_residual(a, z, zeta)
        logger.debug(f"共変性残差 z={z.tolist()}, ζ={zeta.tolist()}: {residual:.3e}")
        worst = max(worst, residual)

    op = quantize(a)
    z1 = np.full(grid.n, float(ctx.options.get("group_z1", 0.3)))
    z2 = np.full(grid.n, float(ctx.options.get("group_z2", 0.45)))
    zero = np.zeros(grid.n)
    group = op_norm(conjugate(conjugate(op, z1, zero), z2, zero) - conjugate(op, z1 + z2, zero))

    assertions = [
        at_most("aligned_covariance", worst, ctx.tolerance("covariance")),
        at_most("group_property", group, ctx.tolerance("group")),
    ]
    diagnostics = []
    if ctx.options.get("probe", True):
        report = smoothness_probe(op, max_order=2)
        for row in report.rows:
            diagnostics.append({
                "check": f"probe_{row.direction}_order{row.order}_ratio",
                "value": row.ratio,
                "tolerance": float("nan"),
                "pass": row.consistent,
            })
    return ExperimentResult({"": check_table(ctx.name, assertions, diagnostics)}, assertions)


def run_reconstruct_identity(ctx: Context) -> ExperimentResult:
    """再構成積分 (直接経路) と刻みを半分にしたときの誤差の縮小"""
    grid = ctx.grid()
    fibers = ctx.fibers()
    params = ctx.recovery()
    raw = params.without_extrapolation()
    refined = raw.refined(2)
    hash_value = params_hash(grid.to_dict(), params.to_dict())
    points = ctx.points()
    specs = ctx.symbol_specs([{"family": "constant", "params": {"value": 1.0}}, {"family": "gaussian"}])

    tables, assertions = [], []
    for spec in specs:
        a = ctx.symbol(spec, grid, fibers)
        b = smoothing_image(a)
        exact = exact_values(a, points)
        started = time.perf_counter()
        values = np.array([reconstruct_from_b(b, z, zeta, params) for z, zeta in points])
        runtime = (time.perf_counter() - started) * 1000 if ctx.record_timing else 0.0
        table = result_rows(ctx.name, a, points, values, exact, hash_value, runtime)
        tables.append(table)
        tag = spec["family"]
        assertions.append(at_most(f"{tag}_max_error", table["abs_err"].max(), ctx.tolerance("reconstruct")))

        origin = (np.zeros(grid.n), np.zeros(grid.n))
        truth = exact_values(a, [origin])[0]
        coarse = float(np.max(np.abs(reconstruct_from_b(b, *origin, raw) - truth)))
        fine = float(np.max(np.abs(reconstruct_from_b(b, *origin, refined) - truth)))
        # 丸め誤差の水準では比に意味がない
        if coarse > ctx.tolerance("ratio_floor"):
            assertions.append(at_least(f"{tag}_halving_ratio", coarse / max(fine, 1e-300), ctx.tolerance("halving")))
        logger.info(f"📊 {tag}: 誤差 {coarse:.3e} → {fine:.3e} (刻み半分)")

    return ExperimentResult({"": pd.concat(tables, ignore_index=True)}, assertions)


def run_roundtrip(ctx: Context) -> ExperimentResult:
    """S∘O = id (作用素経路) と直接経路の誤差表"""
    grid = ctx.grid()
    fibers = ctx.fibers()
    params = ctx.recovery()
    points = ctx.points()
    operator_tables, direct_tables, assertions = [], [], []

    for spec in ctx.symbol_specs([{"family": "gaussian"}]):
        a = ctx.symbol(spec, grid, fibers)
        operator_table, direct_table = roundtrip_report(
            a, points, params, ctx.name, ctx.workers, ctx.record_timing
        )
        operator_tables.append(operator_table)
        direct_tables.append(direct_table)
        tag = spec["family"]
        assertions.append(at_most(f"{tag}_operator_max_error", operator_table["abs_err"].max(),
                                  ctx.tolerance("roundtrip")))
        assertions.append(at_most(f"{tag}_direct_max_error", direct_table["abs_err"].max(),
                                  ctx.tolerance("direct")))
        route_gap = np.max(np.hypot(operator_table["re_S"] - direct_table["re_S"],
                                    operator_table["im_S"] - direct_table["im_S"]))
        assertions.append(at_most(f"{tag}_route_agreement", route_gap, ctx.tolerance("agreement")))

        amplitudes = spec.get("amplitudes")
        if amplitudes and fibers.m > 1:
            assertions.append(at_most(f"{tag}_fiber_ratio", _fiber_ratio_error(operator_table, fibers, amplitudes),
                                      ctx.tolerance("fiber_ratio")))

    tables = {
        "": pd.concat(operator_tables, ignore_index=True),
        "_direct": pd.concat(direct_tables, ignore_index=True),
    }
    return ExperimentResult(tables, assertions)


def _fiber_ratio_error(table: pd.DataFrame, fibers: FiberSet, amplitudes: Sequence[float]) -> float:
    """各点で S_λ / S_λ1 と振幅比の相対ずれの最大値 (|S_λ1| が小さい点は除く)"""
    values = (table["re_S"] + 1j * table["im_S"]).to_numpy().reshape(-1, fibers.m)
    worst = 0.0
    for row in values:
        if abs(row[0]) < 1e-6:
            continue
        for idx in range(1, fibers.m):
            target = amplitudes[idx] / amplitudes[0]
            worst = max(worst, abs(row[idx] / row[0] - target) / abs(target))
    return worst


def run_cv_bound(ctx: Context) -> ExperimentResult:
    """a_θ = sin(θx)sin(θξ) に対する ‖O(a_θ)‖ / セミノルム"""
    grid = ctx.grid()
    fibers = ctx.fibers()
    thetas = [float(t) for t in ctx.options.get("thetas", [1.0, 2.0, 4.0])]

    assertions, diagnostics, ratios = [], [], []
    for theta in thetas:
        a = sample_family(build_family("trig", {"freq_x": theta, "freq_xi": theta}, grid.n), grid, fibers)
        record = cv_bound_report(a)
        ratios.append(record.ratio)
        assertions.append(at_most(f"ratio_theta_{theta:g}", record.ratio, ctx.tolerance("ratio")))
        diagnostics.append({"check": f"norm_theta_{theta:g}", "value": record.norm,
                            "tolerance": float("nan"), "pass": True})
        diagnostics.append({"check": f"seminorm_theta_{theta:g}", "value": record.seminorm,
                            "tolerance": float("nan"), "pass": True})
    assertions.append(at_most("ratio_spread", max(ratios) / min(ratios), ctx.tolerance("spread")))
    return ExperimentResult({"": check_table(ctx.name, assertions, diagnostics)}, assertions)


def run_fibers(ctx: Context) -> ExperimentResult:
    """ファイバー分解: ‖T‖ = max_λ ‖T_λ‖、V_λ f = 0 ⇒ V_λ T f = 0"""
    grid = ctx.grid()
    fibers = ctx.fibers() if ctx.config.get("fibers") else FiberSet.numbered(3)
    rng = np.random.default_rng(ctx.seed)
    tol = ctx.tolerance("norm")

    base = quantize(sample_family(build_family("gaussian", {}, grid.n), grid, FiberSet.scalar()))
    unit = base.matrices[0] / op_norm(base)
    slice_norms = [float(s) for s in ctx.options.get("slice_norms", [1.0, 2.0, 0.5])][:fibers.m]
    diagonal = ModuleOp(fibers, grid, np.stack([s * unit for s in slice_norms]))
    module_norm_value = op_norm(diagonal)

    small = make_grid(1, int(ctx.options.get("svd_N", 16)), float(ctx.options.get("svd_L", 4.0)))
    # ノルムが O(1) になるよう正規化
    blocks = (rng.standard_normal((fibers.m, small.size, small.size))
              + 1j * rng.standard_normal((fibers.m, small.size, small.size))) / (4.0 * np.sqrt(small.size))
    block_op = ModuleOp(fibers, small, blocks)
    dense = np.zeros((fibers.m * small.size,) * 2, dtype=complex)
    for idx in range(fibers.m):
        span = slice(idx * small.size, (idx + 1) * small.size)
        dense[span, span] = blocks[idx]
    svd_gap = abs(op_norm(block_op) - np.linalg.svd(dense, compute_uv=False)[0])

    leaks = 0.0
    for _ in range(int(ctx.options.get("trials", 20))):
        matrices = rng.standard_normal((fibers.m, grid.size, grid.size))
        op = ModuleOp(fibers, grid, matrices)
        values = rng.standard_normal((fibers.m,) + grid.shape)
        label = fibers.labels[int(rng.integers(fibers.m))]
        values[fibers.index(label)] = 0.0
        image = apply(op, ModuleVec(fibers, grid, values))
        leaks = max(leaks, float(np.max(np.abs(eval_fiber(image, label).values))))

    amplitudes = list(range(1, fibers.m + 1))
    scaled = quantize(sample_family(build_family("gaussian", {}, grid.n, amplitudes), grid, fibers))
    first = fiber_op(scaled, fibers.labels[0])
    amplitude_gap = max(
        _max_abs(fiber_op(scaled, label), amplitudes[idx] * first) for idx, label in enumerate(fibers.labels)
    )

    assertions = [
        at_most("module_norm_is_max_slice", abs(module_norm_value - max(slice_norms)), tol),
        at_most("module_norm_vs_block_svd", svd_gap, tol),
        at_most("vanishing_fiber_preserved", leaks, 0.0),
        at_most("fiber_amplitude_linearity", amplitude_gap, ctx.tolerance("linearity")),
    ]
    return ExperimentResult({"": check_table(ctx.name, assertions)}, assertions)


def _rieffel_row(ctx: Context, grid: Grid, J, F: Dict, G_tag: str, residual: float,
                 recovery_err: float = float("nan"), flags: str = "") -> Dict:
    return {
        "experiment": ctx.name, "n": grid.n, "N": grid.N, "J_tag": j_tag(J),
        "F_tag": profile_tag(F) if F else "", "G_tag": G_tag, "residual": residual,
        "recovery_err": recovery_err, "flags": flags,
    }


def _multiplication_by_x1(grid: Grid, fibers: FiberSet) -> ModuleOp:
    family = build_family("multiplication", {"profile": {"family": "linear", "axis": 0}}, grid.n)
    return quantize(sample_family(family, grid, fibers))


def run_commutant(ctx: Context) -> ExperimentResult:
    """[L_F, R_G] の相対残差のグリッド細分化と負の対照"""
    fibers = ctx.fibers()
    J = ctx.config.get("J", DEFAULT_J)
    F = ctx.config.get("F", DEFAULT_F)
    G_list = ctx.config.get("G") or default_G_family(3)
    N_values = [int(N) for N in ctx.options.get("N_values", [ctx.config["grid"]["N"], 32])]
    balanced = bool(ctx.options.get("balanced", True))

    rows, residuals = [], []
    for N in N_values:
        grid = ctx.grid(N, balanced_half_width(N) if balanced else None)
        result = commutant_residual(make_LF(F, J, grid, fibers), G_list, J, ctx.workers)
        residuals.append(result.residual)
        rows.append(_rieffel_row(ctx, grid, J, F, result.attained_by, result.residual))

    base_grid = ctx.grid(N_values[0], balanced_half_width(N_values[0]) if balanced else None)
    control = commutant_residual(_multiplication_by_x1(base_grid, fibers), G_list, J, ctx.workers)
    rows.append(_rieffel_row(ctx, base_grid, J, {"family": "linear", "axis": 0}, control.attained_by,
                             control.residual, flags="negative_control"))

    assertions = [at_most("commutant_residual", residuals[0], ctx.tolerance("residual"))]
    for i in range(1, len(residuals)):
        assertions.append(at_least(f"refinement_ratio_N{N_values[i]}", residuals[i - 1] / max(residuals[i], 1e-300),
                                   ctx.tolerance("refinement")))
    assertions.append(at_least("negative_control_residual", control.residual, ctx.tolerance("negative_control")))
    return ExperimentResult({"": pd.DataFrame(rows, columns=RIEFFEL_COLUMNS)}, assertions)


def run_conjecture_demo(ctx: Context) -> ExperimentResult:
    """A = L_F の滑らかさ・可換子・シンボル回復 (n = 2、粗いグリッド)"""
    grid = ctx.grid()
    fibers = ctx.fibers()
    J = ctx.config.get("J", DEFAULT_J)
    F = ctx.config.get("F", DEFAULT_F)
    G_list = ctx.config.get("G") or default_G_family(3)
    params = ctx.recovery()
    points = ctx.points()
    residual_tol = ctx.tolerance("residual")

    report = conjecture_demo(F, J, params, grid, points, fibers, G_list,
                             tolerance=residual_tol, workers=ctx.workers)
    rows = [_rieffel_row(ctx, grid, J, F, report.commutant.attained_by, report.commutant.residual,
                         report.recovery_error, report.flags)]
    assertions = [
        at_least("translation_smooth", float(report.smooth.consistent), 1.0),
        at_most("commutant_residual", report.commutant.residual, residual_tol),
        at_most("symbol_recovery_error", report.recovery_error, ctx.tolerance("recovery")),
    ]

    if ctx.options.get("negative_control", True):
        control = conjecture_demo(F, J, params, grid, points, fibers, G_list,
                                  operator=_multiplication_by_x1(grid, fibers),
                                  tolerance=residual_tol, workers=ctx.workers)
        rows.append(_rieffel_row(ctx, grid, J, {"family": "linear", "axis": 0}, control.commutant.attained_by,
                                 control.commutant.residual, control.recovery_error,
                                 f"negative_control;{control.flags}"))
        assertions.append(at_least("negative_control_rejected", float(not control.in_commutant), 1.0))
    return ExperimentResult({"": pd.DataFrame(rows, columns=RIEFFEL_COLUMNS)}, assertions)


def run_convergence(ctx: Context) -> ExperimentResult:
    """グリッドと求積の同時細分化での往復誤差の減少"""
    fibers = ctx.fibers()
    levels = ctx.config.get("levels") or [{"N": 128, "Q": 80}, {"N": 256, "Q": 160}, {"N": 512, "Q": 320}]
    spec = ctx.symbol_specs([{"family": "gaussian"}])[0]
    points = ctx.points()

    rows, errors = [], []
    for level in levels:
        grid = ctx.grid(int(level["N"]))
        overrides = {"Q": int(level["Q"])} if "Q" in level else {}
        params = ctx.recovery(**overrides)
        a = ctx.symbol(spec, grid, fibers)
        with PerformanceLogger(f"細分化レベル N={grid.N}"):
            recovered = recover_symbol(quantize(a), points, params, workers=ctx.workers)
        error = float(np.max(np.abs(recovered - exact_values(a, points))))
        ratio = errors[-1] / max(error, 1e-300) if errors else float("nan")
        errors.append(error)
        rows.append({"experiment": ctx.name, "N": grid.N, "Q": params.Qeta, "max_abs_err": error, "ratio": ratio})
        logger.info(f"📊 N={grid.N}, Q={params.Qeta}: 最大誤差 {error:.3e}")

    assertions = [
        at_least(f"ratio_N{row['N']}", row["ratio"], ctx.tolerance("ratio")) for row in rows[1:]
    ]
    return ExperimentResult({"": pd.DataFrame(rows, columns=CONVERGENCE_COLUMNS)}, assertions)


# =============================================================================
# レジストリ
# =============================================================================

@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    runner: Callable[[Context], ExperimentResult]
    required: Tuple[str, ...]
    expected_runtime: str
    description: str
    tolerances: Dict[str, float]

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "required": list(self.required),
            "expected_runtime": self.expected_runtime,
            "description": self.description,
            "tolerances": dict(self.tolerances),
        }


REGISTRY: Dict[str, ExperimentSpec] = {
    spec.name: spec for spec in (
        ExperimentSpec("ft-selftest", run_ft_selftest, ("grid",), "< 1 s",
                       "フーリエ変換の往復・Parseval・ガウシアン自己変換",
                       {"roundtrip": 1e-12, "parseval": 1e-10, "self_transform": 1e-10}),
        ExperimentSpec("quantize-check", run_quantize_check, ("grid",), "< 10 s",
                       "閉形式シンボルと直接求積オラクルによる量子化の検証",
                       {"exact": 1e-10, "baseline": 1e-10}),
        ExperimentSpec("covariance", run_covariance, ("grid",), "< 30 s",
                       "ハイゼンベルク共変性と群の性質",
                       {"covariance": 1e-9, "group": 1e-10}),
        ExperimentSpec("reconstruct-identity", run_reconstruct_identity, ("grid", "recovery"), "< 10 min",
                       "再構成積分 (直接経路) と刻み半減での収束",
                       {"reconstruct": 1e-3, "halving": 4.0, "ratio_floor": 1e-9}),
        ExperimentSpec("roundtrip", run_roundtrip, ("grid", "recovery"), "< 15 min",
                       "S∘O = id の往復誤差 (作用素経路と直接経路)",
                       {"roundtrip": 1e-2, "direct": 1e-3, "agreement": 1e-2, "fiber_ratio": 1e-2}),
        ExperimentSpec("cv-bound", run_cv_bound, ("grid",), "< 1 min",
                       "Calderón–Vaillancourt 型の比 ‖O(a_θ)‖ / セミノルム",
                       {"ratio": 100.0, "spread": 25.0}),
        ExperimentSpec("fibers", run_fibers, ("grid",), "< 30 s",
                       "ファイバー分解とノルムの最大値公式",
                       {"norm": 1e-8, "linearity": 1e-12}),
        ExperimentSpec("commutant", run_commutant, ("grid", "J", "F"), "< 2 min",
                       "L_F と R_G の可換子残差 (n = 2)",
                       {"residual": 1e-3, "refinement": 1.0, "negative_control": 1e-1}),
        ExperimentSpec("conjecture-demo", run_conjecture_demo, ("grid", "J", "F", "recovery"), "< 10 min",
                       "L_F 型の特徴付けの前向きデモ (拡張)",
                       {"residual": 1e-3, "recovery": 5e-2}),
        ExperimentSpec("convergence", run_convergence, ("grid", "recovery", "levels"), "< 5 min",
                       "往復誤差の細分化による減少",
                       {"ratio": 1.5}),
    )
}


def list_experiments() -> List[Dict]:
    """登録済み実験の一覧"""
    return [REGISTRY[name].to_dict() for name in EXPERIMENTS]


def format_experiment_table() -> str:
    frame = pd.DataFrame([
        {"name": e["name"], "required": ",".join(e["required"]), "runtime": e["expected_runtime"],
         "description": e["description"]}
        for e in list_experiments()
    ])
    return frame.to_string(index=False)


@dataclass(frozen=True)
class RunOutcome:
    summary_path: Path
    passed: bool
    failures: Tuple[Assertion, ...]


def run_experiment(config: Dict, out_dir: Path, workers: int = 1) -> RunOutcome:
    """
    検証済み設定で実験を 1 つ実行し、CSV と JSON サマリーを書き出す

    Args:
        config: validate_config 済みの設定
        out_dir: 出力ディレクトリ
        workers: 並列数

    Returns:
        RunOutcome

    Raises:
        ConfigError: 未登録の実験名、または必須キーの欠落
    """
    name = config["experiment"]
    if name not in REGISTRY:
        raise ConfigError(f"未知の実験: {name} (有効: {', '.join(EXPERIMENTS)})", "experiment")
    spec = REGISTRY[name]
    missing = [key for key in spec.required if key not in config]
    if missing:
        raise ConfigError(f"{name} には {', '.join(missing)} が必要です", missing[0])

    out_dir = ensure_output_dir(out_dir)
    logger.info("=" * 80)
    logger.info(f"🔧 実験開始: {name}")
    logger.info("=" * 80)

    ctx = Context(config, workers, dict(spec.tolerances))
    with PerformanceLogger(f"実験 {name}") as perf:
        result = spec.runner(ctx)

    for suffix, table in result.tables.items():
        path = out_dir / f"{name}{suffix}.csv"
        table.to_csv(path, index=False)
        logger.info(f"💾 CSV 保存: {path} ({len(table)} 行)")

    summary = {
        "experiment": name,
        "config_hash": config_hash(config),
        "assertions": [a.to_dict() for a in result.assertions],
        "runtime_ms": perf.elapsed_ms,
        "finished_at": datetime.now().isoformat(timespec="seconds"),
    }
    summary_path = out_dir / f"{name}_summary.json"
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, ensure_ascii=False, indent=2)

    failures = tuple(a for a in result.assertions if not a.passed)
    logger.info("=" * 80)
    for assertion in result.assertions:
        mark = "✅" if assertion.passed else "❌"
        logger.info(f"{mark} {assertion.name}: {assertion.value:.6g} (許容 {assertion.tolerance:.3g})")
    logger.info("=" * 80)
    if failures:
        logger.error(f"❌ {len(failures)} 件のアサーションが失敗しました: {', '.join(a.name for a in failures)}")
    return RunOutcome(summary_path, not failures, failures)
