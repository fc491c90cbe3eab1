"""
共通の初期化ユーティリティ

設定ファイルの読み込み・スキーマ検証、出力ディレクトリの解決、ハッシュ、
シンボル・作用素の保存と読み込み (JSON マニフェスト + バイナリのサイドカー)
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import jsonschema
import numpy as np

from utils.error_handler import ConfigError, ValidationError
from utils.grid import make_grid
from utils.module_space import FiberSet
from utils.quantize import ModuleOp
from utils.symbols import Symbol, SymbolFamily

logger = logging.getLogger(__name__)

# デフォルト設定
DEFAULT_OUTPUT_DIR = "results"
DEFAULT_SEED = 42
OUTPUT_ENV_VAR = "CORDES_OUT"

EXPERIMENTS = (
    "ft-selftest", "quantize-check", "covariance", "reconstruct-identity", "roundtrip",
    "cv-bound", "fibers", "commutant", "conjecture-demo", "convergence",
)

_NUMBER_OR_VECTOR = {
    "oneOf": [
        {"type": "number"},
        {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2},
    ]
}

_PROFILE_SCHEMA = {
    "type": "object",
    "required": ["family"],
    "properties": {
        "family": {
            "enum": ["gaussian", "hermite", "modulated_gaussian", "constant",
                     "linear", "sigmoid", "plane_wave", "sine"],
        },
        "width": {"type": "number", "exclusiveMinimum": 0},
        "center": _NUMBER_OR_VECTOR,
        "frequency": _NUMBER_OR_VECTOR,
        "index": {"type": "integer", "minimum": 0, "maximum": 8},
        "axis": {"type": "integer", "minimum": 0, "maximum": 1},
    },
    "additionalProperties": False,
}

_SYMBOL_SCHEMA = {
    "type": "object",
    "required": ["family"],
    "properties": {
        "family": {
            "enum": ["gaussian", "trig", "multiplication", "multiplier",
                     "shear_plus", "shear_minus", "constant"],
        },
        "params": {"type": "object"},
        "amplitudes": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "cordes experiment config",
    "type": "object",
    "required": ["experiment", "grid"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "grid": {
            "type": "object",
            "required": ["n", "N", "L"],
            "properties": {
                "n": {"enum": [1, 2]},
                "N": {"type": "integer", "minimum": 8, "multipleOf": 2},
                "L": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "fibers": {"type": "array", "items": {"type": "string"}, "minItems": 1, "uniqueItems": True},
        "symbol": _SYMBOL_SCHEMA,
        "symbols": {"type": "array", "items": _SYMBOL_SCHEMA, "minItems": 1},
        "points": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["z", "zeta"],
                "properties": {"z": _NUMBER_OR_VECTOR, "zeta": _NUMBER_OR_VECTOR},
                "additionalProperties": False,
            },
        },
        "recovery": {
            "type": "object",
            "properties": {
                "T": {"type": "number", "exclusiveMinimum": 0},
                "W": {"type": "number", "exclusiveMinimum": 0},
                "Q": {"type": "integer", "minimum": 1},
                "Qx": {"type": "integer", "minimum": 1},
                "Qxi": {"type": "integer", "minimum": 1},
                "Qeta": {"type": "integer", "minimum": 1},
                "midpoint": {"type": "boolean"},
                "delta": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "stencil_order": {"enum": [2, 4]},
                "richardson": {"type": "boolean"},
                "jump_correction": {"type": "boolean"},
                "coarse": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "levels": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["N"],
                "properties": {
                    "N": {"type": "integer", "minimum": 8, "multipleOf": 2},
                    "Q": {"type": "integer", "minimum": 1},
                },
                "additionalProperties": False,
            },
            "minItems": 2,
        },
        "J": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "F": _PROFILE_SCHEMA,
        "G": {"type": "array", "items": _PROFILE_SCHEMA, "minItems": 1},
        "tolerances": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}},
        "options": {"type": "object"},
        "timing_in_csv": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def _read_toml(path: Path) -> Dict:
    try:
        import tomllib as toml_reader
    except ImportError:
        try:
            import tomli as toml_reader
        except ImportError:
            raise ConfigError("TOML パーサーが見つかりません。pip install tomli を実行してください", "")
    with open(path, "rb") as f:
        return toml_reader.load(f)


def load_config(path: str) -> Dict:
    """
    設定ファイル (JSON または TOML) を読み込んで検証

    Args:
        path: 設定ファイルのパス

    Returns:
        検証済みの設定辞書

    Raises:
        ConfigError: 読み込み失敗またはスキーマ違反
    """
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"設定ファイルが見つかりません: {path}", "")
    try:
        if config_path.suffix.lower() == ".toml":
            config = _read_toml(config_path)
        else:
            with open(config_path, "r", encoding="utf-8") as f:
                config = json.load(f)
    except (json.JSONDecodeError, ValueError) as e:
        raise ConfigError(f"設定ファイルを解析できません: {str(e)}", "")
    validate_config(config)
    logger.info(f"設定ロード: {path} ({config['experiment']})")
    return config


def validate_config(config: Dict):
    """
    JSON スキーマ (Draft 7) で検証し、最初の違反を ConfigError にする

    Raises:
        ConfigError: 違反フィールドのパス付き
    """
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        error = errors[0]
        field = ".".join(str(p) for p in error.absolute_path) or "(root)"
        raise ConfigError(f"{field}: {error.message}", field)

    fibers = config.get("fibers")
    amplitudes = (config.get("symbol") or {}).get("amplitudes")
    if fibers is not None and amplitudes is not None and len(amplitudes) != len(fibers):
        raise ConfigError(
            f"symbol.amplitudes の長さ {len(amplitudes)} がファイバー数 {len(fibers)} と一致しません",
            "symbol.amplitudes",
        )


def resolve_output_dir(cli_value: Optional[str], config: Optional[Dict] = None) -> Path:
    """--out > CORDES_OUT > config output.dir > 既定値"""
    if cli_value:
        return Path(cli_value)
    env_value = os.environ.get(OUTPUT_ENV_VAR)
    if env_value:
        return Path(env_value)
    configured = ((config or {}).get("output") or {}).get("dir")
    return Path(configured or DEFAULT_OUTPUT_DIR)


def ensure_output_dir(path: Path) -> Path:
    """出力ディレクトリの存在を確認・作成"""
    path = Path(path)
    if not path.exists():
        path.mkdir(parents=True)
        logger.info(f"出力ディレクトリ作成: {path}")
    return path


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(config: Dict) -> str:
    """検証済み設定の SHA-256"""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def params_hash(*parts: Dict) -> str:
    """グリッド・回復パラメータの短いハッシュ (12 桁)"""
    return hashlib.sha256(canonical_json(list(parts)).encode("utf-8")).hexdigest()[:12]


# =============================================================================
# 保存と読み込み
# =============================================================================

def _write_sidecar(path: Path, values: np.ndarray):
    pairs = np.stack([values.real, values.imag], axis=-1).astype("<f8")
    pairs.tofile(path)


def _read_sidecar(path: Path, shape: Tuple[int, ...]) -> np.ndarray:
    if not path.exists():
        raise ValidationError(f"サイドカーファイルが見つかりません: {path}")
    raw = np.fromfile(path, dtype="<f8")
    expected = int(np.prod(shape)) * 2
    if raw.size != expected:
        raise ValidationError(f"サイドカーの要素数 {raw.size} が期待値 {expected} と一致しません")
    pairs = raw.reshape(shape + (2,))
    return pairs[..., 0] + 1j * pairs[..., 1]


def _save(kind: str, path: str, grid, fibers: FiberSet, values: np.ndarray, extra: Dict) -> Path:
    manifest_path = Path(path)
    ensure_output_dir(manifest_path.parent)
    sidecar = manifest_path.with_suffix(".bin")
    _write_sidecar(sidecar, values)
    manifest = {
        "kind": kind,
        "grid": grid.to_dict(),
        "fibers": list(fibers.labels),
        "shape": list(values.shape),
        "dtype": "<f8 (re, im)",
        "data": sidecar.name,
    }
    manifest.update(extra)
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2, sort_keys=True)
    logger.info(f"💾 {kind} 保存: {manifest_path}")
    return manifest_path


def _load(kind: str, path: str) -> Tuple[Dict, np.ndarray]:
    manifest_path = Path(path)
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("kind") != kind:
        raise ValidationError(f"{manifest_path} は {kind} のマニフェストではありません")
    values = _read_sidecar(manifest_path.parent / manifest["data"], tuple(manifest["shape"]))
    return manifest, values


def save_symbol(a: Symbol, path: str) -> Path:
    """シンボルを (ファイバー, x, ξ) 行優先で保存"""
    family = a.family.to_dict() if a.family is not None else None
    return _save("symbol", path, a.grid, a.fibers, a.values, {"family": family})


def load_symbol(path: str) -> Symbol:
    manifest, values = _load("symbol", path)
    grid = make_grid(**manifest["grid"])
    family = SymbolFamily.from_dict(manifest["family"]) if manifest.get("family") else None
    return Symbol(FiberSet(tuple(manifest["fibers"])), grid, values, family)


def save_operator(op: ModuleOp, path: str) -> Path:
    """作用素をファイバーごとの行列ブロックとして保存"""
    return _save("operator", path, op.grid, op.fibers, op.matrices, {"provenance": op.provenance})


def load_operator(path: str) -> ModuleOp:
    manifest, values = _load("operator", path)
    grid = make_grid(**manifest["grid"])
    return ModuleOp(FiberSet(tuple(manifest["fibers"])), grid, values, manifest.get("provenance"))
