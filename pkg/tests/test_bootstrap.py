"""
設定の読み込み・検証、出力先、ハッシュ、保存と読み込みのユニットテスト
"""

import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from utils.bootstrap import (
    OUTPUT_ENV_VAR,
    config_hash,
    load_config,
    load_operator,
    load_symbol,
    params_hash,
    resolve_output_dir,
    save_operator,
    save_symbol,
    validate_config,
)
from utils.error_handler import ConfigError, ValidationError
from utils.grid import make_grid
from utils.module_space import FiberSet
from utils.quantize import quantize
from utils.symbols import build_family, sample_family

try:
    import tomllib  # noqa: F401
    HAS_TOML = True
except ImportError:
    try:
        import tomli  # noqa: F401
        HAS_TOML = True
    except ImportError:
        HAS_TOML = False


def minimal_config(**overrides):
    config = {"experiment": "ft-selftest", "grid": {"n": 1, "N": 64, "L": 8}}
    config.update(overrides)
    return config


class TestValidateConfig(unittest.TestCase):
    """スキーマ検証と違反フィールド"""

    def test_valid_config(self):
        validate_config(minimal_config(seed=1, options={"count": 4}))

    def test_odd_N(self):
        with self.assertRaises(ConfigError) as ctx:
            validate_config(minimal_config(grid={"n": 1, "N": 63, "L": 8}))
        self.assertEqual(ctx.exception.field, "grid.N")

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            validate_config(minimal_config(verbose=True))
        self.assertEqual(ctx.exception.field, "(root)")

    def test_unknown_experiment(self):
        with self.assertRaises(ConfigError) as ctx:
            validate_config(minimal_config(experiment="nonexistent"))
        self.assertEqual(ctx.exception.field, "experiment")

    def test_amplitudes_must_match_fibers(self):
        config = minimal_config(fibers=["a", "b"], symbol={"family": "gaussian", "amplitudes": [1, 2, 3]})
        with self.assertRaises(ConfigError) as ctx:
            validate_config(config)
        self.assertEqual(ctx.exception.field, "symbol.amplitudes")


class TestLoadConfig(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_json(self):
        path = self.dir / "config.json"
        path.write_text(json.dumps(minimal_config()), encoding="utf-8")
        self.assertEqual(load_config(str(path))["experiment"], "ft-selftest")

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(str(self.dir / "missing.json"))

    def test_malformed_json(self):
        path = self.dir / "broken.json"
        path.write_text("{\"experiment\": ", encoding="utf-8")
        with self.assertRaises(ConfigError):
            load_config(str(path))

    @unittest.skipUnless(HAS_TOML, "TOML パーサーがありません")
    def test_toml(self):
        path = self.dir / "config.toml"
        path.write_text('experiment = "cv-bound"\n\n[grid]\nn = 1\nN = 64\nL = 8.0\n', encoding="utf-8")
        config = load_config(str(path))
        self.assertEqual(config["experiment"], "cv-bound")
        self.assertEqual(config["grid"]["N"], 64)


class TestOutputDir(unittest.TestCase):
    """--out > CORDES_OUT > output.dir > results"""

    def test_cli_wins(self):
        with patch.dict(os.environ, {OUTPUT_ENV_VAR: "/tmp/env"}):
            self.assertEqual(resolve_output_dir("cli", {"output": {"dir": "cfg"}}), Path("cli"))

    def test_environment_before_config(self):
        with patch.dict(os.environ, {OUTPUT_ENV_VAR: "/tmp/env"}):
            self.assertEqual(resolve_output_dir(None, {"output": {"dir": "cfg"}}), Path("/tmp/env"))

    def test_config_then_default(self):
        with patch.dict(os.environ, {}, clear=True):
            self.assertEqual(resolve_output_dir(None, {"output": {"dir": "cfg"}}), Path("cfg"))
            self.assertEqual(resolve_output_dir(None, {}), Path("results"))


class TestHashes(unittest.TestCase):

    def test_config_hash_ignores_key_order(self):
        first = {"experiment": "fibers", "grid": {"n": 1, "N": 64, "L": 8}}
        second = {"grid": {"L": 8, "N": 64, "n": 1}, "experiment": "fibers"}
        self.assertEqual(config_hash(first), config_hash(second))
        self.assertEqual(len(config_hash(first)), 64)

    def test_params_hash(self):
        value = params_hash({"n": 1, "N": 64, "L": 8.0}, {"T": 16.0})
        self.assertEqual(len(value), 12)
        self.assertNotEqual(value, params_hash({"n": 1, "N": 64, "L": 8.0}, {"T": 12.0}))


class TestPersistence(unittest.TestCase):
    """JSON マニフェスト + 複素数のサイドカー"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.grid = make_grid(1, 16, 4.0)
        self.fibers = FiberSet.numbered(2)
        family = build_family("trig", {"freq_x": np.pi / 4, "freq_xi": np.pi / 2}, 1, [1.0, 2.0])
        self.symbol = sample_family(family, self.grid, self.fibers)

    def tearDown(self):
        self.tmp.cleanup()

    def test_symbol_roundtrip(self):
        path = save_symbol(self.symbol, str(self.dir / "a.json"))
        self.assertTrue(path.with_suffix(".bin").exists())
        loaded = load_symbol(str(path))
        np.testing.assert_array_equal(loaded.values, self.symbol.values)
        self.assertEqual(loaded.fibers, self.fibers)
        self.assertEqual(loaded.grid, self.grid)
        self.assertIsNotNone(loaded.family)

    def test_operator_roundtrip(self):
        op = quantize(self.symbol)
        path = save_operator(op, str(self.dir / "op.json"))
        loaded = load_operator(str(path))
        np.testing.assert_array_equal(loaded.matrices, op.matrices)
        self.assertEqual(loaded.provenance, op.provenance)

    def test_truncated_sidecar(self):
        path = save_symbol(self.symbol, str(self.dir / "a.json"))
        sidecar = path.with_suffix(".bin")
        sidecar.write_bytes(sidecar.read_bytes()[:-16])
        with self.assertRaises(ValidationError):
            load_symbol(str(path))

    def test_kind_mismatch(self):
        path = save_symbol(self.symbol, str(self.dir / "a.json"))
        with self.assertRaises(ValidationError):
            load_operator(str(path))


if __name__ == '__main__':
    unittest.main()
