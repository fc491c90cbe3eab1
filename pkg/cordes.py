#!/usr/bin/env python3
"""
作用素計算ラボの実験 CLI

使用例:
    # 設定ファイルで実験を実行
    python cordes.py run --config configs/roundtrip.json

    # 出力先と並列数を指定
    python cordes.py run --config configs/commutant.json --out results/n2 --workers 4

    # 登録済み実験の一覧
    python cordes.py list

    # 設定の JSON スキーマを表示
    python cordes.py schema
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from utils.bootstrap import CONFIG_SCHEMA, ensure_output_dir, load_config, resolve_output_dir
from utils.error_handler import ConfigError, CordesError, ErrorHandler, NumericalAssertionError
from utils.experiments import format_experiment_table, list_experiments, run_experiment

logger = logging.getLogger("cordes")

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE = "cordes.log"


def setup_logging(level: str = "INFO", log_dir: Optional[Path] = None):
    """標準エラーと (指定があれば) 出力ディレクトリのログファイルへ出力"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_dir is not None:
        handlers.append(logging.FileHandler(Path(log_dir) / LOG_FILE, encoding='utf-8'))
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, handlers=handlers, force=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cordes",
        description='擬微分作用素の量子化・シンボル回復の数値実験 CLI',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用例:
  # 往復実験 (S∘O = id)
  python cordes.py run --config configs/roundtrip.json

  # 出力先を環境変数で指定
  CORDES_OUT=/tmp/cordes python cordes.py run --config configs/ft-selftest.json

  # 実験一覧を JSON で
  python cordes.py list --json

終了コード:
  0: 全アサーション合格
  1: アサーション失敗または数値エラー
  2: 設定エラー (スキーマ違反)
        """
    )
    parser.add_argument(
        '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        default='INFO',
        help='ログレベル (デフォルト: INFO)'
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    run_parser = subparsers.add_parser('run', help='設定ファイルの実験を実行')
    run_parser.add_argument(
        '--config',
        type=str,
        required=True,
        metavar='PATH',
        help='実験設定 (JSON または TOML)'
    )
    output_group = run_parser.add_argument_group('出力と並列化')
    output_group.add_argument(
        '--out',
        type=str,
        metavar='DIR',
        help='出力ディレクトリ (CORDES_OUT、設定の output.dir より優先)'
    )
    output_group.add_argument(
        '--workers',
        type=int,
        default=1,
        metavar='K',
        help='並列ワーカー数 (デフォルト: 1、結果は並列数に依存しない)'
    )

    list_parser = subparsers.add_parser('list', help='登録済み実験の一覧')
    list_parser.add_argument(
        '--json',
        action='store_true',
        help='JSON 配列で出力'
    )

    subparsers.add_parser('schema', help='設定の JSON スキーマを表示')
    return parser


def command_run(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as e:
        ErrorHandler.log_error(e, "設定")
        print(ErrorHandler.describe_error(e), file=sys.stderr)
        return ErrorHandler.exit_code(e)

    out_dir = ensure_output_dir(resolve_output_dir(args.out, config))
    setup_logging(args.log_level, out_dir)
    if args.workers < 1:
        error = ConfigError(f"--workers は 1 以上: {args.workers}", "workers")
        print(ErrorHandler.describe_error(error), file=sys.stderr)
        return ErrorHandler.exit_code(error)

    try:
        outcome = run_experiment(config, out_dir, args.workers)
    except CordesError as e:
        ErrorHandler.log_error(e, config["experiment"])
        print(ErrorHandler.describe_error(e), file=sys.stderr)
        return ErrorHandler.exit_code(e)

    print(outcome.summary_path)
    if outcome.passed:
        logger.info("✅ すべてのアサーションに合格しました")
        return 0
    error = NumericalAssertionError(", ".join(a.name for a in outcome.failures))
    ErrorHandler.log_error(error, config["experiment"])
    print(ErrorHandler.describe_error(error), file=sys.stderr)
    return ErrorHandler.exit_code(error)


def command_list(args) -> int:
    if args.json:
        print(json.dumps(list_experiments(), ensure_ascii=False, indent=2))
    else:
        print(format_experiment_table())
    return 0


def command_schema(args) -> int:
    print(json.dumps(CONFIG_SCHEMA, ensure_ascii=False, indent=2))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """メインエントリーポイント"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    commands = {'run': command_run, 'list': command_list, 'schema': command_schema}
    return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
