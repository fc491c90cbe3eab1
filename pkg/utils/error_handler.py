"""
エラーハンドリングとロギング機能
"""

import logging
import functools
import time
import traceback
from typing import Callable, Any, Optional

logger = logging.getLogger(__name__)


# カスタム例外クラス
class CordesError(Exception):
    """ベースカスタム例外"""
    pass


class GridMismatchError(CordesError):
    """異なるグリッド上のオブジェクトが混在"""
    pass


class FiberMismatchError(CordesError):
    """ファイバー集合の不一致、または未知のファイバーラベル"""
    pass


class ValidationError(CordesError):
    """前提条件の検証エラー"""
    pass


class ConfigError(ValidationError):
    """設定ファイルのスキーマ違反"""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


class NumericalInstabilityError(CordesError):
    """計算途中で非有限値が発生"""
    pass


class NumericalAssertionError(CordesError):
    """実験のアサーション失敗"""
    pass


class ErrorHandler:
    """エラーハンドリングユーティリティ"""

    @staticmethod
    def log_error(error: Exception, context: str = ""):
        """
        エラーをログに記録

        Args:
            error: 例外オブジェクト
            context: エラーコンテキスト
        """
        error_msg = f"[{context}] {type(error).__name__}: {str(error)}"
        logger.error(error_msg)
        logger.debug(traceback.format_exc())

    @staticmethod
    def describe_error(error: Exception) -> str:
        """
        例外をユーザー向けの一行メッセージに変換

        Args:
            error: 例外オブジェクト

        Returns:
            ユーザー向けエラーメッセージ
        """
        if isinstance(error, ConfigError):
            where = f" (フィールド: {error.field})" if error.field else ""
            return f"📝 設定エラー{where}: {str(error)}"
        elif isinstance(error, NumericalAssertionError):
            return f"📉 アサーション失敗: {str(error)}"
        elif isinstance(error, (GridMismatchError, FiberMismatchError)):
            return f"🧩 構造の不一致: {str(error)}"
        elif isinstance(error, NumericalInstabilityError):
            return f"⚠️ 数値不安定: {str(error)}"
        elif isinstance(error, ValidationError):
            return f"🚫 検証エラー: {str(error)}"
        else:
            return f"❌ {type(error).__name__} - {str(error)[:200]}"

    @staticmethod
    def exit_code(error: Optional[Exception]) -> int:
        """
        例外を CLI の終了コードに変換 (0: 成功, 1: 失敗, 2: 設定エラー)
        """
        if error is None:
            return 0
        if isinstance(error, ConfigError):
            return 2
        return 1


class PerformanceLogger:
    """パフォーマンス計測ロガー"""

    def __init__(self, operation_name: str, level: int = logging.INFO):
        """
        Args:
            operation_name: 計測する操作名
            level: 開始・完了ログのレベル
        """
        self.operation_name = operation_name
        self.level = level
        self.start_time: Optional[float] = None
        self.elapsed_ms: float = 0.0

    def __enter__(self):
        """コンテキストマネージャー開始"""
        self.start_time = time.perf_counter()
        logger.log(self.level, f"⏱️ [{self.operation_name}] 開始")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """コンテキストマネージャー終了"""
        if self.start_time is not None:
            self.elapsed_ms = (time.perf_counter() - self.start_time) * 1000.0

            if exc_type:
                logger.error(f"❌ [{self.operation_name}] 失敗 ({self.elapsed_ms:.1f}ms)")
            else:
                logger.log(self.level, f"✅ [{self.operation_name}] 完了 ({self.elapsed_ms:.1f}ms)")

        return False  # 例外を再発生させる


def _describe_operand(value: Any) -> Optional[str]:
    """grid と fibers を持つ引数 (Symbol, ModuleOp, ModuleVec) の形状"""
    grid = getattr(value, "grid", None)
    fibers = getattr(value, "fibers", None)
    if grid is None or fibers is None:
        return None
    return f"n={grid.n}, N={grid.N}, L={grid.L:g}, m={fibers.m}"


def log_grid_operation(func: Callable) -> Callable:
    """
    グリッド上の演算の呼び出しを、引数のグリッドとファイバーの形状、所要時間とともに記録

    Args:
        func: デコレート対象の関数

    Returns:
        ラップされた関数
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs) -> Any:
        shapes = [d for d in map(_describe_operand, args) if d]
        where = f" ({'; '.join(shapes)})" if shapes else ""
        logger.debug(f"🔧 {func.__name__}{where}")
        started = time.perf_counter()
        try:
            result = func(*args, **kwargs)
        except Exception as e:
            logger.error(f"❌ {func.__name__}{where}: {type(e).__name__}: {e}")
            raise
        logger.debug(f"✅ {func.__name__} 完了 ({(time.perf_counter() - started) * 1000.0:.1f}ms)")
        return result

    return wrapper
