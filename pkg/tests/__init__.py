"""
テストモジュール
"""

