"""
分離可能なプロファイル関数と解析的な導関数

1次元因子 f_r の積 P(y) = ∏ f_r(y_r) を基本単位とし、
テスト関数・シンボル族・Rieffel プロファイル F, G をすべてこの形で表す。
"""

import logging
from dataclasses import dataclass, field, asdict
from math import comb
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import hermite_e

from utils.error_handler import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Factor:
    """
    1次元因子

    kind:
        hermite    He_k(s)·e^{-s²/2}·e^{i·frequency·t}, s = (t - center)/width
        sine       sin(frequency·t + phase)
        plane_wave e^{i(frequency·t + phase)}
        linear     t - center
        constant   1
        sigmoid    tanh((t - center)/width)
    """
    kind: str
    center: float = 0.0
    width: float = 1.0
    index: int = 0
    frequency: float = 0.0
    phase: float = 0.0

    KINDS: ClassVar[Tuple[str, ...]] = (
        "hermite", "sine", "plane_wave", "linear", "constant", "sigmoid"
    )
    MAX_HERMITE_INDEX: ClassVar[int] = 8

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"未知の因子種別: {self.kind} (有効: {', '.join(self.KINDS)})")
        if self.width <= 0:
            raise ValidationError(f"width は正である必要があります: {self.width}")
        if self.kind == "hermite" and not 0 <= self.index <= self.MAX_HERMITE_INDEX:
            raise ValidationError(
                f"Hermite 指数は 0..{self.MAX_HERMITE_INDEX} の範囲: {self.index}"
            )
        if not np.isfinite([self.center, self.width, self.frequency, self.phase]).all():
            raise ValidationError("因子パラメータに非有限値が含まれています")

    @property
    def decays(self) -> bool:
        """無限遠で急減少するか"""
        return self.kind == "hermite"

    def __call__(self, t: np.ndarray, order: int = 0) -> np.ndarray:
        """
        因子の order 階導関数を評価

        Args:
            t: 評価点
            order: 微分階数 (0 以上)

        Returns:
            複素数配列
        """
        t = np.asarray(t, dtype=float)
        if order < 0:
            raise ValidationError(f"微分階数は 0 以上: {order}")
        handler = getattr(self, f"_eval_{self.kind}")
        return np.asarray(handler(t, order), dtype=complex)

    def _hermite_part(self, t: np.ndarray, order: int) -> np.ndarray:
        s = (t - self.center) / self.width
        coeffs = np.zeros(self.index + order + 1)
        coeffs[-1] = 1.0
        return ((-1.0) ** order) * hermite_e.hermeval(s, coeffs) * np.exp(-0.5 * s * s) / self.width ** order

    def _eval_hermite(self, t: np.ndarray, order: int) -> np.ndarray:
        if self.frequency == 0.0:
            return self._hermite_part(t, order)
        wave = np.exp(1j * self.frequency * t)
        # Leibniz
        total = np.zeros(t.shape, dtype=complex)
        for j in range(order + 1):
            total += comb(order, j) * self._hermite_part(t, j) * (1j * self.frequency) ** (order - j)
        return total * wave

    def _eval_sine(self, t: np.ndarray, order: int) -> np.ndarray:
        return self.frequency ** order * np.sin(self.frequency * t + self.phase + order * np.pi / 2)

    def _eval_plane_wave(self, t: np.ndarray, order: int) -> np.ndarray:
        return (1j * self.frequency) ** order * np.exp(1j * (self.frequency * t + self.phase))

    def _eval_linear(self, t: np.ndarray, order: int) -> np.ndarray:
        if order == 0:
            return t - self.center
        if order == 1:
            return np.ones_like(t)
        return np.zeros_like(t)

    def _eval_constant(self, t: np.ndarray, order: int) -> np.ndarray:
        return np.ones_like(t) if order == 0 else np.zeros_like(t)

    def _eval_sigmoid(self, t: np.ndarray, order: int) -> np.ndarray:
        # d/dt p(T) = p'(T)(1 - T²)/w, T = tanh((t - c)/w)
        poly = Polynomial([0.0, 1.0])
        outer = Polynomial([1.0, 0.0, -1.0]) / self.width
        for _ in range(order):
            poly = poly.deriv() * outer
        return poly(np.tanh((t - self.center) / self.width))

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "Factor":
        return cls(**data)


@dataclass(frozen=True)
class Profile:
    """分離可能なプロファイル P(y) = ∏_r f_r(y_r)"""
    factors: Tuple[Factor, ...] = field(default_factory=tuple)

    @property
    def dim(self) -> int:
        return len(self.factors)

    @property
    def decays(self) -> bool:
        return self.dim > 0 and all(f.decays for f in self.factors)

    def __call__(self, y: np.ndarray, orders: Optional[Sequence[int]] = None) -> np.ndarray:
        """
        偏導関数 ∂^orders P を評価

        Args:
            y: 形状 (..., dim) の評価点
            orders: 各軸の微分階数 (省略時は 0)

        Returns:
            形状 (...) の複素数配列
        """
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dim:
            raise ValidationError(f"プロファイル次元 {self.dim} と入力 {y.shape[-1]} が一致しません")
        if orders is None:
            orders = (0,) * self.dim
        result = np.ones(y.shape[:-1], dtype=complex)
        for r, factor in enumerate(self.factors):
            result = result * factor(y[..., r], orders[r])
        return result

    def to_dict(self) -> Dict:
        return {"factors": [f.to_dict() for f in self.factors]}

    @classmethod
    def from_dict(cls, data: Dict) -> "Profile":
        return cls(tuple(Factor.from_dict(f) for f in data.get("factors", [])))


def chain_rule_terms(pullback: np.ndarray, multi_index: Sequence[int]) -> Dict[Tuple[int, ...], float]:
    """
    a(w) = P(A·w) の偏導関数 ∂_w^μ a を ∂_y^γ P の線形結合に展開

    ∂_{w_i} = Σ_r A[r, i] ∂_{y_r} を μ_i 回ずつ掛け合わせる。

    Args:
        pullback: 行列 A (形状 (d, m))
        multi_index: 長さ m の微分多重指数 μ

    Returns:
        {γ: 係数} の辞書 (挿入順は決定的)
    """
    pullback = np.asarray(pullback, dtype=float)
    d, m = pullback.shape
    if len(multi_index) != m:
        raise ValidationError(f"多重指数の長さ {len(multi_index)} が変数の数 {m} と一致しません")

    terms: Dict[Tuple[int, ...], float] = {(0,) * d: 1.0}
    for i, count in enumerate(multi_index):
        for _ in range(count):
            expanded: Dict[Tuple[int, ...], float] = {}
            for gamma, coeff in terms.items():
                for r in range(d):
                    weight = pullback[r, i]
                    if weight == 0.0:
                        continue
                    key = gamma[:r] + (gamma[r] + 1,) + gamma[r + 1:]
                    expanded[key] = expanded.get(key, 0.0) + coeff * weight
            terms = expanded
    return terms


# =============================================================================
# プロファイル生成ヘルパー
# =============================================================================

def _per_axis(value, dim: int) -> List[float]:
    if np.ndim(value) == 0:
        return [float(value)] * dim
    values = [float(v) for v in value]
    if len(values) != dim:
        raise ValidationError(f"軸ごとのパラメータ長 {len(values)} が次元 {dim} と一致しません")
    return values


def gaussian_profile(dim: int, width: float = 1.0, center=0.0) -> Profile:
    """e^{-|y - c|²/(2w²)}"""
    centers = _per_axis(center, dim)
    return Profile(tuple(Factor("hermite", center=c, width=width) for c in centers))


def hermite_profile(dim: int, index: int, width: float = 1.0, center=0.0) -> Profile:
    """各軸 He_k((y - c)/w) e^{-(y - c)²/(2w²)} のテンソル積"""
    centers = _per_axis(center, dim)
    return Profile(tuple(Factor("hermite", center=c, width=width, index=index) for c in centers))


def modulated_gaussian_profile(dim: int, width: float = 1.0, frequency=0.0, center=0.0) -> Profile:
    """ガウシアン × 平面波 e^{iω·y}"""
    centers = _per_axis(center, dim)
    freqs = _per_axis(frequency, dim)
    return Profile(tuple(
        Factor("hermite", center=c, width=width, frequency=w) for c, w in zip(centers, freqs)
    ))


def constant_profile(dim: int) -> Profile:
    return Profile(tuple(Factor("constant") for _ in range(dim)))


def linear_profile(dim: int, axis: int = 0) -> Profile:
    """y_axis (他軸は定数)"""
    return Profile(tuple(
        Factor("linear") if r == axis else Factor("constant") for r in range(dim)
    ))


def sigmoid_profile(dim: int, width: float, axis: int = 0) -> Profile:
    """tanh(y_axis / w) (他軸は定数)"""
    return Profile(tuple(
        Factor("sigmoid", width=width) if r == axis else Factor("constant") for r in range(dim)
    ))


def plane_wave_profile(dim: int, frequency) -> Profile:
    freqs = _per_axis(frequency, dim)
    return Profile(tuple(Factor("plane_wave", frequency=w) for w in freqs))


def sine_profile(dim: int, frequency) -> Profile:
    freqs = _per_axis(frequency, dim)
    return Profile(tuple(Factor("sine", frequency=w) for w in freqs))


PROFILE_BUILDERS = {
    "gaussian": lambda dim, p: gaussian_profile(dim, p.get("width", 1.0), p.get("center", 0.0)),
    "hermite": lambda dim, p: hermite_profile(dim, int(p.get("index", 0)), p.get("width", 1.0), p.get("center", 0.0)),
    "modulated_gaussian": lambda dim, p: modulated_gaussian_profile(
        dim, p.get("width", 1.0), p.get("frequency", 0.0), p.get("center", 0.0)
    ),
    "constant": lambda dim, p: constant_profile(dim),
    "linear": lambda dim, p: linear_profile(dim, int(p.get("axis", 0))),
    "sigmoid": lambda dim, p: sigmoid_profile(dim, p.get("width", 0.05), int(p.get("axis", 0))),
    "plane_wave": lambda dim, p: plane_wave_profile(dim, p.get("frequency", 0.0)),
    "sine": lambda dim, p: sine_profile(dim, p.get("frequency", 1.0)),
}


def profile_from_spec(spec: Dict, dim: int) -> Profile:
    """
    設定辞書 {"family": ..., パラメータ...} からプロファイルを生成

    Args:
        spec: プロファイル指定
        dim: プロファイルの次元

    Returns:
        Profile
    """
    family = spec.get("family")
    if family not in PROFILE_BUILDERS:
        raise ValidationError(
            f"未知のプロファイル族: {family} (有効: {', '.join(PROFILE_BUILDERS)})"
        )
    return PROFILE_BUILDERS[family](dim, spec)


def profile_tag(spec: Dict) -> str:
    """CSV 用の短いタグ (例: gaussian(width=0.7))"""
    params = ",".join(f"{k}={spec[k]}" for k in sorted(spec) if k != "family")
    return f"{spec.get('family')}({params})"
