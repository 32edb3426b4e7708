"""代表的な解析手法のプリセット

伝統的統合法、バイアス調整統合法、Odem-Davis 法、固定マージン法 (95-95 / 0-95) と
任意の (u, λ₁) 点を MethodSpec として構築し、表示名を付ける。
"""

import logging
import math
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from app.exceptions import DomainError, InvalidInputError
from app.models import HistoricalEvidence, MarginVarianceRule, MethodSpec
from app.statdist import norm_cdf, z_upper

logger = logging.getLogger(__name__)

# 95-95 法の θ
NINETY_FIVE_THETA = 0.025
# 識別時に 95-95 法とみなす θ の許容幅（1.96 と Z_{0.975} の違いを吸収する）
_THETA_MATCH_TOL = 5e-4
_REL_TOL = 1e-9


class PresetVariant(str, Enum):
    TRADITIONAL_SYNTHESIS = "traditional-sm"
    BIAS_ADJUSTED_SYNTHESIS = "ba-sm"
    ODEM_DAVIS = "od"
    FIXED_MARGIN = "fixed-margin"
    CUSTOM = "custom"


class PresetId(BaseModel):
    """プリセットの識別子。``build`` で MethodSpec を得る"""

    model_config = ConfigDict(frozen=True)

    variant: PresetVariant
    lambda1: Optional[float] = None
    theta: Optional[float] = Field(default=None, gt=0, le=0.5)
    u: Optional[float] = None

    def build(self, hist: Optional[HistoricalEvidence] = None) -> MethodSpec:
        if self.variant is PresetVariant.TRADITIONAL_SYNTHESIS:
            return make_traditional_synthesis()
        if self.variant is PresetVariant.BIAS_ADJUSTED_SYNTHESIS:
            return make_bias_adjusted_synthesis(_required(self.lambda1, "lambda1"))
        if self.variant is PresetVariant.ODEM_DAVIS:
            return make_odem_davis(_required(self.lambda1, "lambda1"))
        if self.variant is PresetVariant.FIXED_MARGIN:
            if hist is None:
                raise InvalidInputError("固定マージン法の構築には歴史的エビデンスが必要です")
            return make_fixed_margin(_required(self.theta, "theta"), hist)
        return make_custom(_required(self.u, "u"), _required(self.lambda1, "lambda1"))


def _required(value: Optional[float], field: str) -> float:
    if value is None:
        raise InvalidInputError(f"{field} が指定されていません")
    return value


def _lambda_label(lambda1: float) -> str:
    return f"{round(lambda1 * 100, 1):g}%"


def make_traditional_synthesis() -> MethodSpec:
    """恒常性を仮定した伝統的統合法 (u, λ₁) = (1, 0)"""
    return MethodSpec(
        u=1.0,
        lambda1=0.0,
        name="Traditional SM",
        margin_variance_rule=MarginVarianceRule.RANDOM_MARGIN,
    )


def make_bias_adjusted_synthesis(lambda1: float) -> MethodSpec:
    """相対効果偏差 λ₁ を仮定したバイアス調整統合法 (1, λ₁)"""
    if lambda1 <= -1.0:
        raise DomainError(f"λ₁ は -1 より大きい必要があります: {lambda1}")
    if lambda1 > 0.0:
        raise InvalidInputError(f"バイアス調整統合法の λ₁ は 0 以下です: {lambda1}")
    if lambda1 == 0.0:
        return make_traditional_synthesis()
    return MethodSpec(
        u=1.0,
        lambda1=lambda1,
        name=f"BA-SM, lm1={_lambda_label(lambda1)}",
        margin_variance_rule=MarginVarianceRule.RANDOM_MARGIN,
    )


def make_odem_davis(lambda1: float) -> MethodSpec:
    """分散を縮小しない Odem-Davis 法 ((1+λ₁)⁻¹, λ₁)"""
    if lambda1 == 0.0:
        raise InvalidInputError("Odem-Davis 法は λ₁ ≠ 0 のときにのみ意味を持ちます")
    if lambda1 <= -1.0:
        raise DomainError(f"λ₁ は -1 より大きい必要があります: {lambda1}")
    if lambda1 > 0.0:
        raise InvalidInputError(f"Odem-Davis 法の λ₁ は負です: {lambda1}")
    return MethodSpec(
        u=1.0 / (1.0 + lambda1),
        lambda1=lambda1,
        name=f"OD, lm1={_lambda_label(lambda1)}",
        margin_variance_rule=MarginVarianceRule.RANDOM_MARGIN,
    )


def fixed_margin_lambda1(theta: float, hist: HistoricalEvidence) -> float:
    """λ₁ = Z_{1−θ}√V_CP,H / γ̂_CP,H"""
    if hist.gamma_hat == 0:
        raise DomainError("γ̂_CP,H = 0 では固定マージン法の λ₁ を計算できません")
    if theta == 0.5:
        return 0.0
    return z_upper(theta) * hist.se / hist.gamma_hat


def _fixed_margin_name(theta: float) -> str:
    if theta == 0.5:
        return "0-95 method"
    if abs(theta - NINETY_FIVE_THETA) <= _THETA_MATCH_TOL:
        return "95-95 method"
    return f"Fixed margin, theta={theta:.4g}"


def make_fixed_margin(theta: float, hist: HistoricalEvidence) -> MethodSpec:
    """履歴データを既知とみなす固定マージン法 (0, λ₁(θ))

    θ = 0.025 で 95-95 法、θ = 0.5 で 0-95 法。
    """
    if not 0.0 < theta <= 0.5:
        raise InvalidInputError(f"θ は (0, 0.5] の範囲である必要があります: {theta}")
    lambda1 = fixed_margin_lambda1(theta, hist)
    if lambda1 <= -1.0:
        raise DomainError(f"θ = {theta} では λ₁ = {lambda1:.4f} が -1 以下になります")
    return MethodSpec(
        u=0.0,
        lambda1=lambda1,
        name=_fixed_margin_name(theta),
        margin_variance_rule=MarginVarianceRule.FIXED_MARGIN,
        theta=theta,
    )


def make_custom(u: float, lambda1: float, name: Optional[str] = None) -> MethodSpec:
    rule = MarginVarianceRule.FIXED_MARGIN if u == 0 else MarginVarianceRule.RANDOM_MARGIN
    return MethodSpec(
        u=u,
        lambda1=lambda1,
        name=name or f"u={u:.4g}, lm1={_lambda_label(lambda1)}",
        margin_variance_rule=rule,
    )


def identify_method(
    u: float, lambda1: float, hist: HistoricalEvidence, name: Optional[str] = None
) -> MethodSpec:
    """生の (u, λ₁) を名前付き手法として認識する

    固定マージン法は λ₁ から θ = Φ(−λ₁γ̂/se) を逆算する。入力の λ₁ はそのまま保持する。
    """
    if u == 0:
        theta = 0.5 if lambda1 == 0 else norm_cdf(-lambda1 * hist.gamma_hat / hist.se)
        if not 0.0 < theta <= 0.5:
            logger.info(f"θ = {theta:.4g} は固定マージン法の範囲外のため任意点として扱います")
            return make_custom(u, lambda1, name)
        return MethodSpec(
            u=0.0,
            lambda1=lambda1,
            name=name or _fixed_margin_name(theta),
            margin_variance_rule=MarginVarianceRule.FIXED_MARGIN,
            theta=theta,
        )
    if u == 1 and lambda1 == 0:
        spec = make_traditional_synthesis()
    elif u == 1 and -1 < lambda1 < 0:
        spec = make_bias_adjusted_synthesis(lambda1)
    elif -1 < lambda1 < 0 and math.isclose(u, 1.0 / (1.0 + lambda1), rel_tol=_REL_TOL):
        spec = make_odem_davis(lambda1)
    else:
        return make_custom(u, lambda1, name)
    return spec.model_copy(update={"name": name}) if name else spec


def parse_method(entry: Union[str, Mapping[str, Any]], hist: HistoricalEvidence) -> MethodSpec:
    """設定ファイルの手法指定を解釈する

    文字列: ``traditional-sm``, ``ba-sm:<λ₁>``, ``od:<λ₁>``, ``95-95``, ``0-95``,
    ``fixed-margin:<θ>``, ``custom:<u>,<λ₁>``。
    辞書: ``{"u": ..., "lambda1": ..., "name": 任意}``。
    """
    if isinstance(entry, Mapping):
        try:
            u = float(entry["u"])
            lambda1 = float(entry["lambda1"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"手法指定には数値の u と lambda1 が必要です: {entry!r}") from exc
        return identify_method(u, lambda1, hist, entry.get("name"))

    text = entry.strip().lower()
    head, _, arg = text.partition(":")
    try:
        if head == "traditional-sm" and not arg:
            return make_traditional_synthesis()
        if head == "95-95" and not arg:
            return make_fixed_margin(NINETY_FIVE_THETA, hist)
        if head == "0-95" and not arg:
            return make_fixed_margin(0.5, hist)
        if head == "ba-sm":
            return make_bias_adjusted_synthesis(float(arg))
        if head == "od":
            return make_odem_davis(float(arg))
        if head == "fixed-margin":
            return make_fixed_margin(float(arg), hist)
        if head == "custom":
            u_text, _, lambda_text = arg.partition(",")
            return make_custom(float(u_text), float(lambda_text))
    except ValueError as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"手法指定の数値を解釈できません: {entry!r}") from exc
    raise InvalidInputError(f"未知の手法指定です: {entry!r}")


def preset_catalog(hist: HistoricalEvidence, lambda1: float = -0.23) -> Dict[str, MethodSpec]:
    """表で用いる 5 手法"""
    methods = [
        make_traditional_synthesis(),
        make_bias_adjusted_synthesis(lambda1),
        make_odem_davis(lambda1),
        make_fixed_margin(NINETY_FIVE_THETA, hist),
        make_fixed_margin(0.5, hist),
    ]
    return {m.name: m for m in methods}
