"""一般化非劣性検定の閉形式計算

検定統計量 T、棄却規則、成功マージン、条件付き・無条件の検出力と第一種過誤、
許容できる非恒常性、検出可能性の境界、Snapinn 型統計量との対応を扱う。

演算はすべて対数ハザード比尺度。γ_CP,H の真値を要する式は ``gamma_cph`` 引数で受け取り、
省略時は歴史的推定値 γ̂_CP,H を用いる。
"""

import logging
import math
from typing import Optional, Tuple

from app.exceptions import DomainError, InvalidInputError, PreconditionError
from app.models import (
    HistoricalEvidence,
    MarginVarianceRule,
    MethodSpec,
    OperatingCharacteristics,
    SuccessCriterion,
    TrialEstimates,
    TruthScenario,
)
from app.scales import loghr_to_pe
from app.statdist import norm_cdf, z_upper

logger = logging.getLogger(__name__)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 0.5:
        raise InvalidInputError(f"有意水準は (0, 0.5) の範囲である必要があります: {alpha}")


def _check_v_xc(v_xc: float) -> None:
    if not (math.isfinite(v_xc) and v_xc > 0):
        raise InvalidInputError(f"V_XC は正の有限値である必要があります: {v_xc}")


def _true_gamma(hist: HistoricalEvidence, gamma_cph: Optional[float]) -> float:
    return hist.gamma_hat if gamma_cph is None else gamma_cph


def _margin_weight(m: MethodSpec, c: SuccessCriterion) -> float:
    """(1−f)(1+λ₁)"""
    return (1.0 - c.f) * (1.0 + m.lambda1)


def _statistic_variance(v_xc: float, hist: HistoricalEvidence, m: MethodSpec, c: SuccessCriterion) -> float:
    """V_XC + u²(1−f)²(1+λ₁)²V_CP,H"""
    w = _margin_weight(m, c)
    return v_xc + (m.u * w) ** 2 * hist.variance


def _outcome_variance(v_xc: float, hist: HistoricalEvidence, m: MethodSpec, c: SuccessCriterion) -> float:
    """V_XC + (1−f)²Ṽ_CP,H"""
    return v_xc + (1.0 - c.f) ** 2 * tilde_v_cph(m, hist)


def tilde_v_cph(method: MethodSpec, hist: HistoricalEvidence) -> float:
    """マージン成分の分散 Ṽ_CP,H

    ランダムマージン (u > 0) では (1+λ₁)²V_CP,H、固定マージン (u = 0) では V_CP,H。
    """
    if method.margin_variance_rule is MarginVarianceRule.RANDOM_MARGIN:
        return (1.0 + method.lambda1) ** 2 * hist.variance
    return hist.variance


def test_statistic(est: TrialEstimates, hist: HistoricalEvidence, m: MethodSpec, c: SuccessCriterion) -> float:
    """T = [γ̂_XC + (1−f)(1+λ₁)γ̂_CP,H − Δ₀] / √(V_XC + u²(1−f)²(1+λ₁)²V_CP,H)"""
    variance = _statistic_variance(est.v_xc, hist, m, c)
    if not variance > 0:
        raise InvalidInputError("検定統計量の分散が正ではありません")
    numerator = est.gamma_hat_xc + _margin_weight(m, c) * hist.gamma_hat - c.delta0
    return numerator / math.sqrt(variance)


# pytest が関数名から収集しないようにする
test_statistic.__test__ = False


def reject(t: float, alpha: float) -> bool:
    """T < −Z_{1−α} のとき帰無仮説を棄却する"""
    _check_alpha(alpha)
    return t < -z_upper(alpha)


def success_margin(
    v_xc: float, hist: HistoricalEvidence, m: MethodSpec, c: SuccessCriterion, alpha: float
) -> float:
    """成功マージン δ（対数ハザード比）

    棄却は γ̂_XC + Z_{1−α}√V_XC < δ と同値になる。u = 0 では V_XC に依存しない。
    """
    _check_alpha(alpha)
    _check_v_xc(v_xc)
    z = z_upper(alpha)
    spread = math.sqrt(_statistic_variance(v_xc, hist, m, c)) - math.sqrt(v_xc)
    return c.delta0 - _margin_weight(m, c) * hist.gamma_hat - z * spread


def boundary_gamma_xp(c: SuccessCriterion, lambda0: float, gamma_cph: float) -> float:
    """科学的帰無仮説の境界 γ_XP = Δ₀ + f(1+λ₀)γ_CP,H"""
    return c.delta0 + c.f * (1.0 + lambda0) * gamma_cph


def _power_drift(m: MethodSpec, c: SuccessCriterion, s: TruthScenario, gamma: float) -> float:
    """Δ₀ + {(1+λ₀) − (1−f)(1+λ₁)}γ_CP,H − γ_XP"""
    return c.delta0 + ((1.0 + s.lambda0) - _margin_weight(m, c)) * gamma - s.gamma_xp


def unconditional_power(
    v_xc: float,
    hist: HistoricalEvidence,
    m: MethodSpec,
    c: SuccessCriterion,
    s: TruthScenario,
    alpha: float,
    gamma_cph: Optional[float] = None,
) -> float:
    """履歴推定値も確率変数として扱った検出力"""
    _check_alpha(alpha)
    _check_v_xc(v_xc)
    gamma = _true_gamma(hist, gamma_cph)
    z = z_upper(alpha)
    drift = _power_drift(m, c, s, gamma)
    k = _statistic_variance(v_xc, hist, m, c)
    return norm_cdf((drift - z * math.sqrt(k)) / math.sqrt(_outcome_variance(v_xc, hist, m, c)))


def unconditional_t1e(
    v_xc: float,
    hist: HistoricalEvidence,
    m: MethodSpec,
    c: SuccessCriterion,
    s: TruthScenario,
    alpha: float,
    gamma_cph: Optional[float] = None,
) -> float:
    """科学的帰無仮説の境界における無条件第一種過誤（s.gamma_xp は使わない）"""
    _check_alpha(alpha)
    _check_v_xc(v_xc)
    gamma = _true_gamma(hist, gamma_cph)
    z = z_upper(alpha)
    drift = (1.0 - c.f) * (s.lambda0 - m.lambda1) * gamma
    k = _statistic_variance(v_xc, hist, m, c)
    return norm_cdf((drift - z * math.sqrt(k)) / math.sqrt(_outcome_variance(v_xc, hist, m, c)))


def conditional_power(
    v_xc: float,
    hist: HistoricalEvidence,
    m: MethodSpec,
    c: SuccessCriterion,
    s: TruthScenario,
    alpha: float,
    gamma_cph: Optional[float] = None,
) -> float:
    """γ̂_CP,H を固定した検出力。マージンは観測値 γ̂、対照効果は真値 γ を用いる"""
    _check_alpha(alpha)
    _check_v_xc(v_xc)
    gamma = _true_gamma(hist, gamma_cph)
    z = z_upper(alpha)
    drift = c.delta0 - _margin_weight(m, c) * hist.gamma_hat + (1.0 + s.lambda0) * gamma - s.gamma_xp
    k = _statistic_variance(v_xc, hist, m, c)
    return norm_cdf((drift - z * math.sqrt(k)) / math.sqrt(v_xc))


def conditional_t1e(
    v_xc: float,
    hist: HistoricalEvidence,
    m: MethodSpec,
    c: SuccessCriterion,
    s: TruthScenario,
    alpha: float,
    gamma_cph: Optional[float] = None,
) -> float:
    """γ̂_CP,H を固定した、帰無仮説境界での第一種過誤"""
    _check_alpha(alpha)
    _check_v_xc(v_xc)
    gamma = _true_gamma(hist, gamma_cph)
    z = z_upper(alpha)
    drift = (1.0 - c.f) * ((1.0 + s.lambda0) * gamma - (1.0 + m.lambda1) * hist.gamma_hat)
    k = _statistic_variance(v_xc, hist, m, c)
    return norm_cdf((drift - z * math.sqrt(k)) / math.sqrt(v_xc))


def null_statistic_variance(v_xc: float, hist: HistoricalEvidence, m: MethodSpec, c: SuccessCriterion) -> float:
    """帰無仮説下での T の分散 σ²"""
    _check_v_xc(v_xc)
    return _outcome_variance(v_xc, hist, m, c) / _statistic_variance(v_xc, hist, m, c)


def lambda0_min(
    v_xc: float, hist: HistoricalEvidence, m: MethodSpec, c: SuccessCriterion, alpha: float
) -> float:
    """無条件第一種過誤がちょうど α となる λ₀（許容できる非恒常性）"""
    _check_alpha(alpha)
    _check_v_xc(v_xc)
    if hist.gamma_hat >= 0:
        raise PreconditionError("λ₀,min には有効な実対照薬 (γ̂_CP,H < 0) が必要です")
    z = z_upper(alpha)
    k = _statistic_variance(v_xc, hist, m, c)
    spread = math.sqrt(k) - math.sqrt(_outcome_variance(v_xc, hist, m, c))
    return m.lambda1 + spread * z / ((1.0 - c.f) * hist.gamma_hat)


def controlled_non_constancy_pe(lambda0_min: float, hist: HistoricalEvidence) -> float:
    """λ₀,min を対象集団での実対照薬 PE の下限として表す"""
    return loghr_to_pe((1.0 + lambda0_min) * hist.gamma_hat)


def lambda0_from_control_pe(pe: float, hist: HistoricalEvidence) -> float:
    """(1+λ₀)γ̂_CP,H = log(1 − pe) を満たす λ₀"""
    if hist.gamma_hat == 0:
        raise PreconditionError("γ̂_CP,H = 0 では λ₀ を定められません")
    if pe >= 1.0:
        raise DomainError(f"PE = {pe} は有限の対数ハザード比を持ちません")
    return math.log1p(-pe) / hist.gamma_hat - 1.0


def fixed_margin_lambda0_min(
    v_xc: float, hist: HistoricalEvidence, theta: float, c: SuccessCriterion, alpha: float
) -> float:
    """固定マージン法 (θ) の λ₀,min を Z_{1−θ} と Z_{1−α} で書いた形"""
    _check_alpha(alpha)
    _check_v_xc(v_xc)
    if hist.gamma_hat >= 0:
        raise PreconditionError("λ₀,min には有効な実対照薬 (γ̂_CP,H < 0) が必要です")
    if not 0.0 < theta <= 0.5:
        raise InvalidInputError(f"θ は (0, 0.5] の範囲である必要があります: {theta}")
    z_theta = z_upper(theta) if theta < 0.5 else 0.0
    z_alpha = z_upper(alpha)
    spread = math.sqrt(v_xc) - math.sqrt(v_xc + (1.0 - c.f) ** 2 * hist.variance)
    return (z_theta * hist.se + z_alpha * spread / (1.0 - c.f)) / hist.gamma_hat


def max_unconditional_power(
    hist: HistoricalEvidence,
    m: MethodSpec,
    c: SuccessCriterion,
    s: TruthScenario,
    alpha: float,
    gamma_cph: Optional[float] = None,
) -> float:
    """V_XC → 0 で到達する無条件検出力の上限"""
    _check_alpha(alpha)
    if c.f >= 1.0:
        raise PreconditionError("f = 1 では検出力の上限が定義されません")
    gamma = _true_gamma(hist, gamma_cph)
    z = z_upper(alpha)
    drift = _power_drift(m, c, s, gamma)
    return norm_cdf(-m.u * z + drift / ((1.0 - c.f) * math.sqrt(tilde_v_cph(m, hist))))


def detectable_with_conditional_power(
    hist: HistoricalEvidence,
    m: MethodSpec,
    c: SuccessCriterion,
    s: TruthScenario,
    alpha: float,
    gamma_cph: Optional[float] = None,
) -> bool:
    """十分大きな試験で条件付き検出力が 50% を超えうるか"""
    _check_alpha(alpha)
    gamma = _true_gamma(hist, gamma_cph)
    z = z_upper(alpha)
    bound = (
        c.delta0
        + (1.0 + s.lambda0) * gamma
        - _margin_weight(m, c) * (gamma + m.u * z * hist.se)
    )
    return s.gamma_xp < bound


def detectable_with_unconditional_power(
    hist: HistoricalEvidence,
    m: MethodSpec,
    c: SuccessCriterion,
    s: TruthScenario,
    alpha: float,
    beta: float,
    gamma_cph: Optional[float] = None,
) -> bool:
    """無条件検出力 1−β が達成可能か"""
    _check_alpha(alpha)
    if not 0.0 < beta < 0.5:
        raise InvalidInputError(f"β は (0, 0.5) の範囲である必要があります: {beta}")
    gamma = _true_gamma(hist, gamma_cph)
    z = z_upper(alpha)
    z_beta = z_upper(beta)
    bound = (
        c.delta0
        + (1.0 + s.lambda0) * gamma
        - (1.0 - c.f)
        * ((1.0 + m.lambda1) * gamma + (m.u * z + z_beta) * math.sqrt(tilde_v_cph(m, hist)))
    )
    return s.gamma_xp < bound


def lambda1_admissible_bound(
    hist: HistoricalEvidence,
    m_u: float,
    s_lambda0: float,
    alpha: float,
    gamma_cph: Optional[float] = None,
) -> float:
    """すべての V_XC で第一種過誤の分子を負に保つ λ₁ の上限"""
    _check_alpha(alpha)
    gamma = _true_gamma(hist, gamma_cph)
    shift = m_u * z_upper(alpha) * hist.se
    if not gamma + shift < 0:
        raise PreconditionError("この u と α では歴史的対照の有効性が示されていません")
    return s_lambda0 - (1.0 + s_lambda0) * shift / (gamma + shift)


def snapinn_to_framework(
    v: float, w: float, v_xc: float, hist: HistoricalEvidence
) -> Tuple[MethodSpec, SuccessCriterion]:
    """割引型統計量 (v, w) を (u, λ₁, f, Δ₀) に写す"""
    _check_v_xc(v_xc)
    if not (math.isfinite(v) and v >= 0):
        raise InvalidInputError(f"v は非負である必要があります: {v}")
    if w == 1.0:
        raise DomainError("w = 1 は写像できません")
    if not 0.0 <= w < 1.0:
        raise InvalidInputError(f"w は [0, 1) の範囲である必要があります: {w}")
    u = math.sqrt(1.0 + 2.0 * v * math.sqrt(v_xc) / ((1.0 - w) * hist.se))
    method = MethodSpec(
        u=u,
        lambda1=-w,
        name=f"Snapinn v={v:g}, w={w:g}",
        margin_variance_rule=MarginVarianceRule.RANDOM_MARGIN,
    )
    return method, SuccessCriterion(f=0.0, delta0=0.0)


def snapinn_statistic(est: TrialEstimates, hist: HistoricalEvidence, v: float, w: float) -> float:
    """割引型統計量 T_{v,w} の直接計算"""
    keep = 1.0 - w
    variance = (
        est.v_xc
        + keep ** 2 * hist.variance
        + 2.0 * v * keep * math.sqrt(est.v_xc * hist.variance)
    )
    return (est.gamma_hat_xc + keep * hist.gamma_hat) / math.sqrt(variance)


def null_efficacy(c: SuccessCriterion, hist: HistoricalEvidence, lambda0: float = 0.0) -> float:
    """除外すべき帰無効果 Δ = Δ₀ + f·γ_CP（対数ハザード比）"""
    return boundary_gamma_xp(c, lambda0, hist.gamma_hat)


def implied_null_pe(c: SuccessCriterion, hist: HistoricalEvidence, lambda0: float = 0.0) -> float:
    """帰無効果を PE 尺度で表す（50% 保持・対照 92.8% なら 73.2%）"""
    return loghr_to_pe(null_efficacy(c, hist, lambda0))


def implied_preserved_fraction(null_pe: float, hist: HistoricalEvidence, lambda0: float = 0.0) -> float:
    """推定有効性の閾値と同じ帰無効果を与える保持割合 f"""
    if hist.gamma_hat >= 0:
        raise PreconditionError("保持割合には有効な実対照薬 (γ̂_CP,H < 0) が必要です")
    return math.log1p(-null_pe) / ((1.0 + lambda0) * hist.gamma_hat)


def operating_characteristics(
    v_xc: float,
    hist: HistoricalEvidence,
    m: MethodSpec,
    c: SuccessCriterion,
    s: TruthScenario,
    alpha: float,
) -> OperatingCharacteristics:
    """1 つの (V_XC, λ₀) における動作特性をまとめて返す"""
    margin = success_margin(v_xc, hist, m, c, alpha)
    l0min: Optional[float] = None
    cnc: Optional[float] = None
    if hist.gamma_hat < 0:
        l0min = lambda0_min(v_xc, hist, m, c, alpha)
        cnc = controlled_non_constancy_pe(l0min, hist)
    return OperatingCharacteristics(
        method_name=m.name,
        criterion=c.label,
        v_xc=v_xc,
        lambda0=s.lambda0,
        unconditional_power=unconditional_power(v_xc, hist, m, c, s, alpha),
        conditional_power=conditional_power(v_xc, hist, m, c, s, alpha),
        unconditional_t1e=unconditional_t1e(v_xc, hist, m, c, s, alpha),
        conditional_t1e=conditional_t1e(v_xc, hist, m, c, s, alpha),
        margin_log=margin,
        margin_hr=math.exp(margin),
        lambda0_min=l0min,
        cnc_pe=cnc,
    )
