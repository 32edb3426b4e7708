"""ドメイン型（pydantic モデル）

フレームワーク本体・デザインエンジン・シミュレーションが共有する値オブジェクト。
すべて不変 (frozen) で、検証は構築時に行う。
"""

import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, FiniteFloat, model_validator

from app.scales import pe_to_loghr


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class HistoricalEvidence(_Frozen):
    """歴史的試験における実対照薬の効果推定値 γ̂_CP,H と標準誤差 √V_CP,H"""

    gamma_hat: FiniteFloat
    se: FiniteFloat = Field(gt=0)

    @classmethod
    def from_pe(cls, pe: float, se: float) -> "HistoricalEvidence":
        return cls(gamma_hat=pe_to_loghr(pe), se=se)

    @property
    def variance(self) -> float:
        return self.se ** 2


class MarginVarianceRule(str, Enum):
    RANDOM_MARGIN = "random_margin"
    FIXED_MARGIN = "fixed_margin"


class MethodSpec(_Frozen):
    """手法族 (u, λ₁) の一点と表示名

    固定マージン法は構築時の θ を保持し、シミュレーションで λ₁ を再計算できるようにする。
    """

    u: FiniteFloat = Field(ge=0)
    lambda1: FiniteFloat = Field(gt=-1)
    name: str
    margin_variance_rule: MarginVarianceRule
    theta: Optional[float] = Field(default=None, gt=0, le=0.5)

    @model_validator(mode="after")
    def _check_rule(self) -> "MethodSpec":
        fixed = self.margin_variance_rule is MarginVarianceRule.FIXED_MARGIN
        if fixed != (self.u == 0):
            raise ValueError("fixed_margin は u = 0 のときに限り、かつ u = 0 なら必須です")
        if self.theta is not None and not fixed:
            raise ValueError("θ は固定マージン法にのみ指定できます")
        return self

    @property
    def is_fixed_margin(self) -> bool:
        return self.margin_variance_rule is MarginVarianceRule.FIXED_MARGIN


class CriterionKind(str, Enum):
    PRESERVATION = "preservation"
    INFERRED_EFFICACY = "inferred_efficacy"


class SuccessCriterion(_Frozen):
    """成功基準 (f, Δ₀)

    効果保持基準では Δ₀ = 0、推定有効性基準では f = 0。
    """

    f: FiniteFloat = Field(ge=0, lt=1)
    delta0: FiniteFloat = Field(le=0)

    @model_validator(mode="after")
    def _check_pair(self) -> "SuccessCriterion":
        if self.f != 0 and self.delta0 != 0:
            raise ValueError("f と Δ₀ の少なくとも一方は 0 である必要があります")
        return self

    @classmethod
    def preservation(cls, f: float) -> "SuccessCriterion":
        return cls(f=f, delta0=0.0)

    @classmethod
    def inferred_efficacy(cls, null_pe: float) -> "SuccessCriterion":
        return cls(f=0.0, delta0=pe_to_loghr(null_pe))

    @property
    def kind(self) -> CriterionKind:
        if self.f > 0:
            return CriterionKind.PRESERVATION
        return CriterionKind.INFERRED_EFFICACY

    @property
    def label(self) -> str:
        if self.kind is CriterionKind.PRESERVATION:
            return f"Preserving {_percent(self.f)} of the active control effect"
        return f"Inferred efficacy of {_percent(-math.expm1(self.delta0))}"


class TruthScenario(_Frozen):
    """評価に用いる真値: 相対効果偏差 λ₀ と実薬対プラセボ効果 γ_XP"""

    lambda0: FiniteFloat = Field(gt=-1)
    gamma_xp: FiniteFloat


class TrialEstimates(_Frozen):
    gamma_hat_xc: FiniteFloat
    v_xc: FiniteFloat = Field(gt=0)


class FollowupModel(str, Enum):
    """追跡不能の扱い

    LINEAR_LOSS: 年率 ltfu で線形に脱落し、1 人あたり期待イベント数 = 発生率 × 平均追跡期間。
    EXPONENTIAL: 指数的な競合打ち切り。
    """

    LINEAR_LOSS = "linear_loss"
    EXPONENTIAL = "exponential"


class TrialModel(_Frozen):
    """イベント時間モデル（一定ハザード、固定追跡期間）"""

    placebo_incidence: float = Field(ge=0)
    ltfu_annual: float = Field(ge=0, lt=1)
    duration_years: float = Field(gt=0)
    allocation_ratio: float = Field(default=1.0, gt=0)
    followup_model: FollowupModel = FollowupModel.LINEAR_LOSS


class DesignApproach(str, Enum):
    TRADITIONAL_CONDITIONAL = "traditional_conditional"
    NOVEL_UNCONDITIONAL = "novel_unconditional"
    AD_HOC_CONDITIONAL = "ad_hoc_conditional"


class DesignTarget(_Frozen):
    """検出力目標と設計アプローチ

    アドホックアプローチでは想定する実対照薬 PE か λ₀ のどちらか一方を与える。
    """

    power: float = Field(gt=0.5, lt=1)
    alpha: float = Field(gt=0, lt=0.5)
    approach: DesignApproach = DesignApproach.TRADITIONAL_CONDITIONAL
    assumed_control_pe: Optional[float] = Field(default=None, lt=1)
    ad_hoc_lambda0: Optional[float] = Field(default=None, gt=-1)

    @model_validator(mode="after")
    def _check_ad_hoc(self) -> "DesignTarget":
        given = (self.assumed_control_pe is not None) + (self.ad_hoc_lambda0 is not None)
        if self.approach is DesignApproach.AD_HOC_CONDITIONAL and given != 1:
            raise ValueError("アドホックアプローチには assumed_control_pe か ad_hoc_lambda0 のどちらか一方が必要です")
        if self.approach is not DesignApproach.AD_HOC_CONDITIONAL and given:
            raise ValueError("想定対照効果はアドホックアプローチでのみ指定できます")
        return self

    @property
    def conditional(self) -> bool:
        return self.approach is not DesignApproach.NOVEL_UNCONDITIONAL


class DesignResult(BaseModel):
    """デザイン表の 1 行。実行不能な行は ``feasible = False`` で数値欄が None"""

    method_name: str
    criterion: str
    feasible: bool = True
    infeasible_reason: Optional[str] = None
    infeasible_bound: Optional[str] = None
    v_xc_solved: Optional[float] = None
    margin_log: Optional[float] = None
    margin_hr: Optional[float] = None
    rne_total: Optional[int] = None
    rne_exp: Optional[int] = None
    rne_ctr: Optional[int] = None
    n_total: Optional[int] = None
    n_exp: Optional[int] = None
    n_ctr: Optional[int] = None
    lambda0_min: Optional[float] = None
    cnc_pe: Optional[float] = None
    up0: Optional[float] = None
    up_sens: Optional[float] = None


class CriterionTable(BaseModel):
    criterion: str
    rows: List[DesignResult]


class DesignReport(BaseModel):
    specifications: List[str]
    tables: List[CriterionTable]


class OperatingCharacteristics(BaseModel):
    """ある V_XC・λ₀ における 4 つの確率とマージン類"""

    method_name: str
    criterion: str
    v_xc: float
    lambda0: float
    unconditional_power: float
    conditional_power: float
    unconditional_t1e: float
    conditional_t1e: float
    margin_log: float
    margin_hr: float
    lambda0_min: Optional[float] = None
    cnc_pe: Optional[float] = None


def _percent(x: float) -> str:
    return f"{round(x * 100, 1):g}%"
