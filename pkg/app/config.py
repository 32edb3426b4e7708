"""実行設定（JSON 文書）の読込と検証

各コマンドは 1 つの JSON 文書を受け取り、pydantic モデルで検証する。
既定値は ``model_dump`` で明示されるため、読込→書出しで意味が変わらない。
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app import framework
from app.exceptions import ConfigError
from app.models import (
    DesignApproach,
    DesignTarget,
    FollowupModel,
    HistoricalEvidence,
    MethodSpec,
    SuccessCriterion,
    TrialModel,
)
from app.mc_harness import McLevel
from app.presets import parse_method

logger = logging.getLogger(__name__)


class CustomMethod(BaseModel):
    model_config = ConfigDict(extra="forbid")

    u: float = Field(ge=0)
    lambda1: float = Field(gt=-1)
    name: Optional[str] = None


class DesignConfig(BaseModel):
    """デザイン計算の入力"""

    model_config = ConfigDict(extra="forbid")

    methods: List[Union[str, CustomMethod]] = Field(min_length=1)
    f_preserv: Optional[float] = Field(default=0.5, gt=0, lt=1)
    null_pe: Optional[float] = Field(default=0.3, ge=0, lt=1)
    design_alternative_pe: float = Field(lt=1)
    hist_ac_pe: float = Field(gt=0, lt=1)
    hist_ac_effect_se: float = Field(gt=0)
    lambda0_for_design: float = Field(default=0.0, gt=-1)
    target_on_unconditional_power: bool = True
    ad_hoc_lambda0: Optional[float] = Field(default=None, gt=-1)
    allocation_ratio: float = Field(default=1.0, gt=0)
    power: float = Field(default=0.9, gt=0.5, lt=1)
    sign_level: float = Field(default=0.025, gt=0, lt=0.5)
    lambda0_sens_analysis: Optional[float] = Field(default=None, gt=-1)
    sens_analysis_pe: Optional[float] = Field(default=None, gt=0, lt=1)
    placebo_incidence_rate: float = Field(default=0.03, gt=0)
    loss_to_followup: float = Field(default=0.075, ge=0, lt=1)
    trial_duration: float = Field(default=2.0, gt=0)
    followup_model: FollowupModel = FollowupModel.LINEAR_LOSS
    correction: bool = False

    @model_validator(mode="after")
    def _check_consistency(self) -> "DesignConfig":
        if self.correction:
            raise ValueError("correction (interim monitoring) is not supported")
        if self.f_preserv is None and self.null_pe is None:
            raise ValueError("f_preserv と null_pe の少なくとも一方が必要です")
        if self.ad_hoc_lambda0 is not None and self.target_on_unconditional_power:
            raise ValueError("ad_hoc_lambda0 は target_on_unconditional_power = false と併用します")
        if self.lambda0_sens_analysis is not None and self.sens_analysis_pe is not None:
            raise ValueError("lambda0_sens_analysis と sens_analysis_pe はどちらか一方だけ指定します")
        return self

    def historical_evidence(self) -> HistoricalEvidence:
        return HistoricalEvidence.from_pe(self.hist_ac_pe, self.hist_ac_effect_se)

    def sensitivity_lambda0(self) -> Optional[float]:
        """感度分析の λ₀。sens_analysis_pe からは (1+λ₀)γ̂_CP,H = log(1 − PE) で厳密に求める"""
        if self.sens_analysis_pe is not None:
            return framework.lambda0_from_control_pe(self.sens_analysis_pe, self.historical_evidence())
        return self.lambda0_sens_analysis

    def method_specs(self) -> List[MethodSpec]:
        hist = self.historical_evidence()
        return [
            parse_method(m.model_dump() if isinstance(m, CustomMethod) else m, hist)
            for m in self.methods
        ]

    def criteria(self) -> List[SuccessCriterion]:
        criteria = []
        if self.f_preserv is not None:
            criteria.append(SuccessCriterion.preservation(self.f_preserv))
        if self.null_pe is not None:
            criteria.append(SuccessCriterion.inferred_efficacy(self.null_pe))
        return criteria

    def target(self) -> DesignTarget:
        if self.ad_hoc_lambda0 is not None:
            return DesignTarget(
                power=self.power,
                alpha=self.sign_level,
                approach=DesignApproach.AD_HOC_CONDITIONAL,
                ad_hoc_lambda0=self.ad_hoc_lambda0,
            )
        approach = (
            DesignApproach.NOVEL_UNCONDITIONAL
            if self.target_on_unconditional_power
            else DesignApproach.TRADITIONAL_CONDITIONAL
        )
        return DesignTarget(power=self.power, alpha=self.sign_level, approach=approach)

    def trial_model(self) -> TrialModel:
        return TrialModel(
            placebo_incidence=self.placebo_incidence_rate,
            ltfu_annual=self.loss_to_followup,
            duration_years=self.trial_duration,
            allocation_ratio=self.allocation_ratio,
            followup_model=self.followup_model,
        )


class OcConfig(DesignConfig):
    """固定した V_XC での動作特性表"""

    v_xc: float = Field(gt=0)
    lambda0_grid: List[float] = Field(default_factory=lambda: [0.0], min_length=1)


class PowerCurveConfig(DesignConfig):
    """最大無条件検出力曲線。pe_grid を省略すると start/stop/step から作る"""

    pe_grid: Optional[List[float]] = Field(default=None, min_length=1)
    pe_grid_start: float = Field(default=0.65, lt=1)
    pe_grid_stop: float = Field(default=0.98, lt=1)
    pe_grid_step: float = Field(default=0.005, gt=0)

    @model_validator(mode="after")
    def _check_grid(self) -> "PowerCurveConfig":
        if self.pe_grid is None and self.pe_grid_stop < self.pe_grid_start:
            raise ValueError("pe_grid_stop は pe_grid_start 以上である必要があります")
        if self.pe_grid is not None and any(pe >= 1 for pe in self.pe_grid):
            raise ValueError("pe_grid の値は 1 未満である必要があります")
        return self

    def grid(self) -> List[float]:
        if self.pe_grid is not None:
            return list(self.pe_grid)
        count = int(round((self.pe_grid_stop - self.pe_grid_start) / self.pe_grid_step)) + 1
        values = self.pe_grid_start + self.pe_grid_step * np.arange(count)
        return [round(float(v), 10) for v in values]


class SimulationCheck(str, Enum):
    POWER = "power"
    TYPE1 = "type1"


class SimulationBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    level: McLevel = McLevel.ESTIMATE_LEVEL
    check: SimulationCheck = SimulationCheck.POWER
    lambda0: Optional[float] = Field(default=None, gt=-1)
    v_xc: Optional[float] = Field(default=None, gt=0)
    replications: int = Field(default=100_000, ge=1)
    master_seed: int = Field(default=20240101, ge=0, lt=2 ** 64)


class SimulateConfig(DesignConfig):
    simulation: SimulationBlock = Field(default_factory=SimulationBlock)


ConfigT = TypeVar("ConfigT", bound=DesignConfig)


def _diagnostics(exc: ValidationError) -> List[str]:
    lines = []
    for err in exc.errors():
        location = ".".join(str(part) for part in err.get("loc", ())) or "<root>"
        lines.append(f"{location}: {err.get('msg')}")
    return lines


def parse_config(data: Union[str, bytes, Dict[str, Any]], cls: Type[ConfigT]) -> ConfigT:
    """JSON 文字列または辞書を検証する。失敗時はフィールド単位の診断付き ConfigError"""
    try:
        if isinstance(data, (str, bytes)):
            return cls.model_validate_json(data)
        return cls.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("設定の検証に失敗しました", _diagnostics(exc)) from exc


def load_config(path: Union[str, Path], cls: Type[ConfigT]) -> ConfigT:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"設定ファイルを読めません: {path}", [str(exc)]) from exc
    config = parse_config(text, cls)
    logger.info(f"設定ファイルを読み込みました: {path}")
    return config


def dump_config(config: DesignConfig) -> Dict[str, Any]:
    """既定値を明示した JSON 互換の辞書"""
    return config.model_dump(mode="json")

