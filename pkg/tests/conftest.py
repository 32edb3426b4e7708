import os
import tempfile

# ログはテスト用の一時ディレクトリへ（app の import より前に設定する）
os.environ.setdefault("NI_DESIGN_LOG_DIR", tempfile.mkdtemp(prefix="ni_design_logs_"))

import math

import pytest

from app.models import (
    DesignApproach,
    DesignTarget,
    HistoricalEvidence,
    SuccessCriterion,
    TrialModel,
    TruthScenario,
)
from app.presets import preset_catalog
from app.scales import pe_to_loghr

HIST_PE = 0.928
HIST_SE = 0.61
DESIGN_PE = 0.95
ALPHA = 0.025
POWER = 0.9
SENS_LAMBDA0 = 0.12


@pytest.fixture
def hist():
    """実対照薬の歴史的エビデンス（PE 92.8%、標準誤差 0.61）"""
    return HistoricalEvidence.from_pe(HIST_PE, HIST_SE)


@pytest.fixture
def methods(hist):
    """表で用いる 5 手法（Traditional SM, BA-SM, OD, 95-95, 0-95 の順）"""
    return list(preset_catalog(hist).values())


@pytest.fixture
def method_by_name(methods):
    return {m.name: m for m in methods}


@pytest.fixture
def preservation():
    """50% 効果保持基準"""
    return SuccessCriterion.preservation(0.5)


@pytest.fixture
def inferred():
    """推定有効性 30% 基準"""
    return SuccessCriterion.inferred_efficacy(0.3)


@pytest.fixture
def trial_model():
    """発生率 3%、年 7.5% 脱落、2 年追跡、1:1 割付"""
    return TrialModel(placebo_incidence=0.03, ltfu_annual=0.075, duration_years=2.0)


@pytest.fixture
def design_scenario():
    """恒常性の下で実薬 PE 95% の設計対立仮説"""
    return TruthScenario(lambda0=0.0, gamma_xp=pe_to_loghr(DESIGN_PE))


@pytest.fixture
def targets():
    """3 つの設計アプローチ"""
    return {
        "traditional": DesignTarget(
            power=POWER, alpha=ALPHA, approach=DesignApproach.TRADITIONAL_CONDITIONAL
        ),
        "novel": DesignTarget(power=POWER, alpha=ALPHA, approach=DesignApproach.NOVEL_UNCONDITIONAL),
        "ad_hoc": DesignTarget(
            power=POWER,
            alpha=ALPHA,
            approach=DesignApproach.AD_HOC_CONDITIONAL,
            ad_hoc_lambda0=SENS_LAMBDA0,
        ),
    }


@pytest.fixture
def vignette_config():
    """利用例と同じ設定文書（5 手法を (u, λ₁) で指定、条件付き検出力を目標）"""
    return {
        "methods": [
            {"u": 1, "lambda1": 0},
            {"u": 1, "lambda1": -0.23},
            {"u": 1 / (1 - 0.23), "lambda1": -0.23},
            {"u": 0, "lambda1": 1.96 * 0.61 / math.log(1 - 0.928)},
            {"u": 0, "lambda1": 0},
        ],
        "f_preserv": 0.5,
        "null_pe": 0.3,
        "design_alternative_pe": 0.95,
        "hist_ac_pe": 0.928,
        "hist_ac_effect_se": 0.61,
        "lambda0_for_design": 0,
        "target_on_unconditional_power": False,
        "allocation_ratio": 1,
        "power": 0.9,
        "sign_level": 0.025,
        "lambda0_sens_analysis": 0.12,
        "placebo_incidence_rate": 0.03,
        "loss_to_followup": 0.075,
        "trial_duration": 2,
        "correction": False,
    }
