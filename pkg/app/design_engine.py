"""試験デザインエンジン

必要精度 V_XC の求解、イベント数・症例数への換算、手法ごとのデザイン表の組み立て、
最大無条件検出力曲線を扱う。
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import bisect

from app import framework
from app.exceptions import (
    DesignInfeasibleError,
    InvalidInputError,
    NumericalFailure,
    PreconditionError,
)
from app.models import (
    CriterionTable,
    DesignApproach,
    DesignReport,
    DesignResult,
    DesignTarget,
    FollowupModel,
    HistoricalEvidence,
    MethodSpec,
    SuccessCriterion,
    TrialModel,
    TruthScenario,
)
from app.scales import loghr_to_pe, pe_to_loghr

logger = logging.getLogger(__name__)

# log V_XC の探索区間。下端は検出力の上限に近い目標で LOG_V_FLOOR まで広げる
LOG_V_LOWER = -14.0
LOG_V_UPPER = 7.0
LOG_V_FLOOR = -700.0
_XTOL = 1e-13
_MAXITER = 200


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def mean_followup(model: TrialModel) -> float:
    """線形脱落下の 1 人あたり平均追跡年数"""
    loss = model.ltfu_annual
    duration = model.duration_years
    if loss * duration > 1.0:
        return 1.0 / (2.0 * loss)
    return duration - loss * duration ** 2 / 2.0


def event_probability(rate: float, model: TrialModel) -> float:
    """1 人あたりのイベント発生確率（期待イベント数）

    EXPONENTIAL はハザード h と打ち切りハザード ℓ = −ln(1−ltfu) の競合で
    [h/(h+ℓ)]·(1 − exp(−(h+ℓ)T))。LINEAR_LOSS は h × 平均追跡期間。
    """
    if not math.isfinite(rate) or rate < 0:
        raise InvalidInputError(f"イベント発生率は非負である必要があります: {rate}")
    if rate == 0:
        return 0.0
    if model.followup_model is FollowupModel.LINEAR_LOSS:
        return min(1.0, rate * mean_followup(model))
    censoring = -math.log1p(-model.ltfu_annual)
    total = rate + censoring
    return rate / total * -math.expm1(-total * model.duration_years)


def arm_event_rates(model: TrialModel, pe_exp: float, pe_ctr: float) -> Tuple[float, float]:
    """各群の年間イベント発生率 placebo_incidence·(1 − PE)"""
    return (
        model.placebo_incidence * (1.0 - pe_exp),
        model.placebo_incidence * (1.0 - pe_ctr),
    )


def _arm_probabilities(model: TrialModel, pe_exp: float, pe_ctr: float) -> Tuple[float, float]:
    rate_exp, rate_ctr = arm_event_rates(model, pe_exp, pe_ctr)
    p_exp = event_probability(rate_exp, model)
    p_ctr = event_probability(rate_ctr, model)
    if p_exp <= 0 or p_ctr <= 0:
        raise DesignInfeasibleError(
            "イベント発生確率が 0 のため症例数を決められません", bound="zero_event_probability"
        )
    return p_exp, p_ctr


def solving_scenario(target: DesignTarget, hist: HistoricalEvidence, s: TruthScenario) -> TruthScenario:
    """求解に用いるシナリオ。アドホックアプローチでは想定対照効果で λ₀ を置き換える"""
    if target.approach is not DesignApproach.AD_HOC_CONDITIONAL:
        return s
    return s.model_copy(update={"lambda0": ad_hoc_lambda0(target, hist)})


def ad_hoc_lambda0(target: DesignTarget, hist: HistoricalEvidence) -> float:
    if target.ad_hoc_lambda0 is not None:
        return target.ad_hoc_lambda0
    return framework.lambda0_from_control_pe(target.assumed_control_pe, hist)


def solve_v_xc(
    target: DesignTarget,
    hist: HistoricalEvidence,
    m: MethodSpec,
    c: SuccessCriterion,
    s: TruthScenario,
) -> float:
    """目標検出力を与える V_XC を求める

    条件付きアプローチは条件付き検出力、新規アプローチは無条件検出力を目標にする。
    検出力は実行可能域で V_XC について単調減少なので log V_XC 上の二分法で一意に求まる。
    """
    scenario = solving_scenario(target, hist, s)
    alpha = target.alpha
    if target.conditional:
        if not framework.detectable_with_conditional_power(hist, m, c, scenario, alpha):
            raise DesignInfeasibleError(
                f"{m.name}: 設計対立仮説は条件付き検出力で検出できません",
                bound="conditional_detectability",
            )
        power_fn = framework.conditional_power
    else:
        beta = 1.0 - target.power
        if not framework.detectable_with_unconditional_power(hist, m, c, scenario, alpha, beta):
            raise DesignInfeasibleError(
                f"{m.name}: 設計対立仮説は無条件検出力 {target.power:g} で検出できません",
                bound="unconditional_detectability",
            )
        power_fn = framework.unconditional_power

    def gap(log_v: float) -> float:
        return power_fn(math.exp(log_v), hist, m, c, scenario, alpha) - target.power

    log_v_lower = LOG_V_LOWER
    lower, upper = gap(log_v_lower), gap(LOG_V_UPPER)
    # 上限に近い目標では e^-14 でもまだ届かない
    while lower <= 0 and log_v_lower > LOG_V_FLOOR:
        log_v_lower = max(LOG_V_FLOOR, log_v_lower + LOG_V_LOWER)
        lower = gap(log_v_lower)
    if not (lower > 0 > upper):
        logger.error(f"V_XC の探索区間で符号が変わりません: {m.name} ({lower:.3g}, {upper:.3g})")
        raise NumericalFailure(f"{m.name}: V_XC の求根区間を確保できません")
    if log_v_lower < LOG_V_LOWER:
        logger.info(f"V_XC の探索区間を広げました: {m.name} log V_XC >= {log_v_lower:g}")
    log_v = bisect(gap, log_v_lower, LOG_V_UPPER, xtol=_XTOL, maxiter=_MAXITER)
    v_xc = math.exp(log_v)
    logger.debug(f"V_XC を求解しました: {m.name} -> {v_xc:.6g}")
    return v_xc


def events_from_variance(
    v_xc: float, model: TrialModel, pe_exp: float, pe_ctr: float
) -> Tuple[int, int, int]:
    """V_XC = 1/d_X + 1/d_C から必要イベント数 (合計, 実薬群, 対照群) を求める

    群間の配分は割付比 × 各群のイベント確率に比例させ、各群を最も近い整数に丸める。
    """
    if not (math.isfinite(v_xc) and v_xc > 0):
        raise InvalidInputError(f"V_XC は正の有限値である必要があります: {v_xc}")
    p_exp, p_ctr = _arm_probabilities(model, pe_exp, pe_ctr)
    ratio = model.allocation_ratio
    n_ctr = (1.0 / (ratio * p_exp) + 1.0 / p_ctr) / v_xc
    d_exp = max(1, _round_half_up(ratio * n_ctr * p_exp))
    d_ctr = max(1, _round_half_up(n_ctr * p_ctr))
    return d_exp + d_ctr, d_exp, d_ctr


def sample_size_from_events(
    events: Tuple[int, int, int], model: TrialModel, pe_exp: float, pe_ctr: float
) -> Tuple[int, int, int]:
    """必要イベント数を両群で確保する症例数 (合計, 実薬群, 対照群)"""
    _, d_exp, d_ctr = events
    if d_exp <= 0 or d_ctr <= 0:
        raise InvalidInputError(f"イベント数は正である必要があります: {events}")
    p_exp, p_ctr = _arm_probabilities(model, pe_exp, pe_ctr)
    ratio = model.allocation_ratio
    per_ctr = max(d_exp / (ratio * p_exp), d_ctr / p_ctr)
    n_ctr = _round_half_up(per_ctr)
    n_exp = _round_half_up(ratio * per_ctr)
    return n_exp + n_ctr, n_exp, n_ctr


def _design_row(
    m: MethodSpec,
    c: SuccessCriterion,
    target: DesignTarget,
    hist: HistoricalEvidence,
    model: TrialModel,
    scenario: TruthScenario,
    sens_lambda0: Optional[float],
) -> DesignResult:
    solve_lambda0 = solving_scenario(target, hist, scenario).lambda0
    pe_exp = loghr_to_pe(scenario.gamma_xp)
    pe_ctr = loghr_to_pe((1.0 + solve_lambda0) * hist.gamma_hat)
    try:
        v_xc = solve_v_xc(target, hist, m, c, scenario)
        events = events_from_variance(v_xc, model, pe_exp, pe_ctr)
        n_total, n_exp, n_ctr = sample_size_from_events(events, model, pe_exp, pe_ctr)
    except DesignInfeasibleError as exc:
        logger.warning(f"実行不能なデザイン: {exc}")
        return DesignResult(
            method_name=m.name,
            criterion=c.label,
            feasible=False,
            infeasible_reason=str(exc),
            infeasible_bound=exc.bound,
        )
    except NumericalFailure as exc:
        logger.error(f"数値計算に失敗したため行を実行不能として記録します: {exc}")
        return DesignResult(
            method_name=m.name,
            criterion=c.label,
            feasible=False,
            infeasible_reason=str(exc),
            infeasible_bound="numerical_failure",
        )

    margin = framework.success_margin(v_xc, hist, m, c, target.alpha)
    l0min = framework.lambda0_min(v_xc, hist, m, c, target.alpha)
    up_sens = None
    if sens_lambda0 is not None:
        sens = scenario.model_copy(update={"lambda0": sens_lambda0})
        up_sens = framework.unconditional_power(v_xc, hist, m, c, sens, target.alpha)
    return DesignResult(
        method_name=m.name,
        criterion=c.label,
        v_xc_solved=v_xc,
        margin_log=margin,
        margin_hr=math.exp(margin),
        rne_total=events[0],
        rne_exp=events[1],
        rne_ctr=events[2],
        n_total=n_total,
        n_exp=n_exp,
        n_ctr=n_ctr,
        lambda0_min=l0min,
        cnc_pe=framework.controlled_non_constancy_pe(l0min, hist),
        up0=framework.unconditional_power(v_xc, hist, m, c, scenario, target.alpha),
        up_sens=up_sens,
    )


def build_design_table(
    methods: Sequence[MethodSpec],
    c: SuccessCriterion,
    target: DesignTarget,
    hist: HistoricalEvidence,
    model: TrialModel,
    design_pe: float,
    sens_lambda0: Optional[float] = None,
    design_lambda0: float = 0.0,
    workers: int = 1,
) -> List[DesignResult]:
    """手法ごとに 求解 → イベント数 → 症例数 → マージン → λ₀,min → 無条件検出力 を実行する

    実行不能な手法は行に記録し、表全体は中断しない。行の順序は入力どおり。
    """
    if hist.gamma_hat >= 0:
        raise PreconditionError("デザインには有効な実対照薬 (γ̂_CP,H < 0) が必要です")
    scenario = TruthScenario(lambda0=design_lambda0, gamma_xp=pe_to_loghr(design_pe))

    def run(m: MethodSpec) -> DesignResult:
        return _design_row(m, c, target, hist, model, scenario, sens_lambda0)

    if workers > 1 and len(methods) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(run, methods))
    return [run(m) for m in methods]


def _specifications(
    target: DesignTarget, hist: HistoricalEvidence, sens_lambda0: Optional[float]
) -> List[str]:
    power = f"{round(target.power * 100, 1):g}%"
    if target.approach is DesignApproach.NOVEL_UNCONDITIONAL:
        approach = f"Design approach targeting {power} unconditional power"
    elif target.approach is DesignApproach.AD_HOC_CONDITIONAL:
        assumed = loghr_to_pe((1.0 + ad_hoc_lambda0(target, hist)) * hist.gamma_hat)
        approach = (
            f"Design approach targeting {power} conditional power assuming an active "
            f"control efficacy of {round(assumed * 100, 1):g}%"
        )
    else:
        approach = f"Design approach targeting {power} conditional power"
    specs = [f"Approach : {approach}"]
    if sens_lambda0 is not None:
        sens_pe = loghr_to_pe((1.0 + sens_lambda0) * hist.gamma_hat)
        specs.append(
            "Sensitivity analysis : Sensitivity analysis (SA) assumes an active control "
            f"efficacy of {round(sens_pe * 100, 1):g}%"
        )
    return specs


def design_trial(
    methods: Sequence[MethodSpec],
    criteria: Sequence[SuccessCriterion],
    target: DesignTarget,
    hist: HistoricalEvidence,
    model: TrialModel,
    design_pe: float,
    sens_lambda0: Optional[float] = None,
    design_lambda0: float = 0.0,
    workers: int = 1,
) -> DesignReport:
    """基準ごとのデザイン表と仕様ブロックをまとめる。基準どうしの数値は比較しない"""
    tables = [
        CriterionTable(
            criterion=c.label,
            rows=build_design_table(
                methods, c, target, hist, model, design_pe, sens_lambda0, design_lambda0, workers
            ),
        )
        for c in criteria
    ]
    return DesignReport(specifications=_specifications(target, hist, sens_lambda0), tables=tables)


def max_power_curve(
    methods: Sequence[MethodSpec],
    criteria: Sequence[SuccessCriterion],
    hist: HistoricalEvidence,
    pe_grid: Sequence[float],
    s_lambda0: float,
    alpha: float,
) -> pd.DataFrame:
    """PE グリッド上の最大無条件検出力（描画用データ）"""
    grid = np.asarray(pe_grid, dtype=float)
    if grid.size == 0:
        raise InvalidInputError("PE グリッドが空です")
    if np.any(grid >= 1.0):
        raise InvalidInputError("PE グリッドの値は 1 未満である必要があります")
    records = []
    for pe in grid:
        scenario = TruthScenario(lambda0=s_lambda0, gamma_xp=pe_to_loghr(float(pe)))
        for c in criteria:
            for m in methods:
                records.append(
                    {
                        "pe": float(pe),
                        "method": m.name,
                        "criterion": c.label,
                        "max_up": framework.max_unconditional_power(hist, m, c, scenario, alpha),
                    }
                )
    return pd.DataFrame.from_records(records, columns=["pe", "method", "criterion", "max_up"])
