"""閉形式の動作特性をモンテカルロで検証する

推定量レベル（正規近似の推定値を直接生成）と試験レベル（個々のイベント時間を生成）の 2 段階。
乱数は (master_seed, ブロック番号) から作る Philox ストリームで、並列度に関係なく結果は同一になる。
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import quad
from scipy.special import ndtr
from scipy.stats import binom

from app import framework
from app.exceptions import InvalidInputError
from app.models import (
    FollowupModel,
    HistoricalEvidence,
    MethodSpec,
    SuccessCriterion,
    TrialModel,
    TruthScenario,
)
from app.design_engine import event_probability
from app.presets import fixed_margin_lambda1
from app.statdist import z_upper

logger = logging.getLogger(__name__)

# ブロックあたりの反復数。結果の再現性はこの値に依存するので並列度とは独立に固定する。
ESTIMATE_BLOCK_SIZE = 65536
TRIAL_BLOCK_SIZE = 64

# 離散参照値で足し上げるイベント数の範囲
_TAIL = 1e-12
_MAX_COUNT_GRID = 4_000_000


class McLevel(str, Enum):
    ESTIMATE_LEVEL = "estimate"
    TRIAL_LEVEL = "trial"


class McConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    replications: int = Field(ge=1)
    master_seed: int = Field(ge=0, lt=2 ** 64)
    level: McLevel = McLevel.ESTIMATE_LEVEL
    workers: int = Field(default=1, ge=1)
    block_size: Optional[int] = Field(default=None, ge=1)

    @property
    def effective_block_size(self) -> int:
        if self.block_size is not None:
            return self.block_size
        if self.level is McLevel.TRIAL_LEVEL:
            return TRIAL_BLOCK_SIZE
        return ESTIMATE_BLOCK_SIZE


class McResult(BaseModel):
    rejection_rate: float = Field(ge=0, le=1)
    mc_stderr: float = Field(ge=0)
    replications: int
    closed_form_reference: Optional[float] = None
    # 試験レベルのみ。イベント数の離散性を織り込んだ棄却確率
    small_count_reference: Optional[float] = None
    degenerate_replicates: int = 0
    level: McLevel = McLevel.ESTIMATE_LEVEL

    def within(self, k: float) -> bool:
        """閉形式との差が k·mc_stderr 以内か"""
        if self.closed_form_reference is None:
            return False
        return abs(self.rejection_rate - self.closed_form_reference) <= k * self.mc_stderr


def block_generator(master_seed: int, block: int) -> np.random.Generator:
    """ブロック番号ごとの独立ストリーム"""
    seq = np.random.SeedSequence(master_seed, spawn_key=(block,))
    return np.random.Generator(np.random.Philox(seq))


BlockFn = Callable[[np.random.Generator, int], Tuple[int, int]]


def _run_blocks(cfg: McConfig, block_fn: BlockFn) -> Tuple[int, int]:
    size = cfg.effective_block_size
    n_blocks = -(-cfg.replications // size)

    def run(block: int) -> Tuple[int, int]:
        n = min(size, cfg.replications - block * size)
        return block_fn(block_generator(cfg.master_seed, block), n)

    if cfg.workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            results = list(executor.map(run, range(n_blocks)))
    else:
        results = [run(b) for b in range(n_blocks)]
    rejections = sum(r for r, _ in results)
    degenerate = sum(d for _, d in results)
    return rejections, degenerate


def _recompute_margin(m: MethodSpec) -> bool:
    return m.is_fixed_margin and m.theta is not None


def _statistic_terms(m: MethodSpec, c: SuccessCriterion, hist_se: float) -> Tuple[float, float, float]:
    """T = (γ̂_XC + a·γ̂_CP,H + b − Δ₀) / √(V_XC + v) の (a, b, v)

    固定マージン法では各反復の γ̂_CP,H から λ₁ を作り直すので (1+λ₁)γ̂ = γ̂ + Z_{1−θ}·se。
    """
    keep = 1.0 - c.f
    if _recompute_margin(m):
        z_theta = 0.0 if m.theta == 0.5 else z_upper(m.theta)
        return keep, keep * z_theta * hist_se, 0.0
    weight = keep * (1.0 + m.lambda1)
    return weight, 0.0, (m.u * weight * hist_se) ** 2


def _reject_vectorized(
    gamma_xc: np.ndarray,
    v_xc: np.ndarray,
    gamma_cp: np.ndarray,
    hist_se: float,
    m: MethodSpec,
    c: SuccessCriterion,
    alpha: float,
) -> np.ndarray:
    """test_statistic と reject を配列に適用する"""
    slope, shift, extra = _statistic_terms(m, c, hist_se)
    statistic = (gamma_xc + slope * gamma_cp + shift - c.delta0) / np.sqrt(v_xc + extra)
    return statistic < -z_upper(alpha)


def _reference_method(m: MethodSpec, hist_true: HistoricalEvidence) -> MethodSpec:
    if not _recompute_margin(m):
        return m
    return m.model_copy(update={"lambda1": fixed_margin_lambda1(m.theta, hist_true)})


def _summarize(
    cfg: McConfig,
    rejections: int,
    degenerate: int,
    reference: Optional[float],
    small_count: Optional[float] = None,
) -> McResult:
    rate = rejections / cfg.replications
    return McResult(
        rejection_rate=rate,
        mc_stderr=math.sqrt(rate * (1.0 - rate) / cfg.replications),
        replications=cfg.replications,
        closed_form_reference=reference,
        small_count_reference=small_count,
        degenerate_replicates=degenerate,
        level=cfg.level,
    )


def simulate_estimate_level(
    cfg: McConfig,
    truth: TruthScenario,
    true_gamma_cph: float,
    v_xc: float,
    hist_se: float,
    m: MethodSpec,
    c: SuccessCriterion,
    alpha: float,
) -> McResult:
    """γ̂_CP,H ~ N(γ_CP,H, se²)、γ̂_XC ~ N(γ_XP − (1+λ₀)γ_CP,H, V_XC) を独立に生成して棄却率を数える"""
    if not (math.isfinite(v_xc) and v_xc > 0):
        raise InvalidInputError(f"V_XC は正の有限値である必要があります: {v_xc}")
    if not hist_se > 0:
        raise InvalidInputError(f"履歴推定値の標準誤差は正である必要があります: {hist_se}")
    mean_xc = truth.gamma_xp - (1.0 + truth.lambda0) * true_gamma_cph
    sd_xc = math.sqrt(v_xc)

    def block(rng: np.random.Generator, n: int) -> Tuple[int, int]:
        gamma_cp = rng.normal(true_gamma_cph, hist_se, n)
        gamma_xc = rng.normal(mean_xc, sd_xc, n)
        hits = _reject_vectorized(gamma_xc, np.full(n, v_xc), gamma_cp, hist_se, m, c, alpha)
        return int(hits.sum()), 0

    rejections, degenerate = _run_blocks(cfg, block)
    hist_true = HistoricalEvidence(gamma_hat=true_gamma_cph, se=hist_se)
    reference = framework.unconditional_power(
        v_xc, hist_true, _reference_method(m, hist_true), c, truth, alpha
    )
    result = _summarize(cfg, rejections, degenerate, reference)
    logger.info(
        f"推定量レベルのシミュレーション完了: {m.name} R={cfg.replications} "
        f"rate={result.rejection_rate:.5f} ref={reference:.5f}"
    )
    return result


def _arm_draws(
    rng: np.random.Generator, n_rep: int, n_arm: int, rate: float, model: TrialModel
) -> Tuple[np.ndarray, np.ndarray]:
    """1 群分のイベント数と観察人年を反復ごとに返す"""
    shape = (n_rep, n_arm)
    if rate > 0:
        event = rng.exponential(1.0 / rate, shape)
    else:
        event = np.full(shape, np.inf)
    loss_rate = model.ltfu_annual
    if loss_rate <= 0:
        loss = np.full(shape, np.inf)
    elif model.followup_model is FollowupModel.LINEAR_LOSS:
        loss = rng.uniform(0.0, 1.0 / loss_rate, shape)
    else:
        loss = rng.exponential(-1.0 / math.log1p(-loss_rate), shape)
    censor = np.minimum(loss, model.duration_years)
    observed = event <= censor
    time = np.where(observed, event, censor)
    return observed.sum(axis=1), time.sum(axis=1)


def _still_followed(t: float, model: TrialModel) -> float:
    """時点 t でまだ脱落していない確率"""
    loss_rate = model.ltfu_annual
    if loss_rate <= 0:
        return 1.0
    if model.followup_model is FollowupModel.LINEAR_LOSS:
        return max(0.0, 1.0 - loss_rate * t)
    return math.exp(math.log1p(-loss_rate) * t)


def expected_time_at_risk(rate: float, model: TrialModel) -> float:
    """_arm_draws と同じ打ち切り機構での 1 人あたり期待観察年数 ∫ e^{−ht}·S_loss(t) dt

    観察されたイベントの確率はハザード × この値になる。
    """
    horizon = model.duration_years
    if model.ltfu_annual > 0 and model.followup_model is FollowupModel.LINEAR_LOSS:
        horizon = min(horizon, 1.0 / model.ltfu_annual)
    value, _ = quad(lambda t: math.exp(-rate * t) * _still_followed(t, model), 0.0, horizon)
    return value


def small_count_reference(
    model: TrialModel,
    n_exp: int,
    n_ctr: int,
    truth: TruthScenario,
    true_gamma_cph: float,
    hist_se: float,
    m: MethodSpec,
    c: SuccessCriterion,
    alpha: float,
) -> Optional[float]:
    """試験レベルの検定の棄却確率をイベント数の二項分布で厳密に足し上げる

    各群のイベント数 (d_X, d_C) ごとに γ̂_XC = log(d_X/d_C) + log(PT_C/PT_X)、V̂ = 1/d_X + 1/d_C とし、
    γ̂_CP,H については正規分布で積分する。人年は期待値で置き換え、イベント 0 の組は非棄却。
    """
    rate_exp = model.placebo_incidence * math.exp(truth.gamma_xp)
    rate_ctr = model.placebo_incidence * math.exp((1.0 + truth.lambda0) * true_gamma_cph)
    tau_exp = expected_time_at_risk(rate_exp, model)
    tau_ctr = expected_time_at_risk(rate_ctr, model)
    p_exp = min(1.0, rate_exp * tau_exp)
    p_ctr = min(1.0, rate_ctr * tau_ctr)
    if p_exp <= 0 or p_ctr <= 0:
        return None

    def support(n: int, p: float) -> Tuple[np.ndarray, np.ndarray]:
        low = max(1, int(binom.ppf(_TAIL, n, p)))
        high = min(n, int(binom.ppf(1.0 - _TAIL, n, p)) + 1)
        k = np.arange(low, high + 1)
        return k, binom.pmf(k, n, p)

    k_exp, w_exp = support(n_exp, p_exp)
    k_ctr, w_ctr = support(n_ctr, p_ctr)
    if k_exp.size * k_ctr.size > _MAX_COUNT_GRID:
        logger.debug(f"イベント数が多いため離散参照値を省略します: {m.name}")
        return None
    d_exp = k_exp[:, None].astype(float)
    d_ctr = k_ctr[None, :].astype(float)
    offset = math.log((n_ctr * tau_ctr) / (n_exp * tau_exp))
    gamma_xc = np.log(d_exp / d_ctr) + offset
    v_xc = 1.0 / d_exp + 1.0 / d_ctr

    slope, shift, extra = _statistic_terms(m, c, hist_se)
    threshold = -z_upper(alpha) * np.sqrt(v_xc + extra) - gamma_xc - shift + c.delta0
    conditional = ndtr((threshold - slope * true_gamma_cph) / (slope * hist_se))
    return float(w_exp @ conditional @ w_ctr)


def simulate_trial_level(
    cfg: McConfig,
    model: TrialModel,
    n_exp: int,
    n_ctr: int,
    truth: TruthScenario,
    true_gamma_cph: float,
    hist_se: float,
    m: MethodSpec,
    c: SuccessCriterion,
    alpha: float,
) -> McResult:
    """個々のイベント時間から log HR を人年推定して検定する

    どちらかの群でイベントが 0 の反復は非棄却とし、degenerate_replicates に数える。
    """
    if n_exp < 1 or n_ctr < 1:
        raise InvalidInputError(f"各群の症例数は 1 以上である必要があります: {n_exp}, {n_ctr}")
    if not hist_se > 0:
        raise InvalidInputError(f"履歴推定値の標準誤差は正である必要があります: {hist_se}")
    rate_exp = model.placebo_incidence * math.exp(truth.gamma_xp)
    rate_ctr = model.placebo_incidence * math.exp((1.0 + truth.lambda0) * true_gamma_cph)

    def block(rng: np.random.Generator, n: int) -> Tuple[int, int]:
        gamma_cp = rng.normal(true_gamma_cph, hist_se, n)
        d_exp, pt_exp = _arm_draws(rng, n, n_exp, rate_exp, model)
        d_ctr, pt_ctr = _arm_draws(rng, n, n_ctr, rate_ctr, model)
        valid = (d_exp > 0) & (d_ctr > 0)
        safe_exp = np.maximum(d_exp, 1)
        safe_ctr = np.maximum(d_ctr, 1)
        gamma_xc = np.log((safe_exp / pt_exp) / (safe_ctr / pt_ctr))
        v_xc = 1.0 / safe_exp + 1.0 / safe_ctr
        hits = _reject_vectorized(gamma_xc, v_xc, gamma_cp, hist_se, m, c, alpha) & valid
        return int(hits.sum()), int((~valid).sum())

    rejections, degenerate = _run_blocks(cfg, block)

    reference = None
    expected_exp = n_exp * event_probability(rate_exp, model)
    expected_ctr = n_ctr * event_probability(rate_ctr, model)
    if expected_exp > 0 and expected_ctr > 0:
        hist_true = HistoricalEvidence(gamma_hat=true_gamma_cph, se=hist_se)
        reference = framework.unconditional_power(
            1.0 / expected_exp + 1.0 / expected_ctr,
            hist_true,
            _reference_method(m, hist_true),
            c,
            truth,
            alpha,
        )
    small_count = small_count_reference(
        model, n_exp, n_ctr, truth, true_gamma_cph, hist_se, m, c, alpha
    )
    result = _summarize(cfg, rejections, degenerate, reference, small_count)
    if degenerate:
        logger.warning(f"イベント 0 の反復が {degenerate} 件ありました: {m.name}")
    logger.info(
        f"試験レベルのシミュレーション完了: {m.name} R={cfg.replications} "
        f"rate={result.rejection_rate:.5f} small_count={small_count}"
    )
    return result
