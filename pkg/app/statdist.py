"""標準正規分布のプリミティブ

累積分布関数と分位点関数のみを提供する。他のモジュールはすべてここを経由する。
"""

import math

from scipy.special import ndtr, ndtri

from app.exceptions import DomainError, InvalidInputError

# 分位点入力の内部クランプ範囲。設計計算でこれより外側が必要になることはない。
_QUANTILE_FLOOR = 1e-300
_QUANTILE_CEIL = 1.0 - 1e-16


def norm_cdf(x: float) -> float:
    """Φ(x) を返す"""
    if not math.isfinite(x):
        raise InvalidInputError(f"norm_cdf には有限値が必要です: {x!r}")
    return float(ndtr(x))


def norm_quantile(p: float) -> float:
    """Φ⁻¹(p) を返す（0 < p < 1）"""
    if not math.isfinite(p) or p <= 0.0 or p >= 1.0:
        raise DomainError(f"norm_quantile の引数は開区間 (0, 1) に限られます: {p!r}")
    p = min(max(p, _QUANTILE_FLOOR), _QUANTILE_CEIL)
    return float(ndtri(p))


def z_upper(alpha: float) -> float:
    """片側上側分位点 Z_{1−α}"""
    return norm_quantile(1.0 - alpha)
