"""予防効果 (PE) 尺度と対数ハザード比尺度の変換

負の効果が有益であることを表す。計算は対数ハザード比尺度で行い、PE は入出力の境界にだけ現れる。
"""

import math

import numpy as np

from app.exceptions import DomainError, InvalidInputError


def pe_to_loghr(pe: float) -> float:
    """PE を対数ハザード比 log(1 − pe) に変換する"""
    if not math.isfinite(pe):
        raise InvalidInputError(f"PE が有限値ではありません: {pe!r}")
    if pe >= 1.0:
        raise DomainError(f"PE = {pe} は有限の対数ハザード比を持ちません")
    return float(np.log1p(-pe))


def loghr_to_pe(g: float) -> float:
    """対数ハザード比を PE = 1 − exp(g) に変換する"""
    if not math.isfinite(g):
        raise InvalidInputError(f"対数ハザード比が有限値ではありません: {g!r}")
    return float(-np.expm1(g))
