import math

import numpy as np
import pytest

from app.exceptions import DomainError, InvalidInputError
from app.scales import loghr_to_pe, pe_to_loghr
from app.statdist import norm_cdf, norm_quantile, z_upper


class TestNormalDistribution:
    """標準正規分布のプリミティブ"""

    @pytest.mark.parametrize(
        "x, expected",
        [(1.959964, 0.975), (-1.281552, 0.10), (0.0, 0.5)],
    )
    def test_cdf_known_values(self, x, expected):
        """既知の累積確率"""
        assert norm_cdf(x) == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("p, expected", [(0.975, 1.959964), (0.9, 1.281552), (0.5, 0.0)])
    def test_quantile_known_values(self, p, expected):
        """既知の分位点"""
        assert norm_quantile(p) == pytest.approx(expected, abs=1e-6)

    def test_cdf_symmetry(self):
        """Φ(x) + Φ(−x) = 1"""
        for x in np.linspace(-8.0, 8.0, 161):
            assert abs(norm_cdf(float(x)) + norm_cdf(float(-x)) - 1.0) <= 1e-14

    def test_quantile_inverts_cdf(self):
        """Φ⁻¹(Φ(x)) = x"""
        for x in np.linspace(-6.0, 5.0, 45):
            assert norm_quantile(norm_cdf(float(x))) == pytest.approx(float(x), abs=1e-8)

    def test_z_upper(self):
        """片側上側分位点"""
        assert z_upper(0.025) == pytest.approx(1.959964, abs=1e-6)
        assert z_upper(0.1) == pytest.approx(1.281552, abs=1e-6)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
    def test_quantile_domain(self, p):
        """開区間 (0, 1) の外は定義域エラー"""
        with pytest.raises(DomainError):
            norm_quantile(p)

    @pytest.mark.parametrize("x", [math.inf, -math.inf, math.nan])
    def test_cdf_rejects_non_finite(self, x):
        """有限でない入力"""
        with pytest.raises(InvalidInputError):
            norm_cdf(x)


class TestScales:
    """PE と対数ハザード比の変換"""

    def test_pe_to_loghr_examples(self):
        """92.8% と 30% の変換"""
        assert pe_to_loghr(0.928) == pytest.approx(-2.6311, abs=1e-4)
        assert pe_to_loghr(0.30) == pytest.approx(-0.3567, abs=1e-4)
        assert pe_to_loghr(0.0) == 0.0

    def test_loghr_to_pe_examples(self):
        """逆変換"""
        assert loghr_to_pe(-2.6311) == pytest.approx(0.928, abs=1e-4)
        assert loghr_to_pe(math.log(0.053)) == pytest.approx(0.947, abs=1e-3)

    def test_round_trip(self):
        """PE → log HR → PE が元に戻る"""
        for pe in np.linspace(-5.0, 0.999999, 400):
            assert loghr_to_pe(pe_to_loghr(float(pe))) == pytest.approx(float(pe), abs=1e-12)

    @pytest.mark.parametrize("pe", [1.0, 1.2])
    def test_pe_at_or_above_one(self, pe):
        """PE ≥ 1 は有限の対数ハザード比を持たない"""
        with pytest.raises(DomainError):
            pe_to_loghr(pe)

    def test_non_finite(self):
        """有限でない入力"""
        with pytest.raises(InvalidInputError):
            pe_to_loghr(math.nan)
        with pytest.raises(InvalidInputError):
            loghr_to_pe(math.inf)
