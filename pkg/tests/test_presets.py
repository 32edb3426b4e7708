import math

import pytest

from app.exceptions import DomainError, InvalidInputError
from app.models import MarginVarianceRule, MethodSpec
from app.presets import (
    PresetId,
    PresetVariant,
    fixed_margin_lambda1,
    identify_method,
    make_bias_adjusted_synthesis,
    make_custom,
    make_fixed_margin,
    make_odem_davis,
    make_traditional_synthesis,
    parse_method,
    preset_catalog,
)


class TestPresetConstructors:
    """プリセット手法の構築"""

    def test_catalog_order_and_names(self, hist):
        """表の 5 手法が表示名つきで並ぶ"""
        assert list(preset_catalog(hist)) == [
            "Traditional SM",
            "BA-SM, lm1=-23%",
            "OD, lm1=-23%",
            "95-95 method",
            "0-95 method",
        ]

    def test_traditional(self):
        """(u, λ₁) = (1, 0)"""
        m = make_traditional_synthesis()
        assert (m.u, m.lambda1) == (1.0, 0.0)
        assert m.margin_variance_rule is MarginVarianceRule.RANDOM_MARGIN

    def test_bias_adjusted_zero_is_traditional(self):
        """λ₁ = 0 のバイアス調整は伝統的統合法"""
        assert make_bias_adjusted_synthesis(0.0) == make_traditional_synthesis()

    def test_bias_adjusted_range(self):
        """λ₁ は (−1, 0]"""
        with pytest.raises(DomainError):
            make_bias_adjusted_synthesis(-1.0)
        with pytest.raises(InvalidInputError):
            make_bias_adjusted_synthesis(0.1)

    def test_odem_davis(self):
        """u = 1/(1+λ₁)、λ₁ = 0 は意味を持たない"""
        m = make_odem_davis(-0.23)
        assert m.u == pytest.approx(1 / 0.77)
        assert m.lambda1 == -0.23
        with pytest.raises(InvalidInputError):
            make_odem_davis(0.0)

    def test_fixed_margin_lambda1(self, hist):
        """95-95 法の λ₁ = Z_{0.975}·se / γ̂、0-95 法は 0"""
        assert fixed_margin_lambda1(0.025, hist) == pytest.approx(1.959964 * 0.61 / math.log(0.072), rel=1e-6)
        assert fixed_margin_lambda1(0.5, hist) == 0.0

    def test_fixed_margin_names(self, hist):
        """θ による名前付け"""
        assert make_fixed_margin(0.025, hist).name == "95-95 method"
        assert make_fixed_margin(0.5, hist).name == "0-95 method"
        other = make_fixed_margin(0.1, hist)
        assert other.name == "Fixed margin, theta=0.1"
        assert other.theta == 0.1
        assert other.is_fixed_margin

    @pytest.mark.parametrize("theta", [0.0, 0.6, -0.1])
    def test_fixed_margin_theta_range(self, hist, theta):
        """θ は (0, 0.5]"""
        with pytest.raises(InvalidInputError):
            make_fixed_margin(theta, hist)

    def test_rule_follows_u(self):
        """u = 0 なら固定マージン、それ以外はランダムマージン"""
        assert make_custom(0.0, -0.1).margin_variance_rule is MarginVarianceRule.FIXED_MARGIN
        assert make_custom(0.5, -0.1).margin_variance_rule is MarginVarianceRule.RANDOM_MARGIN
        with pytest.raises(ValueError):
            MethodSpec(u=0.0, lambda1=0.0, name="x", margin_variance_rule=MarginVarianceRule.RANDOM_MARGIN)

    def test_preset_id_build(self, hist):
        """識別子から MethodSpec を作る"""
        assert PresetId(variant=PresetVariant.ODEM_DAVIS, lambda1=-0.23).build().name == "OD, lm1=-23%"
        assert PresetId(variant=PresetVariant.FIXED_MARGIN, theta=0.5).build(hist).name == "0-95 method"
        with pytest.raises(InvalidInputError):
            PresetId(variant=PresetVariant.FIXED_MARGIN, theta=0.5).build()
        with pytest.raises(InvalidInputError):
            PresetId(variant=PresetVariant.BIAS_ADJUSTED_SYNTHESIS).build()


class TestMethodRecognition:
    """生の (u, λ₁) と文字列指定の解釈"""

    def test_identify_named_points(self, hist):
        """利用例の (u, λ₁) がプリセット名で認識される"""
        assert identify_method(1, 0, hist).name == "Traditional SM"
        assert identify_method(1, -0.23, hist).name == "BA-SM, lm1=-23%"
        assert identify_method(1 / (1 - 0.23), -0.23, hist).name == "OD, lm1=-23%"
        assert identify_method(0, 0, hist).name == "0-95 method"
        ninety_five = identify_method(0, 1.96 * 0.61 / math.log(0.072), hist)
        assert ninety_five.name == "95-95 method"
        assert ninety_five.theta == pytest.approx(0.025, abs=1e-4)
        assert ninety_five.lambda1 == 1.96 * 0.61 / math.log(0.072)

    def test_identify_custom(self, hist):
        """どのプリセットにも当たらない点は任意点"""
        m = identify_method(0.7, -0.1, hist)
        assert m.name == "u=0.7, lm1=-10%"
        assert identify_method(0.7, -0.1, hist, name="mine").name == "mine"

    def test_identify_keeps_given_name(self, hist):
        """名前が与えられればプリセットでもその名前を使う"""
        assert identify_method(1, 0, hist, name="SM").name == "SM"

    @pytest.mark.parametrize(
        "text, expected",
        [
            ("traditional-sm", "Traditional SM"),
            ("BA-SM:-0.23", "BA-SM, lm1=-23%"),
            ("od:-0.23", "OD, lm1=-23%"),
            ("95-95", "95-95 method"),
            ("0-95", "0-95 method"),
            ("fixed-margin:0.1", "Fixed margin, theta=0.1"),
            ("custom:0.7,-0.1", "u=0.7, lm1=-10%"),
        ],
    )
    def test_parse_strings(self, hist, text, expected):
        """文字列指定"""
        assert parse_method(text, hist).name == expected

    def test_parse_mapping(self, hist):
        """辞書指定"""
        m = parse_method({"u": 1, "lambda1": -0.23, "name": "BA"}, hist)
        assert (m.u, m.lambda1, m.name) == (1.0, -0.23, "BA")

    @pytest.mark.parametrize("entry", ["bogus", "od:abc", "custom:1", {"u": 1}, "od:0"])
    def test_parse_errors(self, hist, entry):
        """解釈できない指定は入力エラー"""
        with pytest.raises(InvalidInputError):
            parse_method(entry, hist)
