import io
import json
import math

import pandas as pd
import pytest

from app import cli, settings
from app.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from app.config import (
    DesignConfig,
    PowerCurveConfig,
    SimulateConfig,
    dump_config,
    load_config,
    parse_config,
)
from app.exceptions import ConfigError, NumericalFailure
from app.mc_harness import McLevel, McResult
from app.report import kable_table

HEADER = [
    "Method", "NI margin", "RNE", "Exp", "Ctr", "Sample size",
    "Exp.arm", "Ctr.arm", "CNC", "U.power", "U.power (SA)",
]

# 利用例の出力（条件付き検出力 90% を目標、感度分析は λ₀ = 0.12）
VIGNETTE = {
    "Preserving 50% of the active control effect": [
        ("Traditional SM", 3.12, 19, 8, 11, 5766, 2883, 2883, 0.928, 0.86, 0.69),
        ("BA-SM, lm1=-23%", 2.42, 27, 11, 16, 8008, 4004, 4004, 0.868, 0.86, 0.65),
        ("OD, lm1=-23%", 2.21, 32, 13, 19, 9510, 4755, 4755, 0.844, 0.86, 0.63),
        ("95-95 method", 2.05, 37, 15, 22, 11012, 5506, 5506, 0.850, 0.83, 0.60),
        ("0-95 method", 3.73, 15, 6, 9, 4504, 2252, 2252, 0.948, 0.87, 0.72),
    ],
    "Inferred efficacy of 30%": [
        ("Traditional SM", 6.13, 9, 4, 5, 2882, 1441, 1441, 0.928, 0.83, 0.73),
        ("BA-SM, lm1=-23%", 3.72, 15, 6, 9, 4504, 2252, 2252, 0.868, 0.83, 0.69),
        ("OD, lm1=-23%", 2.88, 22, 9, 13, 6506, 3253, 3253, 0.837, 0.81, 0.65),
        ("95-95 method", 2.94, 21, 9, 12, 6486, 3243, 3243, 0.870, 0.78, 0.63),
        ("0-95 method", 9.72, 7, 3, 4, 2162, 1081, 1081, 0.952, 0.85, 0.76),
    ],
}


@pytest.fixture
def write_config(tmp_path):
    def write(payload, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path
    return write


def _cells(line):
    return [c.strip() for c in line.strip().strip("|").split("|")]


def _tables(output):
    """テキスト出力を 基準ラベル → パイプ表の行（セル列）に分解する"""
    tables = {}
    current = None
    for line in output.splitlines():
        if line.startswith("--- NI criterion: "):
            current = line[len("--- NI criterion: "):-len(" ---")]
            tables[current] = []
        elif line.startswith("|") and current is not None:
            tables[current].append(_cells(line))
    return tables


class TestDesignCommand:
    """design サブコマンド"""

    def test_vignette_layout(self, write_config, vignette_config, capsys):
        """見出し・仕様ブロック・基準ごとの表が利用例どおりに並ぶ"""
        assert main(["design", "--config", str(write_config(vignette_config))]) == EXIT_OK
        out = capsys.readouterr().out
        lines = out.splitlines()
        assert lines[:5] == [
            "=== Summary of Non-Inferiority Trial Design ===",
            "",
            "Design Specifications:",
            " • Approach : Design approach targeting 90% conditional power",
            " • Sensitivity analysis : Sensitivity analysis (SA) assumes an active control efficacy of 94.7%",
        ]
        first = lines.index("--- NI criterion: Preserving 50% of the active control effect ---")
        assert lines[first - 1] == ""
        assert lines[first + 1:first + 3] == ["", ""]
        assert lines[first + 3].startswith("|")

    def test_vignette_values(self, write_config, vignette_config, capsys):
        """表の各セルが公表値と一致する（数値は表示桁の許容差つき）"""
        main(["design", "--config", str(write_config(vignette_config))])
        tables = _tables(capsys.readouterr().out)
        assert list(tables) == list(VIGNETTE)
        for label, expected_rows in VIGNETTE.items():
            header, rule, *body = tables[label]
            assert header == HEADER
            assert all(cell.startswith(":") and cell.endswith(":") for cell in rule)
            assert [row[0] for row in body] == [row[0] for row in expected_rows]
            for row, expected in zip(body, expected_rows):
                name, margin, rne, d_exp, d_ctr, n_total, n_exp, n_ctr, cnc, up0, up_sens = expected
                assert float(row[1]) == pytest.approx(margin, abs=0.015), (label, name)
                assert abs(int(row[2]) - rne) <= 2, (label, name)
                assert abs(int(row[3]) - d_exp) <= 1, (label, name)
                assert abs(int(row[4]) - d_ctr) <= 1, (label, name)
                assert int(row[5]) == int(row[6]) + int(row[7])
                assert int(row[6]) == pytest.approx(n_exp, rel=0.03), (label, name)
                assert float(row[8]) == pytest.approx(cnc, abs=0.0025), (label, name)
                assert float(row[9]) == pytest.approx(up0, abs=0.015), (label, name)
                assert float(row[10]) == pytest.approx(up_sens, abs=0.015), (label, name)

    def test_sensitivity_from_control_pe(self, write_config, vignette_config, capsys):
        """sens_analysis_pe = 0.947 では厳密な λ₀ ≈ 0.1164 で UPa を計算する（0.12 指定の 0.69 ではなく 0.70）"""
        del vignette_config["lambda0_sens_analysis"]
        vignette_config["sens_analysis_pe"] = 0.947
        main(["design", "--config", str(write_config(vignette_config)), "--format", "json"])
        report = json.loads(capsys.readouterr().out)
        assert report["specifications"][1].endswith("efficacy of 94.7%")
        first = report["tables"][0]["rows"][0]
        assert first["up_sens"] == pytest.approx(0.698, abs=2e-3)
        assert round(first["up_sens"], 2) == 0.70

    def test_traditional_row_exact(self, write_config, vignette_config, capsys):
        """伝統的統合法の行はイベント数・症例数・CNC が表示文字列まで一致する"""
        main(["design", "--config", str(write_config(vignette_config))])
        tables = _tables(capsys.readouterr().out)
        row = tables["Preserving 50% of the active control effect"][2]
        assert row[0] == "Traditional SM"
        assert row[2:9] == ["19", "8", "11", "5766", "2883", "2883", "0.928"]

    def test_json_format(self, write_config, vignette_config, capsys):
        """json は全精度の値を含むレポート"""
        main(["design", "--config", str(write_config(vignette_config)), "--format", "json"])
        report = json.loads(capsys.readouterr().out)
        first = report["tables"][0]["rows"][0]
        assert first["method_name"] == "Traditional SM"
        assert first["n_exp"] == 2883
        assert first["margin_hr"] == pytest.approx(3.12, abs=0.015)
        assert len(report["specifications"]) == 2

    def test_csv_format(self, write_config, vignette_config, capsys):
        """csv は全基準を縦に連結した全精度の表"""
        main(["design", "--config", str(write_config(vignette_config)), "--format", "csv"])
        df = pd.read_csv(io.StringIO(capsys.readouterr().out))
        assert len(df) == 10
        assert set(df["criterion"]) == set(VIGNETTE)
        assert df["feasible"].all()

    def test_markdown_format(self, write_config, vignette_config, capsys):
        main(["design", "--config", str(write_config(vignette_config)), "--format", "markdown"])
        out = capsys.readouterr().out
        assert out.startswith("# Summary of Non-Inferiority Trial Design")
        assert "## NI criterion: Inferred efficacy of 30%" in out

    def test_out_file(self, write_config, vignette_config, tmp_path, capsys):
        """--out 指定時はファイルに書き、標準出力は空"""
        target = tmp_path / "report.txt"
        code = main(["design", "--config", str(write_config(vignette_config)), "--out", str(target)])
        assert code == EXIT_OK
        assert capsys.readouterr().out == ""
        assert target.read_text(encoding="utf-8").startswith("=== Summary")

    def test_preset_strings(self, write_config, vignette_config, capsys):
        """文字列のプリセット指定でも同じ表になる"""
        main(["design", "--config", str(write_config(vignette_config))])
        by_pairs = capsys.readouterr().out
        vignette_config["methods"] = ["traditional-sm", "ba-sm:-0.23", "od:-0.23", "95-95", "0-95"]
        main(["design", "--config", str(write_config(vignette_config, "strings.json"))])
        by_strings = _tables(capsys.readouterr().out)
        for label, rows in _tables(by_pairs).items():
            assert [r[0] for r in by_strings[label]] == [r[0] for r in rows]
            # 95-95 法は λ₁ の Z 値の桁が異なるので伝統的統合法の行で比べる
            assert by_strings[label][2] == rows[2]


class TestExitCodes:
    """終了コード"""

    @pytest.mark.parametrize(
        "update",
        [{"methods": []}, {"correction": True}, {"methods": ["bogus"]}, {"power": 1.5}],
    )
    def test_invalid_config(self, write_config, vignette_config, update, capsys):
        """検証エラーは 2"""
        vignette_config.update(update)
        assert main(["design", "--config", str(write_config(vignette_config))]) == EXIT_CONFIG
        assert capsys.readouterr().err.startswith("error:")

    def test_missing_file(self, tmp_path):
        assert main(["design", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG

    def test_zero_replications(self, write_config, vignette_config):
        """--reps 0 は検証で拒否される"""
        path = write_config(vignette_config)
        assert main(["simulate", "--config", str(path), "--reps", "0"]) == EXIT_CONFIG

    def test_numerical_failure(self, write_config, vignette_config, monkeypatch, capsys):
        """求根の失敗は 3"""
        def boom(config):
            raise NumericalFailure("bracket")

        monkeypatch.setattr(cli, "run_design", boom)
        assert main(["design", "--config", str(write_config(vignette_config))]) == EXIT_NUMERICAL
        assert "bracket" in capsys.readouterr().err

    def test_infeasible_rows_still_succeed(self, write_config, vignette_config, capsys):
        """実行不能な行があっても表は出力され終了コードは 0"""
        vignette_config.update({"design_alternative_pe": 0.5, "null_pe": None})
        assert main(["design", "--config", str(write_config(vignette_config))]) == EXIT_OK
        assert "infeasible" in capsys.readouterr().out


class TestOtherCommands:
    """oc / power-curve / simulate"""

    def test_oc(self, write_config, vignette_config, capsys):
        vignette_config.update(
            {"methods": ["traditional-sm", "0-95"], "v_xc": 0.2143, "lambda0_grid": [0.0, 0.12]}
        )
        main(["oc", "--config", str(write_config(vignette_config)), "--format", "json"])
        rows = json.loads(capsys.readouterr().out)
        assert len(rows) == 8
        first = rows[0]
        assert (first["method_name"], first["lambda0"]) == ("Traditional SM", 0.0)
        assert first["unconditional_power"] == pytest.approx(0.857, abs=5e-3)

    def test_power_curve(self, write_config, vignette_config, capsys):
        """PE 0.95 では全手法が 0.9 に届き、0.90 では伝統的統合法は届かない"""
        vignette_config.update({"pe_grid": [0.9, 0.95], "null_pe": None})
        main(["power-curve", "--config", str(write_config(vignette_config)), "--format", "csv"])
        df = pd.read_csv(io.StringIO(capsys.readouterr().out))
        assert len(df) == 10
        assert (df.loc[df["pe"] == 0.95, "max_up"] >= 0.9).all()
        trad = df[(df["pe"] == 0.9) & (df["method"] == "Traditional SM")]
        assert trad["max_up"].iloc[0] < 0.9

    def test_simulate_is_deterministic(self, write_config, vignette_config, capsys):
        """同じ seed と反復数なら出力はバイト単位で同一"""
        vignette_config.update({"methods": ["traditional-sm", "95-95"], "null_pe": None})
        path = write_config(vignette_config)
        args = ["simulate", "--config", str(path), "--format", "csv", "--reps", "5000", "--seed", "7"]
        main(args)
        first = capsys.readouterr().out
        main(args)
        assert capsys.readouterr().out == first
        df = pd.read_csv(io.StringIO(first))
        assert list(df["replications"]) == [5000, 5000]
        assert set(df["verdict"]) <= {"PASS", "FAIL"}

    def test_simulate_text(self, write_config, vignette_config, capsys):
        vignette_config.update(
            {"methods": ["0-95"], "null_pe": None, "simulation": {"replications": 2000, "check": "type1"}}
        )
        main(["simulate", "--config", str(write_config(vignette_config))])
        out = capsys.readouterr().out
        assert out.startswith("=== Monte Carlo Verification ===")
        assert "type1" in out

    def test_verdict_threshold_by_level(self):
        """推定量レベルは 3σ、試験レベルは 4σ で判定する"""
        common = dict(rejection_rate=0.8535, mc_stderr=0.001, replications=100_000, closed_form_reference=0.85)
        assert cli.simulation_verdict(McResult(level=McLevel.ESTIMATE_LEVEL, **common)) == "FAIL"
        assert cli.simulation_verdict(McResult(level=McLevel.TRIAL_LEVEL, **common)) == "PASS"
        far = dict(common, rejection_rate=0.8545)
        assert cli.simulation_verdict(McResult(level=McLevel.TRIAL_LEVEL, **far)) == "FAIL"
        assert cli.simulation_verdict(McResult(rejection_rate=0.5, mc_stderr=0.01, replications=10)) == "FAIL"


class TestConfig:
    """設定文書の読込と検証"""

    def test_round_trip(self, vignette_config):
        """読込 → 書出し → 読込で同じ設定になる"""
        config = parse_config(vignette_config, DesignConfig)
        dumped = dump_config(config)
        assert parse_config(dumped, DesignConfig) == config
        assert parse_config(json.dumps(dumped), DesignConfig) == config
        assert dumped["followup_model"] == "linear_loss"

    def test_defaults_are_explicit(self):
        """省略した項目は既定値で補われる"""
        config = parse_config(
            {"methods": ["traditional-sm"], "design_alternative_pe": 0.95,
             "hist_ac_pe": 0.928, "hist_ac_effect_se": 0.61},
            DesignConfig,
        )
        dumped = dump_config(config)
        assert dumped["power"] == 0.9
        assert dumped["sign_level"] == 0.025
        assert dumped["target_on_unconditional_power"] is True
        assert len(config.criteria()) == 2

    def test_field_diagnostics(self, vignette_config):
        """フィールド単位の診断が付く"""
        vignette_config.update({"power": 1.5, "unknown": 1})
        with pytest.raises(ConfigError) as excinfo:
            parse_config(vignette_config, DesignConfig)
        diagnostics = excinfo.value.diagnostics
        assert any(d.startswith("power:") for d in diagnostics)
        assert any(d.startswith("unknown:") for d in diagnostics)
        assert "power:" in str(excinfo.value)

    def test_ad_hoc_requires_conditional(self, vignette_config):
        vignette_config.update({"ad_hoc_lambda0": 0.12, "target_on_unconditional_power": True})
        with pytest.raises(ConfigError):
            parse_config(vignette_config, DesignConfig)
        vignette_config["target_on_unconditional_power"] = False
        target = parse_config(vignette_config, DesignConfig).target()
        assert target.ad_hoc_lambda0 == 0.12

    def test_power_curve_grid(self, vignette_config):
        """pe_grid 省略時は 0.65 から 0.98 まで 0.005 刻み"""
        grid = parse_config(vignette_config, PowerCurveConfig).grid()
        assert len(grid) == 67
        assert (grid[0], grid[-1]) == (0.65, 0.98)

    def test_load_config(self, write_config, vignette_config):
        config = load_config(write_config(vignette_config), SimulateConfig)
        assert config.simulation.replications == 100_000
        with pytest.raises(ConfigError):
            load_config(write_config({"methods": "x"}, "bad.json"), SimulateConfig)

    def test_sensitivity_from_control_pe(self, vignette_config):
        """sens_analysis_pe からは λ₀ を厳密に求める"""
        del vignette_config["lambda0_sens_analysis"]
        vignette_config["sens_analysis_pe"] = 0.947
        config = parse_config(vignette_config, DesignConfig)
        assert config.sensitivity_lambda0() == pytest.approx(math.log(0.053) / math.log(0.072) - 1.0)
        assert parse_config({**vignette_config, "sens_analysis_pe": None}, DesignConfig).sensitivity_lambda0() is None

    def test_sensitivity_inputs_are_exclusive(self, vignette_config):
        """λ₀ と PE の両方で感度分析を指定するとエラー"""
        vignette_config["sens_analysis_pe"] = 0.947
        with pytest.raises(ConfigError):
            parse_config(vignette_config, DesignConfig)

    def test_negative_null_pe(self, vignette_config):
        """負の null_pe は設定の検証で項目名つきで拒否する"""
        vignette_config["null_pe"] = -0.1
        with pytest.raises(ConfigError) as excinfo:
            parse_config(vignette_config, DesignConfig)
        assert any(d.startswith("null_pe:") for d in excinfo.value.diagnostics)


class TestSettings:
    """環境変数"""

    def test_int_env(self, monkeypatch):
        monkeypatch.setenv("NI_DESIGN_WORKERS", " 4 ")
        assert settings.int_env("NI_DESIGN_WORKERS", 1) == 4
        monkeypatch.setenv("NI_DESIGN_WORKERS", "0")
        assert settings.int_env("NI_DESIGN_WORKERS", 1) == 1
        monkeypatch.delenv("NI_DESIGN_WORKERS")
        assert settings.int_env("NI_DESIGN_WORKERS", 2) == 2

    def test_int_env_names_variable(self, monkeypatch):
        """整数でない値は変数名を含む ConfigError"""
        monkeypatch.setenv("NI_DESIGN_WORKERS", "four")
        with pytest.raises(ConfigError) as excinfo:
            settings.int_env("NI_DESIGN_WORKERS", 1)
        assert "NI_DESIGN_WORKERS" in str(excinfo.value)
        assert config.simulation.replications == 100_000
        with pytest.raises(ConfigError):
            load_config(write_config({"methods": "x"}, "bad.json"), SimulateConfig)


class TestKableTable:
    """中央揃えのパイプ表"""

    def test_centering(self):
        """列幅は最長セル + 2、余りは右側に寄せる"""
        df = pd.DataFrame({"ab": ["x", "abcd"]})
        assert kable_table(df).splitlines() == [
            "|  ab  |",
            "|:----:|",
            "|  x   |",
            "| abcd |",
        ]
