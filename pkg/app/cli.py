"""コマンドラインインターフェース

    python -m app.cli design --config design.json --format text
    python -m app.cli oc --config oc.json
    python -m app.cli power-curve --config curve.json --format csv
    python -m app.cli simulate --config sim.json --reps 100000 --seed 7

終了コード: 0 成功（実行不能な行を含む）、2 設定・検証エラー、3 数値計算の失敗。
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import pandas as pd

from app import framework, settings
from app.config import (
    DesignConfig,
    OcConfig,
    PowerCurveConfig,
    SimulateConfig,
    SimulationCheck,
    load_config,
    parse_config,
)
from app.design_engine import (
    design_trial,
    events_from_variance,
    max_power_curve,
    sample_size_from_events,
    solve_v_xc,
    solving_scenario,
)
from app.exceptions import (
    DesignInfeasibleError,
    InvalidInputError,
    NIDesignError,
    NumericalFailure,
    PreconditionError,
)
from app.logging_config import logging_config
from app.mc_harness import McConfig, McLevel, McResult, simulate_estimate_level, simulate_trial_level
from app.models import DesignReport, OperatingCharacteristics, TruthScenario
from app.report import OutputFormat, render_curve, render_design, render_oc, render_simulation
from app.scales import loghr_to_pe, pe_to_loghr

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# シミュレーション結果の合否判定に使う標準誤差の倍数
PASS_SIGMA = {McLevel.ESTIMATE_LEVEL: 3.0, McLevel.TRIAL_LEVEL: 4.0}


def _timed(action: str, details: dict, fn: Callable[[], object]):
    monitor = logging_config.performance_monitor
    run_id = logging_config.new_run_id()
    monitor.start_timer(run_id)
    result = fn()
    duration = monitor.end_timer(run_id)
    if action == "simulate":
        logging_config.log_simulation_run(run_id, duration, details)
    else:
        logging_config.log_design_run(run_id, action, duration, details)
    return result


def run_design(config: DesignConfig) -> DesignReport:
    def compute() -> DesignReport:
        return design_trial(
            config.method_specs(),
            config.criteria(),
            config.target(),
            config.historical_evidence(),
            config.trial_model(),
            config.design_alternative_pe,
            sens_lambda0=config.sensitivity_lambda0(),
            design_lambda0=config.lambda0_for_design,
            workers=settings.WORKERS,
        )

    details = {"methods": len(config.methods), "approach": config.target().approach.value}
    return _timed("design", details, compute)


def run_oc(config: OcConfig) -> List[OperatingCharacteristics]:
    def compute() -> List[OperatingCharacteristics]:
        hist = config.historical_evidence()
        gamma_xp = pe_to_loghr(config.design_alternative_pe)
        rows = []
        for c in config.criteria():
            for m in config.method_specs():
                for lambda0 in config.lambda0_grid:
                    scenario = TruthScenario(lambda0=lambda0, gamma_xp=gamma_xp)
                    rows.append(
                        framework.operating_characteristics(
                            config.v_xc, hist, m, c, scenario, config.sign_level
                        )
                    )
        return rows

    return _timed("oc", {"v_xc": config.v_xc, "grid": config.lambda0_grid}, compute)


def run_power_curve(config: PowerCurveConfig) -> pd.DataFrame:
    def compute() -> pd.DataFrame:
        return max_power_curve(
            config.method_specs(),
            config.criteria(),
            config.historical_evidence(),
            config.grid(),
            config.lambda0_for_design,
            config.sign_level,
        )

    return _timed("power_curve", {"points": len(config.grid())}, compute)


def simulation_verdict(result: McResult) -> str:
    """推定量レベルは 3σ、試験レベルは 4σ で閉形式と比べる"""
    return "PASS" if result.within(PASS_SIGMA[result.level]) else "FAIL"


def run_simulation(config: SimulateConfig) -> pd.DataFrame:
    """手法 × 基準ごとに経験的な棄却率と閉形式を比較する"""
    block = config.simulation

    def compute() -> pd.DataFrame:
        hist = config.historical_evidence()
        target = config.target()
        model = config.trial_model()
        gamma_xp = pe_to_loghr(config.design_alternative_pe)
        design = TruthScenario(lambda0=config.lambda0_for_design, gamma_xp=gamma_xp)
        lambda0 = config.lambda0_for_design if block.lambda0 is None else block.lambda0
        mc = McConfig(
            replications=block.replications,
            master_seed=block.master_seed,
            level=block.level,
            workers=settings.WORKERS,
        )
        records = []
        for c in config.criteria():
            for m in config.method_specs():
                if block.check is SimulationCheck.TYPE1:
                    truth_xp = framework.boundary_gamma_xp(c, lambda0, hist.gamma_hat)
                else:
                    truth_xp = gamma_xp
                truth = TruthScenario(lambda0=lambda0, gamma_xp=truth_xp)
                record = {
                    "method": m.name, "criterion": c.label, "level": block.level.value,
                    "check": block.check.value, "lambda0": lambda0,
                }
                try:
                    v_xc = block.v_xc or solve_v_xc(target, hist, m, c, design)
                except (DesignInfeasibleError, NumericalFailure) as exc:
                    record.update({"verdict": "INFEASIBLE", "note": str(exc)})
                    records.append(record)
                    continue
                record["v_xc"] = v_xc
                if block.level is McLevel.ESTIMATE_LEVEL:
                    result = simulate_estimate_level(
                        mc, truth, hist.gamma_hat, v_xc, hist.se, m, c, config.sign_level
                    )
                else:
                    pe_exp = config.design_alternative_pe
                    pe_ctr = loghr_to_pe(
                        (1.0 + solving_scenario(target, hist, design).lambda0) * hist.gamma_hat
                    )
                    events = events_from_variance(v_xc, model, pe_exp, pe_ctr)
                    _, n_exp, n_ctr = sample_size_from_events(events, model, pe_exp, pe_ctr)
                    record.update({"n_exp": n_exp, "n_ctr": n_ctr})
                    result = simulate_trial_level(
                        mc, model, n_exp, n_ctr, truth, hist.gamma_hat, hist.se, m, c,
                        config.sign_level,
                    )
                record.update(
                    {
                        "empirical": result.rejection_rate,
                        "closed_form": result.closed_form_reference,
                        "mc_stderr": result.mc_stderr,
                        "replications": result.replications,
                        "degenerate": result.degenerate_replicates,
                        "small_count": result.small_count_reference,
                        "verdict": simulation_verdict(result),
                    }
                )
                records.append(record)
        columns = [
            "method", "criterion", "level", "check", "lambda0", "v_xc", "n_exp", "n_ctr",
            "empirical", "closed_form", "small_count", "mc_stderr", "replications", "degenerate", "verdict",
        ]
        if any("note" in r for r in records):
            columns.append("note")
        return pd.DataFrame.from_records(records, columns=columns)

    details = {"replications": block.replications, "seed": block.master_seed, "level": block.level.value}
    return _timed("simulate", details, compute)


def cmd_design(config_path: Path, output_format: OutputFormat) -> str:
    return render_design(run_design(load_config(config_path, DesignConfig)), output_format)


def cmd_oc(config_path: Path, output_format: OutputFormat) -> str:
    return render_oc(run_oc(load_config(config_path, OcConfig)), output_format)


def cmd_power_curve(config_path: Path, output_format: OutputFormat) -> str:
    return render_curve(run_power_curve(load_config(config_path, PowerCurveConfig)), output_format)


def cmd_simulate(
    config_path: Path,
    output_format: OutputFormat,
    seed: Optional[int] = None,
    reps: Optional[int] = None,
) -> str:
    config = load_config(config_path, SimulateConfig)
    overrides = {}
    if seed is not None:
        overrides["master_seed"] = seed
    if reps is not None:
        overrides["replications"] = reps
    if overrides:
        merged = config.simulation.model_dump()
        merged.update(overrides)
        # 上書き後も同じ検証を通す
        config = parse_config({**config.model_dump(), "simulation": merged}, SimulateConfig)
    return render_simulation(run_simulation(config), output_format)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ni-design",
        description="Active-controlled non-inferiority trial design and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, required=True, help="JSON configuration file")
        p.add_argument(
            "--format",
            choices=[f.value for f in OutputFormat],
            default=OutputFormat.TEXT.value,
            help="output format (default: text)",
        )
        p.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")

    common(sub.add_parser("design", help="design tables per success criterion"))
    common(sub.add_parser("oc", help="operating characteristics at a fixed V_XC"))
    common(sub.add_parser("power-curve", help="maximum unconditional power over a PE grid"))
    simulate = sub.add_parser("simulate", help="Monte Carlo check of the closed forms")
    common(simulate)
    simulate.add_argument("--seed", type=int, default=None, help="master seed (u64)")
    simulate.add_argument("--reps", type=int, default=None, help="number of replications")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    fmt = OutputFormat(args.format)
    try:
        if args.command == "design":
            output = cmd_design(args.config, fmt)
        elif args.command == "oc":
            output = cmd_oc(args.config, fmt)
        elif args.command == "power-curve":
            output = cmd_power_curve(args.config, fmt)
        else:
            output = cmd_simulate(args.config, fmt, seed=args.seed, reps=args.reps)
    except NumericalFailure as exc:
        logging_config.log_numerical_failure(args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidInputError, PreconditionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NIDesignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.out is None:
        sys.stdout.write(output)
    else:
        args.out.write_text(output, encoding="utf-8")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
