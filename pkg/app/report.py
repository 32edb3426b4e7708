"""レポートの整形（text / markdown / csv / json）

丸めは表示時のみ。csv と json は全精度の値を出力する。
"""

import json
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

import pandas as pd

from app.models import CriterionTable, DesignReport, DesignResult, OperatingCharacteristics

INFEASIBLE = "infeasible"

DESIGN_COLUMNS = [
    "Method", "NI margin", "RNE", "Exp", "Ctr", "Sample size",
    "Exp.arm", "Ctr.arm", "CNC", "U.power",
]
SENSITIVITY_COLUMN = "U.power (SA)"


class OutputFormat(str, Enum):
    TEXT = "text"
    MARKDOWN = "markdown"
    CSV = "csv"
    JSON = "json"


def _fixed(digits: int) -> Callable[[Optional[float]], str]:
    def fmt(value: Optional[float]) -> str:
        return INFEASIBLE if value is None else f"{value:.{digits}f}"
    return fmt


def _count(value: Optional[int]) -> str:
    return INFEASIBLE if value is None else str(value)


def _design_cells(row: DesignResult, with_sens: bool) -> List[str]:
    cells = [
        row.method_name,
        _fixed(2)(row.margin_hr),
        _count(row.rne_total),
        _count(row.rne_exp),
        _count(row.rne_ctr),
        _count(row.n_total),
        _count(row.n_exp),
        _count(row.n_ctr),
        _fixed(3)(row.cnc_pe),
        _fixed(2)(row.up0),
    ]
    if with_sens:
        cells.append(_fixed(2)(row.up_sens))
    return cells


def design_display_frame(table: CriterionTable, with_sens: bool) -> pd.DataFrame:
    """表示用（丸め済み文字列）のデザイン表"""
    columns = DESIGN_COLUMNS + ([SENSITIVITY_COLUMN] if with_sens else [])
    return pd.DataFrame([_design_cells(r, with_sens) for r in table.rows], columns=columns)


def design_full_frame(report: DesignReport) -> pd.DataFrame:
    """全精度のデザイン表（全基準を縦に連結）"""
    records = [row.model_dump() for table in report.tables for row in table.rows]
    return pd.DataFrame.from_records(records, columns=list(DesignResult.model_fields))


def kable_table(df: pd.DataFrame) -> str:
    """中央揃えのパイプ表。列幅は最長セル + 2"""
    header = [str(c) for c in df.columns]
    body = [[str(v) for v in row] for row in df.itertuples(index=False)]
    widths = [
        max([len(header[j])] + [len(r[j]) for r in body]) + 2 for j in range(len(header))
    ]

    def center(text: str, width: int) -> str:
        pad = width - len(text)
        left = pad // 2
        return " " * left + text + " " * (pad - left)

    def line(cells: Sequence[str]) -> str:
        return "|" + "|".join(center(c, w) for c, w in zip(cells, widths)) + "|"

    rule = "|" + "|".join(":" + "-" * (w - 2) + ":" for w in widths) + "|"
    return "\n".join([line(header), rule] + [line(r) for r in body])


def markdown_table(df: pd.DataFrame) -> str:
    header = [str(c) for c in df.columns]
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    for row in df.itertuples(index=False):
        lines.append("| " + " | ".join(str(v) for v in row) + " |")
    return "\n".join(lines)


def _with_sens(report: DesignReport) -> bool:
    return any(r.up_sens is not None for t in report.tables for r in t.rows)


def _dump_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def render_design(report: DesignReport, fmt: OutputFormat) -> str:
    fmt = OutputFormat(fmt)
    if fmt is OutputFormat.JSON:
        return _dump_json(report.model_dump(mode="json"))
    if fmt is OutputFormat.CSV:
        return design_full_frame(report).to_csv(index=False)

    with_sens = _with_sens(report)
    if fmt is OutputFormat.MARKDOWN:
        lines = ["# Summary of Non-Inferiority Trial Design", "", "## Design Specifications", ""]
        lines += [f"- {spec}" for spec in report.specifications]
        for table in report.tables:
            lines += ["", f"## NI criterion: {table.criterion}", ""]
            lines.append(markdown_table(design_display_frame(table, with_sens)))
        return "\n".join(lines) + "\n"

    lines = ["=== Summary of Non-Inferiority Trial Design ===", "", "Design Specifications:"]
    lines += [f" • {spec}" for spec in report.specifications]
    for table in report.tables:
        lines += ["", f"--- NI criterion: {table.criterion} ---", "", ""]
        lines.append(kable_table(design_display_frame(table, with_sens)))
    return "\n".join(lines) + "\n"


def frame_records(df: pd.DataFrame) -> List[Dict[str, Any]]:
    """JSON 用のレコード列。欠損値は None"""
    return df.astype(object).where(df.notna(), None).to_dict(orient="records")


def _render_frame(
    df: pd.DataFrame, fmt: OutputFormat, title: str, formatters: Dict[str, Callable[[Any], str]]
) -> str:
    fmt = OutputFormat(fmt)
    if fmt is OutputFormat.JSON:
        return _dump_json(frame_records(df))
    if fmt is OutputFormat.CSV:
        return df.to_csv(index=False)
    shown = df.copy()
    for column, formatter in formatters.items():
        if column in shown:
            shown[column] = shown[column].map(formatter)
    if fmt is OutputFormat.MARKDOWN:
        return f"# {title}\n\n{markdown_table(shown)}\n"
    return f"=== {title} ===\n\n{kable_table(shown)}\n"


def _optional(digits: int) -> Callable[[Any], str]:
    def fmt(value: Any) -> str:
        if value is None or (isinstance(value, float) and pd.isna(value)):
            return "-"
        return f"{value:.{digits}f}"
    return fmt


def _integer(value: Any) -> str:
    if value is None or pd.isna(value):
        return "-"
    return str(int(value))


def oc_frame(rows: Sequence[OperatingCharacteristics]) -> pd.DataFrame:
    return pd.DataFrame.from_records(
        [r.model_dump() for r in rows], columns=list(OperatingCharacteristics.model_fields)
    )


def render_oc(rows: Sequence[OperatingCharacteristics], fmt: OutputFormat) -> str:
    four = _optional(4)
    formatters = {
        "v_xc": four, "lambda0": four, "unconditional_power": four, "conditional_power": four,
        "unconditional_t1e": four, "conditional_t1e": four, "margin_log": four,
        "margin_hr": _optional(2), "lambda0_min": four, "cnc_pe": _optional(3),
    }
    return _render_frame(oc_frame(rows), fmt, "Operating Characteristics", formatters)


def render_curve(df: pd.DataFrame, fmt: OutputFormat) -> str:
    formatters = {"pe": _optional(3), "max_up": _optional(4)}
    return _render_frame(df, fmt, "Maximum Unconditional Power", formatters)


def render_simulation(df: pd.DataFrame, fmt: OutputFormat) -> str:
    formatters = {
        "empirical": _optional(5), "closed_form": _optional(5), "small_count": _optional(5),
        "mc_stderr": _optional(5),
        "v_xc": _optional(5), "lambda0": _optional(4), "n_exp": _integer, "n_ctr": _integer,
    }
    return _render_frame(df, fmt, "Monte Carlo Verification", formatters)
