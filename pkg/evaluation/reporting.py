# evaluation/reporting.py
"""
Convergence report of an alternation run: the per-iteration table as CSV,
a one-paragraph terminal summary and an optional PDF run sheet.
"""
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional

import pandas as pd
from fpdf import FPDF

from solvers.alternation import Trace

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["iter", "e_b", "e_l", "e_f", "total", "epe_u", "epe_v", "layer_err"]


def trace_frame(trace: Trace) -> pd.DataFrame:
    rows = [
        {
            "iter": rec.iteration,
            "e_b": rec.energy.e_b,
            "e_l": rec.energy.e_l,
            "e_f": rec.energy.e_f,
            "total": rec.energy.total,
            "epe_u": rec.epe_u,
            "epe_v": rec.epe_v,
            "layer_err": rec.layer_err,
        }
        for rec in trace
    ]
    frame = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    if len(frame) == 0:
        return frame
    # None -> NaN so the metric columns stay numeric
    frame = frame.apply(pd.to_numeric)
    return frame.astype({"iter": "int64"})


def write_trace_csv(trace: Trace, path) -> None:
    """One row per trace record. The iter = 0 row is the starting state before any
    half-step, so a run of N outer iterations writes N + 1 rows; missing metrics
    become empty fields."""
    trace_frame(trace).to_csv(path, index=False, na_rep="", float_format="%.12g")


def read_trace_csv(path) -> pd.DataFrame:
    return pd.read_csv(path)


def _fmt(value) -> str:
    return "-" if value is None or pd.isna(value) else f"{value:.4g}"


def summarize(trace: Trace) -> str:
    if len(trace) == 0:
        return "empty trace"
    first, last = trace.records[0], trace.records[-1]
    drop = first.energy.total - last.energy.total
    rel = drop / first.energy.total if first.energy.total > 0 else 0.0
    lines = [
        f"{len(trace) - 1} outer iterations, total energy {first.energy.total:.6g} -> {last.energy.total:.6g} "
        f"({100.0 * rel:.2f}% lower), {trace.rejected_steps} rejected half-steps",
    ]
    if last.epe_u is not None:
        lines.append(f"EPE U {_fmt(first.epe_u)} -> {_fmt(last.epe_u)}")
    if last.epe_v is not None:
        lines.append(f"EPE V {_fmt(first.epe_v)} -> {_fmt(last.epe_v)}")
    if last.layer_err is not None:
        lines.append(f"layer error (1-NCC) {_fmt(first.layer_err)} -> {_fmt(last.layer_err)}")
    return "; ".join(lines)


def clean_text(text) -> str:
    """Make text safe for the Latin-1 core PDF fonts."""
    if not isinstance(text, str):
        text = str(text)
    replacements = {"–": "-", "—": "--", "‘": "'", "’": "'", "′": "'",
                    "“": '"', "”": '"'}
    for char, replacement in replacements.items():
        text = text.replace(char, replacement)
    return text.encode("latin-1", "replace").decode("latin-1")


def write_pdf_report(trace: Trace, path, title: str = "duoflow run",
                     details: Optional[Dict[str, str]] = None) -> None:
    frame = trace_frame(trace)
    pdf = FPDF()
    pdf.set_auto_page_break(auto=True, margin=20)
    pdf.add_page()

    pdf.set_font("Times", "B", 14)
    pdf.cell(0, 7, clean_text(title), ln=1, align="C")
    pdf.set_font("Times", "", 10)
    stamp = datetime.now(timezone.utc).strftime("%d %b %Y, %H:%M UTC")
    pdf.cell(0, 5, f"Generated at: {stamp}", ln=1, align="C")
    pdf.ln(3)
    pdf.set_line_width(0.5)
    pdf.line(10, pdf.get_y(), 200, pdf.get_y())
    pdf.ln(5)

    if details:
        pdf.set_font("Times", "B", 12)
        pdf.cell(0, 6, "1. SETTINGS", ln=1)
        pdf.set_font("Times", "", 10)
        for key, value in details.items():
            pdf.cell(0, 5, clean_text(f"- {key}: {value}"), ln=1)
        pdf.ln(4)

    pdf.set_font("Times", "B", 12)
    pdf.cell(0, 6, "2. SUMMARY", ln=1)
    pdf.set_font("Times", "", 10)
    pdf.multi_cell(0, 5, clean_text(summarize(trace)))
    pdf.ln(4)

    pdf.set_font("Times", "B", 12)
    pdf.cell(0, 6, "3. CONVERGENCE", ln=1)
    widths = [12, 25, 25, 25, 27, 22, 22, 22]
    pdf.set_font("Times", "B", 9)
    for col, width in zip(TRACE_COLUMNS, widths):
        pdf.cell(width, 5, col, border=1, align="C")
    pdf.ln(5)
    pdf.set_font("Times", "", 9)
    for _, row in frame.iterrows():
        for col, width in zip(TRACE_COLUMNS, widths):
            text = str(int(row[col])) if col == "iter" else _fmt(row[col])
            pdf.cell(width, 5, text, border=1, align="R")
        pdf.ln(5)

    pdf.output(str(path))
    logger.info("[REPORT] wrote %s", path)


def convergence_report(trace: Trace, csv_path=None, pdf_path=None, title: str = "duoflow run",
                       details: Optional[Dict[str, str]] = None) -> str:
    """Write the trace CSV (and PDF when asked) and return the terminal summary."""
    if csv_path is not None:
        write_trace_csv(trace, Path(csv_path))
        logger.debug("[REPORT] wrote %s (%d rows)", csv_path, len(trace))
    if pdf_path is not None:
        write_pdf_report(trace, Path(pdf_path), title, details)
    return summarize(trace)
