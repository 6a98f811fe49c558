import math

import pytest

from core.energy import EnergyBreakdown
from evaluation.reporting import (
    TRACE_COLUMNS,
    clean_text,
    convergence_report,
    read_trace_csv,
    summarize,
    trace_frame,
)
from solvers.alternation import Trace, TraceRecord


@pytest.fixture
def trace():
    out = Trace()
    out.append(TraceRecord(0, EnergyBreakdown(4.0, 2.0, 1.0, 10.0), epe_u=1.2, layer_err=0.6))
    out.append(TraceRecord(1, EnergyBreakdown(3.0, 1.5, 1.0, 8.0), epe_u=0.7, layer_err=0.4))
    out.append(TraceRecord(2, EnergyBreakdown(2.5, 1.5, 1.0, 7.5), epe_u=0.5, layer_err=0.3,
                           flows_accepted=False))
    return out


class TestTraceTable:

    def test_columns_and_missing_metrics(self, trace):
        frame = trace_frame(trace)
        assert list(frame.columns) == TRACE_COLUMNS
        assert frame["iter"].tolist() == [0, 1, 2]
        assert frame["epe_v"].isna().all()
        assert frame["total"].iloc[-1] == 7.5

    def test_empty_trace(self):
        assert len(trace_frame(Trace())) == 0
        assert summarize(Trace()) == "empty trace"

    def test_csv_leaves_missing_fields_empty(self, tmp_path, trace):
        convergence_report(trace, csv_path=tmp_path / "trace.csv")
        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert lines[0] == ",".join(TRACE_COLUMNS)
        assert lines[1].split(",")[6] == ""
        back = read_trace_csv(tmp_path / "trace.csv")
        assert back["layer_err"].tolist() == [0.6, 0.4, 0.3]
        assert math.isnan(back["epe_v"].iloc[0])

    def test_first_row_is_starting_state(self, tmp_path, trace):
        # two outer iterations plus the state they started from
        convergence_report(trace, csv_path=tmp_path / "trace.csv")
        back = read_trace_csv(tmp_path / "trace.csv")
        assert len(back) == 2 + 1
        assert back["iter"].tolist() == [0, 1, 2]
        assert back["total"].iloc[0] == trace.records[0].energy.total
        assert "2 outer iterations" in summarize(trace)


class TestSummary:

    def test_mentions_energy_and_metrics(self, trace):
        text = summarize(trace)
        assert "2 outer iterations" in text
        assert "25.00% lower" in text
        assert "1 rejected half-steps" in text
        assert "EPE U 1.2 -> 0.5" in text
        assert "EPE V" not in text

    def test_clean_text(self):
        assert clean_text("L1′ – “ok”") == "L1' - \"ok\""
        assert clean_text(0.5) == "0.5"
        assert clean_text("θ") == "?"


class TestPdf:

    def test_writes_pdf(self, tmp_path, trace):
        path = tmp_path / "report.pdf"
        text = convergence_report(trace, pdf_path=path, details={"mode": "static", "theta": "0.25"})
        assert path.read_bytes().startswith(b"%PDF")
        assert text == summarize(trace)
