import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sataperf import experiments, presets
from sataperf.raid import MirrorKind
from sataperf.report import (RateRow, ReportError, ResultRow, ResultTable, Tabular,
                             appendix_points, consistency_check, fit_scaling, percent_of_best,
                             render)
from sataperf.stats import IoStats, LatencySummary

APPENDIX = presets.golden("appendix")


def table(n):
    return experiments.reference_table(n)


def test_percent_examples():
    pct = percent_of_best(table(1))
    assert pct.row("Maxtor", "hardware").normal == 94
    assert percent_of_best(table(2)).row("WD", "none").ctlr_rebuild == 102


def test_single_row_class_is_100():
    t = ResultTable("x", "IOps", [ResultRow("A", MirrorKind.NONE, 50, 20, 0)])
    pct = percent_of_best(t)
    assert (pct.rows[0].normal, pct.rows[0].ctlr_rebuild, pct.rows[0].vol_rebuild) == (100, 40, 0)


def test_half_up_rounding():
    t = ResultTable("x", "IOps", [ResultRow("A", MirrorKind.SOFTWARE, 200),
                                  ResultRow("B", MirrorKind.SOFTWARE, 1)])
    assert percent_of_best(t).row("B", "software").normal == 1   # 0.5 rounds up
    t = ResultTable("x", "IOps", [ResultRow("A", MirrorKind.SOFTWARE, 146),
                                  ResultRow("B", MirrorKind.HARDWARE, 138)])
    assert percent_of_best(t).row("B", "hardware").normal == 95


def test_empty_class_is_error():
    t = ResultTable("x", "IOps", [ResultRow("A", MirrorKind.NONE, 0, 5, 0)])
    with pytest.raises(ReportError):
        percent_of_best(t)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 6])
def test_printed_percentages_reproduced(n):
    t = table(n)
    pct = percent_of_best(t)
    for printed in t.printed_percent.rows:
        mine = pct.row(printed.vendor, printed.mirror)
        assert (mine.normal, mine.ctlr_rebuild, mine.vol_rebuild) == \
            (printed.normal, printed.ctlr_rebuild, printed.vol_rebuild)


def test_table5_erratum_flagged():
    findings = consistency_check(table(5))
    flagged = [f for f in findings if f.flagged]
    assert len(flagged) == 1
    assert flagged[0].subject == "WD/None Ctlr Rebuild"
    assert (flagged[0].observed, flagged[0].expected) == (28, 85)


@settings(max_examples=40, deadline=None)
@given(n=st.sampled_from([1, 2, 3, 4, 6]), k=st.floats(0.01, 1000))
def test_percent_scale_invariant(n, k):
    t = table(n)
    a, b = percent_of_best(t), percent_of_best(t.scaled(k))
    for ra, rb in zip(a.rows, b.rows):
        for col in ("normal", "ctlr_rebuild", "vol_rebuild"):
            assert abs(ra.value(col) - rb.value(col)) <= 1


def test_fit_exact_line():
    fit = fit_scaling([(n, 10.0 * n) for n in range(1, 9)])
    assert fit.slope == pytest.approx(10)
    assert fit.intercept == pytest.approx(0, abs=1e-9)
    assert fit.r_squared == pytest.approx(1)
    assert fit.saturation_point is None


@settings(max_examples=50, deadline=None)
@given(slope=st.floats(0.5, 500), icpt=st.floats(-50, 50), n=st.integers(3, 12))
def test_fit_noiseless_linear(slope, icpt, n):
    pts = [(x, slope * x + icpt + 100) for x in range(1, n + 1)]
    fit = fit_scaling(pts)
    assert fit.slope == pytest.approx(slope, rel=1e-6)
    assert fit.r_squared == pytest.approx(1, abs=1e-9)


def test_fit_rejects_degenerate_input():
    with pytest.raises(ReportError):
        fit_scaling([(2, 1.0), (2, 2.0), (2, 3.0)])
    with pytest.raises(ReportError):
        fit_scaling([(1, 1.0), (2, 2.0)])


def test_fit_appendix_examples():
    rr = fit_scaling(appendix_points(APPENDIX, "3ware-8506", "random", "read", "iops"))
    assert 74 * 0.9 <= rr.slope <= 75 * 1.1 and rr.r_squared > 0.99
    assert rr.saturation_point is None
    seq = fit_scaling(appendix_points(APPENDIX, "3ware-8506", "sequential", "read", "mbps"))
    assert seq.saturation_point == 5
    assert seq.plateau == pytest.approx(225, rel=0.1)


def test_appendix_implied_blocks():
    findings = consistency_check(APPENDIX)
    groups = {f.subject: f for f in findings if f.check == "implied_block"}
    assert groups["3ware-8506 sequential"].observed == 256 * 1024
    assert groups["3ware-8506 sequential"].ok
    assert groups["highpoint-1540 sequential"].observed == 64 * 1024
    assert groups["highpoint-1540 sequential"].flagged
    assert groups["3ware-8506 random"].observed == 8192


def test_appendix_printed_row():
    row = next(r for r in APPENDIX["rows"] if r["controller"] == "3ware-8506"
               and r["pattern"] == "sequential" and r["mbps"] == 49.1)
    assert row["iops"] == 196.3
    (f,) = consistency_check(RateRow("x", 49.1, 196.3, 256 * 1024, 1))
    assert f.ok


def test_fabricated_row_flagged():
    (f,) = consistency_check(RateRow("fake", 1.0, 100.0, 8192))
    assert f.flagged
    assert f.observed == pytest.approx(10485.76)


def test_littles_law_check_on_stats():
    good = IoStats(1000, 8192000, 10.0, LatencySummary(count=1000, mean_us=40_000), 8192, 4)
    bad = IoStats(1000, 8192000, 10.0, LatencySummary(count=1000, mean_us=10_000), 8192, 4)
    assert all(f.ok for f in consistency_check(good))
    assert any(f.flagged and f.check == "littles_law" for f in consistency_check(bad))


def test_render_markdown_header():
    text = render(table(1), "markdown")
    assert text.splitlines()[0] == \
        "| Vendor | Mirror | Normal IOps | Ctlr Rebuild IOps | Vol Rebuild IOps |"
    assert "| WD | Software | 146 |" in text


def test_render_empty_table_is_header_only():
    empty = ResultTable("x", "MBps")
    assert len(render(empty, "markdown").splitlines()) == 2
    assert render(empty, "csv") == "Vendor,Mirror,Normal MBps,Ctlr Rebuild MBps,Vol Rebuild MBps\n"


@pytest.mark.parametrize("fmt", ["markdown", "csv", "json"])
def test_render_deterministic(fmt):
    assert render(table(3), fmt) == render(table(3), fmt)


def test_render_json_round_trip():
    t = table(4)
    assert ResultTable.from_dict(json.loads(render(t, "json"))).rows == t.rows


def test_render_tabular_and_unknown_format():
    assert render(Tabular(["a"], [["1"]]), "csv") == "a\n1\n"
    with pytest.raises(ReportError):
        render(table(1), "xml")


def test_percent_table_cells():
    text = render(percent_of_best(table(1)), "markdown")
    assert "100%" in text and "Normal IOps" not in text


def test_noisy_saturating_curve():
    rng = np.random.default_rng(0)
    pts = [(n, min(50 * n, 110) * (1 + rng.normal(0, 0.01))) for n in range(1, 9)]
    fit = fit_scaling(pts)
    assert fit.saturation_point == 3
    assert fit.plateau == pytest.approx(110, rel=0.03)
