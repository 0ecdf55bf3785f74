import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homoscale import algebra as A, evaluation as V
from homoscale.errors import EmptyInput


def test_pme():
    pts = np.array([[0, 0, 3, 4], [10, 10, 13, 14.0]])
    assert V.pme(A.identity(), pts).pme == pytest.approx(5.0)
    assert V.pme(A.translation(3, 4), pts).pme == pytest.approx(0.0, abs=1e-12)
    rec = V.pme(A.identity(), pts[::-1], "p", "LT-L")
    assert rec.pme == pytest.approx(5.0) and rec.category == "LT-L"
    assert rec.pme == pytest.approx(rec.errors.mean())
    with pytest.raises(EmptyInput):
        V.pme(A.identity(), np.zeros((0, 4)))


def test_inlier_curve():
    c = V.inlier_curve(np.zeros(5))
    assert len(c.thresholds) == 50 and np.all(c.proportions == 1)
    c = V.inlier_curve([0.5, 5, 50], [10])
    assert c.proportions[0] == pytest.approx(2 / 3)
    # strict inequality: an error equal to the threshold is not an inlier
    assert V.inlier_curve([1.0, 2.0], [1.0, 2.0, 3.0]).proportions.tolist() == [0.0, 0.5, 1.0]
    with pytest.raises(EmptyInput):
        V.inlier_curve([])
    with pytest.raises(ValueError):
        V.inlier_curve([1.0], [3.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=50))
def test_inlier_curve_monotone(errors):
    p = V.inlier_curve(errors).proportions
    assert np.all(np.diff(p) >= 0) and p.min() >= 0 and p.max() <= 1
    assert V.inlier_curve(errors, [1e9]).proportions[0] == 1


def rec(cat, value, pid="x"):
    return V.EvalRecord(pid, cat, value)


def test_category_report():
    t = V.category_report([rec("synthetic", 2), rec("synthetic", 4)])
    assert t.values["method"]["synthetic"] == 3 and t.values["method"]["Avg"] == 3
    t = V.category_report({"m": [rec("LL-L", 1), rec("RE-L", 2), rec("RE-L", 4), rec("zz", 9)]})
    assert t.columns == ["RE-L", "LL-L", "zz", "Avg"]
    # the average weighs categories equally, not records
    assert t.values["m"]["Avg"] == pytest.approx((3 + 1 + 9) / 3)


def test_relative_columns():
    t = V.Table(["base", "ours"], ["c"], {"base": {"c": 10.0}, "ours": {"c": 5.0}})
    assert V.cells(t, "base")["ours"] == ["5.00 (-50.00%)"]
    assert V.cells(t, "base")["base"] == ["10.00 (+0.00%)"]
    t = V.Table(list("abc"), ["c"], {"a": {"c": 3.0}, "b": {"c": 1.0}, "c": {"c": 2.0}})
    assert V.reference_values(t)["c"] == 2.0
    assert V.cells(t, "second_best")["b"] == ["1.00 (-50.00%)"]


def test_text_and_csv():
    t = V.category_report({"I3x3": [rec("RE-L", 7.5)], "ours": [rec("RE-L", 1.5)]})
    text = V.render_text(t, "I3x3")
    assert "RE-L" in text.splitlines()[0] and "-80.00%" in text
    back = V.read_table_csv(V.to_csv(t, "I3x3"))
    assert back.methods == t.methods and back.columns == t.columns
    assert back.values == t.values
    csv = V.write_records_csv([rec("RE-L", 1.25, "p0")])
    assert csv.splitlines() == ["pair_id,category,pme", "p0,RE-L,1.250000"]


def test_plot_deterministic(tmp_path):
    curves = {"a": V.inlier_curve([1, 2, 3.5]), "b": V.inlier_curve([0.5, 9])}
    V.plot_curves(curves, tmp_path / "a.svg")
    V.plot_curves(curves, tmp_path / "b.svg")
    a = (tmp_path / "a.svg").read_bytes()
    assert a.startswith(b"<?xml") and a == (tmp_path / "b.svg").read_bytes()
