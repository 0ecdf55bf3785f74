"""Point matching error, inlier-threshold curves and category tables."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import algebra
from .errors import EmptyInput

# column order of the large-baseline table
CATEGORY_ORDER = ("RE-L", "LT-L", "LL-L", "LF-L", "SF-L")
AVG = "Avg"


@dataclass
class EvalRecord:
    pair_id: str
    category: str
    pme: float
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def as_row(self):
        return {"pair_id": self.pair_id, "category": self.category, "pme": f"{self.pme:.6f}"}


@dataclass
class RobustnessCurve:
    thresholds: np.ndarray
    proportions: np.ndarray

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["threshold", "inlier_proportion"])
        for t, p in zip(self.thresholds, self.proportions):
            w.writerow([f"{t:g}", f"{p:.6f}"])
        return out.getvalue()


def pme(h, pts, pair_id="", category=""):
    """Mean Euclidean distance between ``apply(h, src)`` and the labelled
    targets of an ``(N, 4)`` correspondence array."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 4)
    if len(pts) == 0:
        raise EmptyInput("no labelled points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    err = np.linalg.norm(algebra.apply(h, pts[:, :2]) - pts[:, 2:], axis=1)
    return EvalRecord(str(pair_id), str(category), float(err.mean()), err)


def default_thresholds():
    return np.arange(1.0, 51.0)


def inlier_curve(errors, thresholds=None):
    """Share of errors strictly below each threshold."""
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise EmptyInput("no errors")
    if np.any(e < 0) or np.any(np.isnan(e)):
        raise ValueError("errors must be non-negative")
    t = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=float).ravel()
    if np.any(np.diff(t) < 0):
        raise ValueError("thresholds must be ascending")
    se = np.sort(e)
    counts = np.searchsorted(se, t, side="left")
    return RobustnessCurve(t, counts / e.size)


@dataclass
class Table:
    """Method-by-column PME table; ``values[m][c]`` is a float or None."""

    methods: list
    columns: list
    values: dict

    def column(self, c):
        return [self.values[m].get(c) for m in self.methods]


def _ordered(categories):
    known = [c for c in CATEGORY_ORDER if c in categories]
    return known + sorted(c for c in categories if c not in CATEGORY_ORDER)


def category_report(records, avg_label=AVG):
    """Build a ``Table`` from ``{method: [EvalRecord, ...]}``.

    Cells are per-category mean PME; the average column is the unweighted
    mean of the category means.  Categories with no records are omitted.
    """
    if isinstance(records, (list, tuple)):
        records = {"method": list(records)}
    cats = set()
    for recs in records.values():
        cats.update(r.category for r in recs)
    columns = _ordered(cats)
    values = {}
    for m, recs in records.items():
        row = {}
        for c in columns:
            v = [r.pme for r in recs if r.category == c]
            if v:
                row[c] = float(np.mean(v))
        if row:
            row[avg_label] = float(np.mean(list(row.values())))
        values[m] = row
    return Table(list(records), columns + [avg_label], values)


def relative_change(value, reference):
    return (value - reference) / reference * 100.0


def reference_values(table, reference="second_best"):
    """Per-column reference for the relative columns.

    ``reference`` is a method name (a fixed baseline row) or
    ``"second_best"``: the second smallest entry of the column, ties
    counted, as in a table comparing every row against the runner-up.
    """
    refs = {}
    for c in table.columns:
        col = [v for v in table.column(c) if v is not None]
        if reference == "second_best":
            if len(col) >= 2:
                refs[c] = sorted(col)[1]
            elif col:
                refs[c] = col[0]
        else:
            refs[c] = table.values[reference].get(c)
    return refs


def _pct(p):
    if abs(p) < 0.005:
        p = 0.0
    return f"{'+' if p >= 0 else '-'}{abs(p):.2f}%"


def cells(table, reference=None):
    """Formatted cells ``"v.vv (+x.xx%)"`` (or plain values) per method."""
    refs = reference_values(table, reference) if reference else {}
    out = {}
    for m in table.methods:
        row = []
        for c in table.columns:
            v = table.values[m].get(c)
            if v is None:
                row.append("-")
                continue
            r = refs.get(c)
            if r is None or r == 0:
                row.append(f"{v:.2f}")
            else:
                row.append(f"{v:.2f} ({_pct(relative_change(v, r))})")
        out[m] = row
    return out


def render_text(table, reference=None):
    """Aligned plain-text table."""
    body = cells(table, reference)
    header = [""] + list(table.columns)
    rows = [header] + [[m] + body[m] for m in table.methods]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for r in rows:
        lines.append("  ".join(s.ljust(w) if i == 0 else s.rjust(w) for i, (s, w) in enumerate(zip(r, widths))).rstrip())
    return "\n".join(lines) + "\n"


def to_csv(table, reference=None):
    """CSV with raw means plus relative-change columns when a reference is given."""
    refs = reference_values(table, reference) if reference else {}
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    head = ["method"] + list(table.columns)
    if refs:
        head += [f"{c} rel%" for c in table.columns]
    w.writerow(head)
    for m in table.methods:
        vals = [table.values[m].get(c) for c in table.columns]
        row = [m] + ["" if v is None else f"{v:.6f}" for v in vals]
        if refs:
            for c, v in zip(table.columns, vals):
                r = refs.get(c)
                row.append("" if v is None or not r else f"{relative_change(v, r):.4f}")
        w.writerow(row)
    return out.getvalue()


def read_table_csv(text):
    """Inverse of ``to_csv`` for the raw-mean columns."""
    rows = list(csv.reader(io.StringIO(text)))
    head = rows[0]
    columns = [c for c in head[1:] if not c.endswith(" rel%")]
    values, methods = {}, []
    for r in rows[1:]:
        methods.append(r[0])
        values[r[0]] = {c: float(v) for c, v in zip(columns, r[1:1 + len(columns)]) if v != ""}
    return Table(methods, columns, values)


def write_records_csv(records):
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=["pair_id", "category", "pme"], lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow(r.as_row())
    return out.getvalue()


def plot_curves(curves, path, title="Inlier proportion"):
    """Line plot of ``{label: RobustnessCurve}`` written as SVG.

    The SVG hash salt and date are pinned so identical inputs give
    identical files.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "homoscale", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label, c in curves.items():
            ax.plot(c.thresholds, c.proportions, label=label)
        ax.set_xlabel("threshold (px)")
        ax.set_ylabel("inlier proportion")
        ax.set_ylim(0, 1.02)
        ax.set_title(title)
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
