"""Mean absolute error, tolerance accuracy and evaluation reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

REPORT_COLUMNS = ("method", "dataset", "n", "mae", "tolerance", "tolerance_accuracy",
                  "gender_accuracy")


def _pair(estimates, truths):
    y = np.asarray(estimates, dtype=np.float64).ravel()
    x = np.asarray(truths, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("need at least one estimate")
    if y.shape != x.shape:
        raise ValueError(f"{y.size} estimates but {x.size} ground-truth values")
    return y, x


def mae(estimates, truths):
    y, x = _pair(estimates, truths)
    return float(np.mean(np.abs(y - x)))


def tolerance_accuracy(estimates, truths, t):
    """Fraction of estimates within ``t`` of the truth (inclusive)."""
    if t < 0:
        raise ValueError("tolerance must be nonnegative")
    y, x = _pair(estimates, truths)
    return float(np.mean(np.abs(y - x) <= t))


@dataclass
class EvalReport:
    n: int
    mae: float
    tolerance: int
    tolerance_accuracy: float
    gender_accuracy: float | None = None
    # truth value -> (count, mean absolute error)
    per_class: dict = field(default_factory=dict)
    method: str = "Comparative CNN"
    dataset: str = "synthetic"

    def row(self):
        g = "" if self.gender_accuracy is None else repr(self.gender_accuracy)
        return [self.method, self.dataset, str(self.n), repr(self.mae), str(self.tolerance),
                repr(self.tolerance_accuracy), g]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerow(self.row())
        return buf.getvalue()

    def to_text(self):
        header = ["method", "dataset", "n", "MAE", f"tol {self.tolerance}", "gender acc"]
        g = "-" if self.gender_accuracy is None else f"{100 * self.gender_accuracy:.1f}%"
        values = [self.method, self.dataset, str(self.n), f"{self.mae:.3f}",
                  f"{100 * self.tolerance_accuracy:.1f}%", g]
        widths = [max(len(a), len(b)) for a, b in zip(header, values)]
        lines = ["  ".join(h.ljust(wd) for h, wd in zip(header, widths)),
                 "  ".join(v.ljust(wd) for v, wd in zip(values, widths)), "",
                 "class  count  MAE"]
        for c, (cnt, err) in sorted(self.per_class.items()):
            lines.append(f"{c:<5g}  {cnt:<5d}  {err:.3f}")
        return "\n".join(lines) + "\n"


def summary_row(method, dataset, mae_value, accuracy):
    """One comparison-table line: method, dataset, MAE, tolerance accuracy."""
    acc = "" if accuracy is None else f"{100 * accuracy:.1f}%"
    return f"{method}, {dataset}, {round(mae_value, 2):g}, {acc}"


def make_report(estimates, truths, gender_estimates=None, gender_truths=None, t=5,
                method="Comparative CNN", dataset="synthetic"):
    y, x = _pair(estimates, truths)
    g_acc = None
    if gender_estimates is not None or gender_truths is not None:
        if gender_estimates is None or gender_truths is None:
            raise ValueError("gender estimates and truths must be given together")
        ge = np.asarray(gender_estimates).ravel()
        gt = np.asarray(gender_truths).ravel()
        if ge.shape != gt.shape or ge.size != y.size:
            raise ValueError("gender labels must match the number of age estimates")
        g_acc = float(np.mean(ge == gt))
    per_class = {}
    for c in np.unique(x):
        m = x == c
        per_class[float(c)] = (int(m.sum()), float(np.mean(np.abs(y[m] - x[m]))))
    return EvalReport(n=int(y.size), mae=mae(y, x), tolerance=int(t),
                      tolerance_accuracy=tolerance_accuracy(y, x, t), gender_accuracy=g_acc,
                      per_class=per_class, method=method, dataset=dataset)


def read_report_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    if len(rows) != 1 or tuple(rows[0]) != REPORT_COLUMNS:
        raise ValueError("not a single-row report CSV")
    r = rows[0]
    return EvalReport(n=int(r["n"]), mae=float(r["mae"]), tolerance=int(r["tolerance"]),
                      tolerance_accuracy=float(r["tolerance_accuracy"]),
                      gender_accuracy=float(r["gender_accuracy"]) if r["gender_accuracy"] else None,
                      method=r["method"], dataset=r["dataset"])
