"""Result rows, table/CSV rendering and Welch's t-test."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import DataFormatError, DegenerateSampleError

COLUMNS = ("mu", "accuracy_pct", "pruned_per_layer", "sparsity_pct", "training_epochs", "speedup")


@dataclass(frozen=True)
class ReportRow:
    mu: float
    accuracy_pct: float
    pruned_per_layer: tuple = field(default_factory=tuple)
    sparsity_pct: float = 0.0
    training_epochs: int = 0
    speedup: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "pruned_per_layer", tuple(int(c) for c in self.pruned_per_layer))
        if not 0.0 <= self.sparsity_pct <= 100.0:
            raise ValueError(f"sparsity_pct out of range: {self.sparsity_pct}")

    def fields(self) -> list:
        return [
            f"{self.mu:.6g}",
            f"{self.accuracy_pct:.2f}",
            "-".join(str(c) for c in self.pruned_per_layer),
            f"{self.sparsity_pct:.2f}",
            str(int(self.training_epochs)),
            f"{self.speedup:.2f}",
        ]

    @classmethod
    def from_fields(cls, values: Sequence[str]) -> "ReportRow":
        if len(values) != len(COLUMNS):
            raise DataFormatError(f"expected {len(COLUMNS)} fields, got {len(values)}: {values}")
        mu, acc, pruned, sparsity, epochs, speedup = (v.strip() for v in values)
        counts = tuple(int(c) for c in pruned.split("-")) if pruned else ()
        return cls(float(mu), float(acc), counts, float(sparsity), int(epochs), float(speedup))

    def rounded(self) -> "ReportRow":
        """The row as it reads back after rendering."""
        return ReportRow.from_fields(self.fields())


def render_table(rows: Sequence[ReportRow]) -> str:
    if not rows:
        raise ValueError("no rows to render")
    lines = [", ".join(COLUMNS)]
    lines.extend(", ".join(r.fields()) for r in rows)
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> list:
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or tuple(c.strip() for c in lines[0].split(",")) != COLUMNS:
        raise DataFormatError("table header does not match the report columns")
    return [ReportRow.from_fields(l.split(",")) for l in lines[1:]]


def rows_to_csv(rows: Sequence[ReportRow]) -> str:
    if not rows:
        raise ValueError("no rows to export")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in rows:
        writer.writerow(r.fields())
    return buf.getvalue()


def export_csv(rows: Sequence[ReportRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(rows_to_csv(rows))


def read_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise DataFormatError(f"{path}: header {header} does not match {COLUMNS}")
        return [ReportRow.from_fields(r) for r in reader if r]


# -- Welch's t-test -------------------------------------------------------------


def _betacf(a, b, x, max_iter=500, eps=1e-16):
    # Modified Lentz evaluation of the incomplete beta continued fraction.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if t == 0:
        return 1.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def _mean_var(xs):
    n = len(xs)
    mean = math.fsum(xs) / n
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return n, mean, var


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> tuple:
    """Welch's unequal-variance t statistic and two-sided p-value.

    Degrees of freedom use the Welch-Satterthwaite approximation.
    """
    a = [float(x) for x in sample_a]
    b = [float(x) for x in sample_b]
    if len(a) < 2 or len(b) < 2:
        raise DegenerateSampleError("each sample needs at least 2 values")
    na, ma, va = _mean_var(a)
    nb, mb, vb = _mean_var(b)
    if va == 0 or vb == 0:
        raise DegenerateSampleError("each sample needs nonzero variance")
    sa, sb = va / na, vb / nb
    t = (ma - mb) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    return t, t_sf_two_sided(t, df)


def welch_df(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    na, _, va = _mean_var([float(x) for x in sample_a])
    nb, _, vb = _mean_var([float(x) for x in sample_b])
    sa, sb = va / na, vb / nb
    return (sa + sb) ** 2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
