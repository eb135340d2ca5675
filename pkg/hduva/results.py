"""
Result tables: mean +- sd rows rendered at three significant digits, and CSV
output.
"""
import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class ResultRow:
    """One table row: a label and the per-repeat values behind it."""
    label: str
    values: list[float] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else float('nan')

    @property
    def sd(self) -> float:
        """Sample standard deviation over exactly `n` values; 0 for n == 1."""
        if len(self.values) < 2:
            return 0.0
        return float(np.std(self.values, ddof=1))


def fmt3(value: float) -> str:
    return f"{value:.3g}"


def render_table(rows: list[ResultRow], title: str = '', label_header: str = 'domain') -> str:
    """Plain-text table, one row per ResultRow, values as `mean ± sd`."""
    width = max([len(label_header)] + [len(r.label) for r in rows])
    lines = [title] if title else []
    lines.append(f"{label_header:<{width}}  accuracy          n")
    for row in rows:
        cell = f"{fmt3(row.mean)} ± {fmt3(row.sd)}"
        lines.append(f"{row.label:<{width}}  {cell:<16}  {row.n}")
    return "\n".join(lines) + "\n"


def table_csv(rows: list[ResultRow], label_header: str = 'domain') -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    extra_keys = sorted({k for r in rows for k in r.extra})
    writer.writerow([label_header, 'mean', 'sd', 'n', *extra_keys])
    for row in rows:
        writer.writerow([row.label, repr(row.mean), repr(row.sd), row.n,
                         *(row.extra.get(k, '') for k in extra_keys)])
    return buf.getvalue()


def write_table(rows: list[ResultRow], path, label_header: str = 'domain'):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(table_csv(rows, label_header))
