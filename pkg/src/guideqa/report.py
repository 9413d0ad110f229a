"""Mean-score report tables over judged datasets.

When the grouping includes `metric`, the table pivots metrics into columns
(seven metric columns plus a trailing mean) and sorts rows by that mean,
highest first. Cells with no records render as an em-dash placeholder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .corpus import QAPair
from .judge import METRIC_IDS, ScoreRecord, aggregate

ABSENT = "—"


@dataclass
class ReportTable:
    row_facets: list[str]
    columns: list[str]  # metric ids, or empty when metric is not grouped
    rows: list[dict]  # {facet values..., cells: {column: float|None}, mean: float}

    def header(self) -> list[str]:
        return list(self.row_facets) + list(self.columns) + ["mean"]


def build_report(
    records: list[ScoreRecord],
    group_by: list[str],
    pairs: Optional[dict[str, QAPair]] = None,
) -> ReportTable:
    row_facets = [f for f in group_by if f != "metric"]
    pivot_metrics = "metric" in group_by
    columns = list(METRIC_IDS) if pivot_metrics else []

    row_means = aggregate(records, row_facets, pairs)
    cell_means = aggregate(records, row_facets + ["metric"], pairs) if pivot_metrics else {}

    rows = []
    for key in row_means:
        cells = {}
        if pivot_metrics:
            for metric in columns:
                cells[metric] = cell_means.get(key + (metric,))
        row = {name: value for name, value in zip(row_facets, key)}
        row["cells"] = cells
        row["mean"] = row_means[key]
        rows.append(row)
    rows.sort(key=lambda r: (-r["mean"], tuple(str(r[f]) for f in row_facets)))
    return ReportTable(row_facets=row_facets, columns=columns, rows=rows)


def _fmt(value: Optional[float]) -> str:
    return ABSENT if value is None else f"{value:.2f}"


def table_to_csv(table: ReportTable) -> str:
    lines = [",".join(table.header())]
    for row in table.rows:
        cells = [str(row[f]) for f in table.row_facets]
        cells += [_fmt(row["cells"].get(c)) for c in table.columns]
        cells.append(_fmt(row["mean"]))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def table_to_text(table: ReportTable) -> str:
    header = table.header()
    body = []
    for row in table.rows:
        cells = [str(row[f]) for f in table.row_facets]
        cells += [_fmt(row["cells"].get(c)) for c in table.columns]
        cells.append(_fmt(row["mean"]))
        body.append(cells)
    widths = [max(len(header[i]), *(len(r[i]) for r in body)) if body else len(header[i]) for i in range(len(header))]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    out.append("  ".join("-" * w for w in widths))
    for cells in body:
        out.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(out) + "\n"
