"""CSV and JSON emitters/loaders for sweep, transfer and defence reports."""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pandas as pd

from ..errors import ConfigurationError
from ..schema.harness import (
    DefenceTable,
    Provenance,
    SweepCell,
    SweepReport,
    TransferCell,
    TransferReport,
)
from ..schema.metrics import METRIC_NAMES, DefenceReport, MetricBundle, MetricDelta

logger = logging.getLogger(__name__)

Report = Union[SweepReport, TransferReport, DefenceTable]
Rows = List[List[str]]

PROVENANCE_FIELDS = ("seed", "config_hash", "snippet_file", "snippet_digest", "error")
CELL_ROWS = METRIC_NAMES + ("n_examples",) + PROVENANCE_FIELDS
DEFENCE_SECTIONS = ("attacked", "clean", "alpha", "alpha_pct")
TABLE_PROVENANCE = ("model",) + tuple(f for f in PROVENANCE_FIELDS if f != "error")
NOTES = "notes"


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _num(text: str) -> Optional[float]:
    return None if text == "" else float(text)


def _cell_field(metrics: Optional[MetricBundle], provenance: Provenance, name: str) -> Any:
    if name in PROVENANCE_FIELDS:
        return getattr(provenance, name)
    return getattr(metrics, name) if metrics is not None else None


def _notes_rows(notes: List[str], width: int) -> Rows:
    """`notes,<i>,<text>` rows padded to the table width"""
    return [[NOTES, str(i), text] + [""] * max(0, width - 3) for i, text in enumerate(notes)]


def _split_notes(rows: Rows) -> Tuple[Rows, List[str]]:
    notes = sorted((int(r[1]), r[2]) for r in rows if r[0] == NOTES)
    return [r for r in rows if r[0] != NOTES], [text for _, text in notes]


def _parse_cell(fields: Dict[str, str]) -> Tuple[Optional[MetricBundle], Provenance]:
    metrics = None
    if fields.get("empty_rate", "") != "" and fields.get("asl", "") != "":
        n = fields.get("n_examples", "")
        metrics = MetricBundle(
            **{m: _num(fields.get(m, "")) for m in METRIC_NAMES},
            n_examples=int(float(n)) if n else None,
        )
    seed = fields.get("seed", "")
    provenance = Provenance(
        seed=int(float(seed)) if seed else None,
        **{k: (fields.get(k) or None) for k in PROVENANCE_FIELDS if k != "seed"},
    )
    return metrics, provenance


# -- table layouts -----------------------------------------------------------

def sweep_table(report: SweepReport) -> Tuple[List[str], Rows]:
    header = [report.parameter, "series", *[_fmt(float(v)) for v in report.values]]
    rows: Rows = []
    for name in CELL_ROWS:
        for series in report.series():
            row = [name, series]
            for column in range(len(report.values)):
                cell = report.cell(series, column)
                row.append(_fmt(_cell_field(cell.metrics, cell.provenance, name)) if cell else "")
            rows.append(row)
    rows += _notes_rows(report.notes, len(header))
    return header, rows


def transfer_table(report: TransferReport) -> Tuple[List[str], Rows]:
    pairs = [(s, v) for s in report.surrogates for v in report.victims]
    header = ["attack", "metric", *[f"{s}|{v}" for s, v in pairs]]
    attacks = list(dict.fromkeys(c.attack for c in report.cells))
    rows: Rows = []
    for attack in attacks:
        for name in CELL_ROWS:
            row = [attack, name]
            for s, v in pairs:
                cell = report.cell(attack, s, v)
                row.append(_fmt(_cell_field(cell.metrics, cell.provenance, name)) if cell else "")
            rows.append(row)
    rows += _notes_rows(report.notes, len(header))
    return header, rows


def _section_value(report: DefenceReport, section: str, metric: str) -> Any:
    if section == "alpha_pct":
        return report.alpha_pct.get(metric)
    source = {"attacked": report.attacked, "clean": report.clean, "alpha": report.alpha_d}[section]
    return getattr(source, metric) if source is not None else None


def defence_table(table: DefenceTable) -> Tuple[List[str], Rows]:
    header = ["section", "metric", *[r.defence for r in table.reports]]
    rows: Rows = []
    for section in DEFENCE_SECTIONS:
        for metric in METRIC_NAMES:
            rows.append([section, metric, *[_fmt(_section_value(r, section, metric)) for r in table.reports]])
    padding = [""] * max(0, len(table.reports) - 1)
    for field in TABLE_PROVENANCE:
        value = table.model if field == "model" else getattr(table.provenance, field)
        rows.append(["provenance", field, _fmt(value), *padding])
    rows.append(["provenance", "error", *[_fmt(r.error) for r in table.reports]])
    rows += _notes_rows(table.notes, len(header))
    return header, rows


# -- parsing -----------------------------------------------------------------

def parse_sweep(header: List[str], rows: Rows) -> SweepReport:
    rows, notes = _split_notes(rows)
    values = [float(v) for v in header[2:]]
    fields: Dict[str, Dict[int, Dict[str, str]]] = {}
    for name, series, *cells in rows:
        per_column = fields.setdefault(series, {})
        for column, text in enumerate(cells):
            per_column.setdefault(column, {})[name] = text

    cells: List[SweepCell] = []
    for series, per_column in fields.items():
        model = series[len("baseline "):] if series.startswith("baseline ") else series
        for column in range(len(values)):
            metrics, provenance = _parse_cell(per_column.get(column, {}))
            cells.append(SweepCell(series=series, model=model, column=column, value=values[column],
                                   metrics=metrics, provenance=provenance))
    return SweepReport(parameter=header[0], values=values, cells=cells, notes=notes)


def parse_transfer(header: List[str], rows: Rows) -> TransferReport:
    rows, notes = _split_notes(rows)
    pairs = [tuple(h.split("|", 1)) for h in header[2:]]
    fields: Dict[str, Dict[int, Dict[str, str]]] = {}
    for attack, name, *cells in rows:
        per_pair = fields.setdefault(attack, {})
        for index, text in enumerate(cells):
            per_pair.setdefault(index, {})[name] = text

    cells: List[TransferCell] = []
    for attack, per_pair in fields.items():
        for index, (s, v) in enumerate(pairs):
            metrics, provenance = _parse_cell(per_pair.get(index, {}))
            cells.append(TransferCell(attack=attack, surrogate=s, victim=v, metrics=metrics, provenance=provenance))

    objective = next((a for a in fields if a != "no_attack"), "complete")
    return TransferReport(
        surrogates=list(dict.fromkeys(s for s, _ in pairs)),
        victims=list(dict.fromkeys(v for _, v in pairs)),
        objective=objective,
        cells=cells,
        notes=notes,
    )


def parse_defence(header: List[str], rows: Rows) -> DefenceTable:
    rows, notes = _split_notes(rows)
    labels = header[2:]
    values: Dict[Tuple[str, str], List[str]] = {(r[0], r[1]): r[2:] for r in rows}

    def column(section: str, index: int) -> Dict[str, Optional[float]]:
        return {m: _num(values.get((section, m), [""] * len(labels))[index]) for m in METRIC_NAMES}

    alpha_base = MetricDelta(**column("alpha", 0)) if labels else None
    reports = []
    for index, label in enumerate(labels):
        error = values.get(("provenance", "error"), [""] * len(labels))[index] or None
        attacked, clean = column("attacked", index), column("clean", index)
        reports.append(DefenceReport(
            defence=label,
            attacked=MetricBundle(**attacked) if attacked["empty_rate"] is not None else None,
            clean=MetricBundle(**clean) if clean["empty_rate"] is not None else None,
            alpha_base=alpha_base,
            alpha_d=MetricDelta(**column("alpha", index)) if column("alpha", index)["empty_rate"] is not None else None,
            alpha_pct=column("alpha_pct", index),
            error=error,
        ))
    table_fields = {f: (values.get(("provenance", f)) or [""])[0] or None for f in TABLE_PROVENANCE}
    seed = table_fields.pop("seed")
    return DefenceTable(
        model=table_fields.pop("model"),
        reports=reports,
        provenance=Provenance(seed=int(float(seed)) if seed else None, **table_fields),
        notes=notes,
    )


# -- public API --------------------------------------------------------------

def report_table(report: Report) -> Tuple[List[str], Rows]:
    if isinstance(report, SweepReport):
        return sweep_table(report)
    if isinstance(report, TransferReport):
        return transfer_table(report)
    if isinstance(report, DefenceTable):
        return defence_table(report)
    raise ConfigurationError(f"cannot tabulate {type(report).__name__}")


def emit_report(report: Report, path: Union[str, Path], fmt: Optional[str] = None) -> Path:
    """Write report as csv or json (default: from the file suffix)"""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".") or "csv").lower()
    path.parent.mkdir(parents=True, exist_ok=True)

    if fmt == "json":
        path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    elif fmt == "csv":
        header, rows = report_table(report)
        pd.DataFrame([header, *rows]).to_csv(path, index=False, header=False, lineterminator="\n")
    else:
        raise ConfigurationError(f"unknown report format '{fmt}' (csv or json)")

    logger.info(f"Report written: {path}")
    return path


def load_report(path: Union[str, Path]) -> Report:
    path = Path(path)
    if path.suffix.lower() == ".json":
        payload = json.loads(path.read_text(encoding="utf-8"))
        if "parameter" in payload:
            return SweepReport(**payload)
        if "surrogates" in payload:
            return TransferReport(**payload)
        return DefenceTable(**payload)

    table = pd.read_csv(path, header=None, dtype=str, keep_default_na=False)
    header = [str(h) for h in table.iloc[0].tolist()]
    rows = [[str(v) for v in row] for row in table.iloc[1:].values.tolist()]
    if header[:2] == ["attack", "metric"]:
        return parse_transfer(header, rows)
    if header[:2] == ["section", "metric"]:
        return parse_defence(header, rows)
    return parse_sweep(header, rows)
