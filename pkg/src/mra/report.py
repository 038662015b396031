"""Per-iteration CSV logs, four-panel plots and first-feasible summaries."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .harness import POINTS, IterationRecord, PointMetrics, best_to_date, first_feasible

LOG_VERSION = 1
FIELDS = ("f", "subopt", "rp", "rc", "relinf", "domfeas")
HEADER = ["k", "g_lambda"] + [f"{p}_{f}" for p in POINTS for f in FIELDS]
_VERSION_LINE = f"# mra-log v{LOG_VERSION}"
COLORS = dict(zip(POINTS, ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")))


class LogFormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return repr(float(v))


def _row(rec: IterationRecord) -> list[str]:
    row = [str(rec.k), _fmt(rec.g_lambda)]
    for p in POINTS:
        pm = rec.points.get(p, PointMetrics.missing())
        row += [_fmt(getattr(pm, f)) for f in FIELDS]
    return row


def format_csv(records: list[IterationRecord], meta: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(_VERSION_LINE + "\n")
    for key, val in sorted((meta or {}).items()):
        buf.write(f"# {key}: {val}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for rec in records:
        w.writerow(_row(rec))
    return buf.getvalue()


def write_csv(records: list[IterationRecord], path: str | Path, meta: dict | None = None) -> None:
    Path(path).write_text(format_csv(records, meta))


class CsvLogWriter:
    """Appends one row per record so a crashed run still leaves its partial log."""

    def __init__(self, path: str | Path, meta: dict | None = None):
        self.path = Path(path)
        self.path.write_text(format_csv([], meta))

    def __call__(self, rec: IterationRecord) -> None:
        with self.path.open("a") as fh:
            csv.writer(fh, lineterminator="\n").writerow(_row(rec))


def parse_csv(text: str) -> tuple[list[IterationRecord], dict[str, str]]:
    lines = text.splitlines()
    if not lines or lines[0] != _VERSION_LINE:
        raise LogFormatError(f"expected first line {_VERSION_LINE!r}")
    meta = {}
    body = []
    for line in lines[1:]:
        if line.startswith("# "):
            key, _, val = line[2:].partition(": ")
            meta[key] = val
        else:
            body.append(line)
    rows = list(csv.reader(body))
    if not rows or rows[0] != HEADER:
        raise LogFormatError("unexpected header row")
    records = []
    for row in rows[1:]:
        if len(row) != len(HEADER):
            raise LogFormatError(f"row of {len(row)} fields, expected {len(HEADER)}")
        vals = [float(v) for v in row[2:]]
        pts = {}
        for i, p in enumerate(POINTS):
            pts[p] = PointMetrics(*vals[i * len(FIELDS):(i + 1) * len(FIELDS)])
        records.append(IterationRecord(int(row[0]), float(row[1]), pts))
    return records, meta


def read_csv(path: str | Path) -> tuple[list[IterationRecord], dict[str, str]]:
    return parse_csv(Path(path).read_text())


def _tracked(records, point) -> bool:
    return any(not math.isnan(r.points[point].rp) for r in records)


def summary_rows(records: list[IterationRecord], threshold: float) -> list[dict]:
    out = []
    for p in POINTS:
        if not _tracked(records, p):
            continue
        k = first_feasible(records, p, threshold)
        sub = records[k - 1].points[p].subopt if k is not None else float("nan")
        best = best_to_date(records, p, threshold)[-1] if records else float("nan")
        out.append({"point": p, "first_feasible": k, "subopt_at_first": sub, "best_feasible_subopt": best})
    return out


def summary_text(records: list[IterationRecord], threshold: float) -> str:
    lines = []
    for row in summary_rows(records, threshold):
        if row["first_feasible"] is None:
            lines.append(f"{row['point']}: never feasible in {len(records)} iterations")
        else:
            lines.append(f"{row['point']}: first feasible at iteration {row['first_feasible']} "
                         f"with {100 * row['subopt_at_first']:.2f}% suboptimality")
    return "\n".join(lines) + "\n"


def plot(records: list[IterationRecord], path: str | Path, threshold: float, title: str = "") -> list[str]:
    """Four panels: suboptimality, primal residual, relative residuals, best-to-date feasible suboptimality.

    Returns notes for panels or series left empty.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    notes = []
    ks = [r.k for r in records]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    panels = [
        (axes[0, 0], "suboptimality |f - f*| / |f*|", lambda r, p: abs(r.points[p].subopt)),
        (axes[0, 1], "primal residual r_p", lambda r, p: r.points[p].rp),
        (axes[1, 0], "relative infeasibility", lambda r, p: r.points[p].relinf),
    ]
    for ax, label, get in panels:
        drawn = False
        for p in POINTS:
            if not _tracked(records, p):
                continue
            ys = [get(r, p) for r in records]
            if all(not math.isfinite(v) or v <= 0 for v in ys):
                continue
            ys = [v if math.isfinite(v) and v > 0 else float("nan") for v in ys]
            ax.semilogy(ks, ys, label=p, color=COLORS[p])
            drawn = True
        ax.set_title(label)
        ax.set_xlabel("iteration")
        if drawn:
            ax.legend(fontsize=8)
        else:
            ax.text(0.5, 0.5, "no data", ha="center", transform=ax.transAxes)
            notes.append(f"panel '{label}' empty")
    ax = axes[1, 1]
    drawn = False
    for p in POINTS:
        if not _tracked(records, p):
            continue
        best = best_to_date(records, p, threshold)
        if all(math.isnan(v) for v in best):
            notes.append(f"{p}: no feasible iterate")
            continue
        ax.semilogy(ks, [abs(v) if v != 0 else float("nan") for v in best], label=p, color=COLORS[p])
        drawn = True
    ax.set_title("best-to-date feasible suboptimality")
    ax.set_xlabel("iteration")
    if drawn:
        ax.legend(fontsize=8)
    else:
        ax.text(0.5, 0.5, "no feasible iterate", ha="center", transform=ax.transAxes)
        notes.append("panel 'best-to-date' empty")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return notes


def report(records: list[IterationRecord], out_dir: str | Path, threshold: float, title: str = "") -> dict:
    """Write ``log.csv``, ``summary.txt`` and ``panels.png`` into ``out_dir``."""
    if not records:
        raise ValueError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(records, out / "log.csv")
    text = summary_text(records, threshold)
    notes = plot(records, out / "panels.png", threshold, title)
    if notes:
        text += "".join(f"note: {n}\n" for n in notes)
    (out / "summary.txt").write_text(text)
    return {"summary": text, "notes": notes}
