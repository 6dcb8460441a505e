"""Statistics tables and accuracy-distribution plots from run records.

Everything rendered here is a pure function of the records (plus explicit
reference values), so identical inputs produce byte-identical output. The
plot is a jittered strip chart with quantile markers; no density smoothing,
no randomness: point offsets derive from the point's index alone.
"""

from __future__ import annotations

import math

from .formalizations import TABLE_ORDER
from .sweep import DistributionStats, distribution_stats, percentile

TABLE_KINDS = tuple(k.value for k in TABLE_ORDER)


def collect_accuracies(records) -> dict[str, list[float]]:
    """Best-validation accuracies grouped by kind, in record order; error
    records are skipped.
    """
    groups: dict[str, list[float]] = {}
    for record in records:
        if record.error is not None:
            continue
        groups.setdefault(record.kind, []).append(record.best_val_acc)
    return groups


def _ordered_kinds(groups) -> list[str]:
    known = [k for k in TABLE_KINDS if k in groups]
    extras = sorted(k for k in groups if k not in TABLE_KINDS)
    return known + extras


def _fmt(value, precision: int) -> str:
    if value is None:
        return "n/a"
    return f"{value:.{precision}f}"


def render_table(records, test_accuracies: dict | None = None,
                 precision: int = 3) -> tuple[str, str]:
    """Render one row per formalization. Returns (plain_text, csv); the test
    column appears only when `test_accuracies` is given.
    """
    groups = collect_accuracies(records)
    if not groups:
        raise ValueError("no usable records to tabulate")
    kinds = _ordered_kinds(groups)
    with_test = test_accuracies is not None

    header = ["formalization", "n"]
    if with_test:
        header.append("test_acc")
    header += ["std", "kurt", "median", "p75", "max"]

    rows = []
    for kind in kinds:
        accs = groups[kind]
        if len(accs) < 2:
            raise ValueError(f"group {kind!r} needs at least two records")
        stats = distribution_stats(accs)
        row = [kind, str(stats.count)]
        if with_test:
            row.append(_fmt(test_accuracies.get(kind), precision))
        row += [_fmt(stats.std, precision), _fmt(stats.excess_kurtosis, precision),
                _fmt(stats.median, precision), _fmt(stats.p75, precision),
                _fmt(stats.maximum, precision)]
        rows.append(row)

    widths = [max(len(header[i]), *(len(r[i]) for r in rows))
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    text = "\n".join(lines) + "\n"

    csv_lines = [",".join(header)]
    csv_lines += [",".join(row) for row in rows]
    csv = "\n".join(csv_lines) + "\n"
    return text, csv


# -- plot ----------------------------------------------------------------------

_W, _H = 760, 420
_LEFT, _RIGHT, _TOP, _BOTTOM = 56, 16, 24, 56


def _y(acc: float) -> float:
    usable = _H - _TOP - _BOTTOM
    return _TOP + (1.0 - acc) * usable


def _jitter(index: int, spread: float) -> float:
    # low-discrepancy offset: golden-ratio rotation of the point index
    frac = (index * 0.6180339887498949) % 1.0
    return (frac - 0.5) * spread


def render_plot(records, baseline: float | None = None,
                human: float | None = None, precision: int = 3) -> str:
    """SVG strip plot: one column per formalization in table order, points
    jittered by index, a median segment, and a p75 text label per column.
    Reference lines are drawn for `baseline` and `human` when given.
    """
    groups = collect_accuracies(records)
    if not groups:
        raise ValueError("no usable records to plot")
    kinds = _ordered_kinds(groups)
    col_w = (_W - _LEFT - _RIGHT) / len(kinds)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="11">',
        "<desc>Validation-accuracy strip plot. Quantiles use linear rank "
        "interpolation (rank = 1 + (n-1)q); point jitter is the golden-ratio "
        "rotation of the point index, so output is deterministic.</desc>",
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
    ]

    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = _y(tick)
        parts.append(f'<line x1="{_LEFT}" y1="{y:.2f}" x2="{_W - _RIGHT}" '
                     f'y2="{y:.2f}" stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{_LEFT - 8}" y="{y + 4:.2f}" '
                     f'text-anchor="end">{tick:.2f}</text>')

    for label, value, color in (("baseline", baseline, "#b22222"),
                                ("human", human, "#228b22")):
        if value is None:
            continue
        y = _y(value)
        parts.append(f'<line x1="{_LEFT}" y1="{y:.2f}" x2="{_W - _RIGHT}" '
                     f'y2="{y:.2f}" stroke="{color}" stroke-width="1" '
                     'stroke-dasharray="6,3"/>')
        parts.append(f'<text x="{_W - _RIGHT - 2}" y="{y - 4:.2f}" '
                     f'text-anchor="end" fill="{color}">{label} '
                     f'{value:.{precision}f}</text>')

    for col, kind in enumerate(kinds):
        accs = groups[kind]
        cx = _LEFT + (col + 0.5) * col_w
        for i, acc in enumerate(accs):
            x = cx + _jitter(i, col_w * 0.55)
            parts.append(f'<circle cx="{x:.2f}" cy="{_y(acc):.2f}" r="3" '
                         'fill="#3465a4" fill-opacity="0.65"/>')
        med = percentile(accs, 0.5)
        p75 = percentile(accs, 0.75)
        ym = _y(med)
        parts.append(f'<line x1="{cx - col_w * 0.38:.2f}" y1="{ym:.2f}" '
                     f'x2="{cx + col_w * 0.38:.2f}" y2="{ym:.2f}" '
                     'stroke="#000000" stroke-width="2"/>')
        parts.append(f'<text x="{cx:.2f}" y="{_y(p75) - 6:.2f}" '
                     f'text-anchor="middle">p75 {p75:.{precision}f}</text>')
        parts.append(f'<text x="{cx:.2f}" y="{ym + 14:.2f}" '
                     f'text-anchor="middle">med {med:.{precision}f}</text>')
        parts.append(f'<text x="{cx:.2f}" y="{_H - _BOTTOM + 18}" '
                     f'text-anchor="middle">{kind}</text>')
        parts.append(f'<text x="{cx:.2f}" y="{_H - _BOTTOM + 32}" '
                     f'text-anchor="middle">n={len(accs)}</text>')

    parts.append(f'<line x1="{_LEFT}" y1="{_TOP}" x2="{_LEFT}" '
                 f'y2="{_H - _BOTTOM}" stroke="#000000" stroke-width="1"/>')
    parts.append('<text x="14" y="%.2f" transform="rotate(-90 14 %.2f)" '
                 'text-anchor="middle">validation accuracy</text>'
                 % (_H / 2, _H / 2))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(records, table_path: str | None = None,
                 csv_path: str | None = None, plot_path: str | None = None,
                 test_accuracies: dict | None = None,
                 baseline: float | None = None,
                 human: float | None = None, precision: int = 3) -> dict:
    """Render and write the requested artifacts; returns the rendered strings."""
    out = {}
    text, csv = render_table(records, test_accuracies, precision)
    out["text"] = text
    out["csv"] = csv
    if table_path is not None:
        with open(table_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(csv)
    if plot_path is not None:
        svg = render_plot(records, baseline, human, precision)
        out["svg"] = svg
        with open(plot_path, "w", encoding="utf-8") as fh:
            fh.write(svg)
    return out
