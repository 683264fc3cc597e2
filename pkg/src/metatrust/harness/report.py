"""Summary tables and static SVG charts from run artifacts.

Charts are written as plain SVG markup; no plotting library is involved.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

from metatrust.errors import ArtifactError
from metatrust.harness.runner import RUN_FILES, load_record, read_jsonl, write_summary_csv
from metatrust.metrics import final_return, summarize

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


@dataclass
class Panel:
    title: str
    ys: list


def _scale(lo, hi, a, b):
    if hi == lo:
        hi = lo + 1.0
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def dynamics_svg(rows: list[dict], title: str = "") -> str:
    """Three stacked panels (VPES, trust, LR scale) sharing the iteration axis."""
    its = [r["iteration"] for r in rows]
    panels = [
        Panel("VPES", [r["vpes"] for r in rows]),
        Panel("trust", [r["tau"] for r in rows]),
        Panel("LR scale", [r["scale"] for r in rows]),
    ]
    width, ph, left, right, top, gap = 640, 140, 70, 20, 30, 30
    height = top + len(panels) * (ph + gap) + 20
    lo_x, hi_x = (min(its), max(its)) if its else (0, 1)
    sx = _scale(lo_x, hi_x, left, width - right)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>',
    ]
    for k, panel in enumerate(panels):
        y0 = top + k * (ph + gap)
        ys = [v for v in panel.ys if v is not None]
        parts.append(f'<g class="panel" data-series="{panel.title}">')
        parts.append(f'<rect x="{left}" y="{y0}" width="{width - left - right}" height="{ph}" fill="none" stroke="#999"/>')
        parts.append(f'<text x="6" y="{y0 + ph / 2:.1f}">{escape(panel.title)}</text>')
        if ys:
            lo, hi = min(ys), max(ys)
            sy = _scale(lo, hi, y0 + ph - 4, y0 + 4)
            parts.append(f'<text x="{left - 4}" y="{y0 + 10}" text-anchor="end">{_fmt(hi)}</text>')
            parts.append(f'<text x="{left - 4}" y="{y0 + ph}" text-anchor="end">{_fmt(lo)}</text>')
            pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(its, panel.ys) if y is not None)
            parts.append(f'<polyline class="series" fill="none" stroke="{PALETTE[k]}" stroke-width="1.5" points="{pts}"/>')
        else:
            parts.append(f'<text x="{left + 8}" y="{y0 + ph / 2:.1f}" fill="#666">not tracked by this controller</text>')
        parts.append("</g>")
    y_axis = top + len(panels) * (ph + gap) - gap + 14
    parts.append(f'<text x="{left}" y="{y_axis}">{lo_x}</text>')
    parts.append(f'<text x="{width - right}" y="{y_axis}" text-anchor="end">{hi_x}  (iteration)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def per_seed_bars_svg(groups: dict[str, list[tuple[int, float]]], title: str = "Final return per seed") -> str:
    """Grouped bars: one group per variant, one bar per seed."""
    values = [v for bars in groups.values() for _, v in bars]
    lo, hi = min(values + [0.0]), max(values + [0.0])
    n_bars = sum(len(b) for b in groups.values())
    bar_w, group_gap, left, top, ph = 18, 24, 70, 30, 260
    width = left + n_bars * bar_w + (len(groups) + 1) * group_gap
    height = top + ph + 50
    sy = _scale(lo, hi, top + ph, top)
    zero = sy(0.0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>',
        f'<line x1="{left}" y1="{zero:.2f}" x2="{width}" y2="{zero:.2f}" stroke="#333"/>',
        f'<text x="{left - 4}" y="{top + 8}" text-anchor="end">{_fmt(hi)}</text>',
        f'<text x="{left - 4}" y="{top + ph}" text-anchor="end">{_fmt(lo)}</text>',
    ]
    x = left + group_gap
    for k, (variant, bars) in enumerate(groups.items()):
        parts.append(f'<g class="group" data-variant="{escape(variant)}">')
        x_start = x
        for seed, v in bars:
            y = sy(v)
            parts.append(
                f'<rect class="bar" x="{x}" y="{min(y, zero):.2f}" width="{bar_w - 2}" '
                f'height="{abs(zero - y):.2f}" fill="{PALETTE[k % len(PALETTE)]}">'
                f"<title>{escape(variant)} seed {seed}: {v:.3f}</title></rect>"
            )
            x += bar_w
        parts.append(f'<text x="{(x_start + x) / 2:.1f}" y="{top + ph + 20}" text-anchor="middle">{escape(variant)}</text>')
        parts.append("</g>")
        x += group_gap
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _check_run(d: Path) -> list[str]:
    return [str(d / f) for f in RUN_FILES if not (d / f).exists()]


def _variant_order(exp: Path, found: list[str]) -> list[str]:
    cfg_path = exp / "experiment.json"
    if cfg_path.exists():
        order = [v["kind"] for v in json.loads(cfg_path.read_text())["variants"]]
        return [v for v in order if v in found] + sorted(v for v in found if v not in order)
    return sorted(found)


def emit_report(path: str | Path) -> list[Path]:
    """Write charts, ``comparison.csv`` and ``digest.txt`` for a run or experiment directory."""
    path = Path(path)
    if (path / "meta.json").exists() or (path / "iterations.log").exists():
        run_dirs = [path]
        exp = path
    else:
        run_dirs = sorted(p for p in path.glob("*/seed*") if p.is_dir())
        exp = path
    if not run_dirs:
        raise ArtifactError(f"{path}: no run directories found")
    missing = [m for d in run_dirs for m in _check_run(d)]
    if missing:
        raise ArtifactError("missing artifacts:\n  " + "\n  ".join(missing))

    written = []
    plots = exp / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    records = {}
    for d in run_dirs:
        rec = load_record(d)
        records.setdefault(rec.variant, []).append(rec)
        rows = read_jsonl(d / "iterations.log")
        svg = dynamics_svg(rows, f"{rec.variant} seed {rec.seed} ({rec.env})")
        out = plots / f"dynamics_{rec.variant}_seed{rec.seed}.svg"
        out.write_text(svg)
        written.append(out)

    order = _variant_order(exp, list(records))
    tail = 0.1
    cfg_path = exp / "experiment.json"
    if cfg_path.exists():
        tail = json.loads(cfg_path.read_text())["eval"]["tail_fraction"]
    for v in order:
        records[v].sort(key=lambda r: r.seed)
    summaries = [summarize(v, records[v], tail) for v in order]
    csv_path = exp / "comparison.csv"
    write_summary_csv(csv_path, summaries)
    written.append(csv_path)

    groups = {v: [(r.seed, final_return(r, tail)) for r in records[v]] for v in order}
    bars = plots / "per_seed_final.svg"
    bars.write_text(per_seed_bars_svg(groups))
    written.append(bars)

    lines = [f"report for {exp}", ""]
    header = f"{'variant':<22}{'final':>12}{'std':>12}{'cvar20':>12}{'late_fail':>11}{'seeds':>7}"
    lines.append(header)
    for s in summaries:
        lines.append(
            f"{s.variant:<22}{s.mean_final_return:>12.3f}{s.std_final_return:>12.3f}"
            f"{s.cvar20:>12.3f}{s.late_failure_rate:>11.2f}{s.n_seeds:>7d}"
        )
    diverged = [f"{r.variant}/seed{r.seed}" for v in order for r in records[v] if r.diverged]
    if diverged:
        lines += ["", "diverged: " + ", ".join(diverged)]
    digest = exp / "digest.txt"
    digest.write_text("\n".join(lines) + "\n")
    written.append(digest)
    return written
