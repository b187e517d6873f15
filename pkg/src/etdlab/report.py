"""Markdown/CSV tables, SVG line charts and the output manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .harness import SCALAR_FIELDS, CellStats, SweepResult
from .spectral import KeyMatrixReport

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf"]


def fmt(x: float, sig: int = 4) -> str:
    if x is None:
        return "--"
    if isinstance(x, complex) or np.iscomplexobj(x):
        x = complex(x)
        return f"{fmt(x.real, sig)}{'+' if x.imag >= 0 else '-'}{fmt(abs(x.imag), sig)}i"
    x = float(x)
    if not math.isfinite(x):
        return str(x)
    if x != 0 and (abs(x) >= 1e4 or abs(x) < 1e-3):
        return f"{x:.{sig - 1}e}"
    return f"{x:.{sig}g}"


def _matrix_str(M: np.ndarray) -> str:
    M = np.atleast_2d(M)
    if M.size == 1:
        return fmt(M[0, 0])
    return "[" + "; ".join(", ".join(fmt(v) for v in row) for row in M) + "]"


def key_matrix_markdown(report: KeyMatrixReport) -> str:
    lines = [
        f"### Key matrices: {report.task_name}",
        "",
        f"d_mu = {_matrix_str(report.d_mu[None])}, f = {_matrix_str(report.f_vector[None])}",
        "",
        "| Method | Key matrix | det and eigenvalues | PD | -G Hurwitz | c_min |",
        "|---|---|---|---|---|---|",
    ]
    if report.c_min is None:
        cmin = "undefined"
    else:
        cmin = fmt(report.c_min) + (" (always PD)" if report.c_min < 0 else "")
    for name in report.matrix_names():
        M = report.matrix(name)
        eig = ", ".join(fmt(v) for v in report.eigenvalues[name])
        det = fmt(report.determinants[name])
        lines.append(
            f"| {name} | {_matrix_str(M)} | det={det}; {{{eig}}} | {'yes' if report.pd_flags[name] else 'no'} "
            f"| {'yes' if report.hurwitz[name] else 'no'} | {cmin if name.startswith('RETD') else '--'} |"
        )
    if report.a_etd.shape == (1, 1):
        b = float(report.b_coupling[0])
        x = np.array([1.0, -b])
        q = float(x @ report.g_cetd @ x)
        lines += ["", f"Quadratic form x^T G_CETD x at x = [1, {fmt(-b)}]: {fmt(q)}"]
    if report.c_min_note and report.c_min is None:
        lines += ["", f"c_min: {report.c_min_note}"]
    if report.m_matrix_certificate:
        lines += ["", "| c | max off-diag K | column sums | row sums | M-matrix certified |", "|---|---|---|---|---|"]
        for c, cert in report.m_matrix_certificate.items():
            lines.append(
                f"| {c:g} | {fmt(cert.max_offdiag)} | {_matrix_str(cert.column_sums[None])} "
                f"| {_matrix_str(cert.row_sums[None])} | {'yes' if cert.certified else 'no'} |"
            )
    return "\n".join(lines) + "\n"


def _tail_cell(c: CellStats) -> str:
    if c.is_div:
        return "Div."
    s = f"{fmt(c.tail_mean)} ± {fmt(c.tail_std, 3)}"
    if c.n_diverged:
        s += f" ({c.n_diverged}/{c.n_runs} div.)"
    return f"**{s}**" if c.bold else s


def _div_cell(c: CellStats) -> str:
    s = fmt(c.max_rmse)
    if c.n_diverged:
        s += f" ^Div. {c.n_diverged}/{c.n_runs}"
    return f"**{s}**" if c.bold else s


def _grid(result: SweepResult, render) -> str:
    algos = list(dict.fromkeys(c.algorithm for c in result.cells))
    lines = ["| Environment | " + " | ".join(algos) + " |", "|---" * (len(algos) + 1) + "|"]
    for env in result.envs():
        row = []
        for a in algos:
            cells = [c for c in result.cells if c.env == env and c.algorithm == a]
            row.append(render(cells[0]) if cells else "--")
        lines.append(f"| {env} | " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def tail_markdown(result: SweepResult) -> str:
    return "Tail-average RMSE (mean ± std over non-diverged runs)\n\n" + _grid(result, _tail_cell)


def divergence_markdown(result: SweepResult) -> str:
    return "Maximum RMSE across runs; ^Div. k/n marks diverged runs\n\n" + _grid(result, _div_cell)


def sweep_markdown(result: SweepResult) -> str:
    lines = ["| env | algorithm | alpha | c | tail mean | tail std | diverged | max RMSE |",
             "|---|---|---|---|---|---|---|---|"]
    for c in result.cells:
        lines.append(
            f"| {c.env} | {c.algorithm} | {c.alpha:g} | {c.c:g} | {fmt(c.tail_mean)} "
            f"| {fmt(c.tail_std)} | {c.n_diverged}/{c.n_runs} | {fmt(c.max_rmse)} |"
        )
    return "\n".join(lines) + "\n"


# -- CSV ----------------------------------------------------------------------


def sweep_to_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(SCALAR_FIELDS), lineterminator="\n")
    writer.writeheader()
    for row in result.rows():
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


_INT_FIELDS = {"n_runs", "n_diverged", "base_seed"}
_BOOL_FIELDS = {"is_div", "bold"}
_STR_FIELDS = {"env", "algorithm", "spec_hash"}


def sweep_from_csv(text: str) -> SweepResult:
    cells = []
    for row in csv.DictReader(io.StringIO(text)):
        kw = {}
        for k, v in row.items():
            if k in _INT_FIELDS:
                kw[k] = int(v)
            elif k in _BOOL_FIELDS:
                kw[k] = v == "True"
            elif k in _STR_FIELDS:
                kw[k] = v
            else:
                kw[k] = float(v)
        cells.append(CellStats(**kw))
    return SweepResult(cells)


def runs_to_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["env", "algorithm", "alpha", "c", "spec_hash", "seed", "diverged", "max_rmse", "tail_avg"])
    for c in result.cells:
        for r in c.runs or ():
            w.writerow([c.env, c.algorithm, repr(c.alpha), repr(c.c), c.spec_hash, r["seed"], r["diverged"],
                        repr(r["max_rmse"]), repr(r["tail_avg"])])
    return buf.getvalue()


def curves_to_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["env", "algorithm", "alpha", "c", "step", "mean", "std"])
    for c in result.cells:
        if c.curve_index is None:
            continue
        for i, m, s in zip(c.curve_index, c.curve_mean, c.curve_std):
            w.writerow([c.env, c.algorithm, repr(c.alpha), repr(c.c), int(i), repr(float(m)), repr(float(s))])
    return buf.getvalue()


# -- SVG ----------------------------------------------------------------------


def render_svg(x, means, labels, stds=None, log_y: bool | None = None, title: str = "",
               xlabel: str = "step", ylabel: str = "RMSE", width: int = 720, height: int = 440) -> str:
    """Line chart with optional ±1 std bands; pure text, no renderer needed."""
    means = [np.asarray(m, dtype=float) for m in means]
    if not means:
        raise ValueError("nothing to plot")
    x = np.asarray(x, dtype=float)
    if any(m.shape != x.shape for m in means):
        raise ValueError("all curves must have the same length as x")
    if len(labels) != len(means):
        raise ValueError("one label per curve")
    if stds is None:
        stds = [None] * len(means)
    stds = [None if s is None else np.asarray(s, dtype=float) for s in stds]

    lows = [m - s if s is not None else m for m, s in zip(means, stds)]
    highs = [m + s if s is not None else m for m, s in zip(means, stds)]
    finite = np.concatenate([v[np.isfinite(v)] for v in means])
    if finite.size == 0:
        raise ValueError("no finite values to plot")
    pos = finite[finite > 0]
    if log_y is None:
        log_y = bool(pos.size and pos.min() > 0 and pos.max() / pos.min() > 100)
    hi_vals = np.concatenate([v[np.isfinite(v)] for v in highs])
    lo_vals = np.concatenate([v[np.isfinite(v)] for v in lows])
    if log_y:
        floor = pos.min() if pos.size else 1e-12
        ymin, ymax = math.log10(floor), math.log10(max(hi_vals.max(), floor))
    else:
        ymin, ymax = min(0.0, lo_vals.min()), hi_vals.max()
    if ymax <= ymin:
        ymax = ymin + 1.0
    xmin, xmax = float(x.min()), float(x.max())
    if xmax <= xmin:
        xmax = xmin + 1.0

    ml, mr, mt, mb = 70, 170, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (v - xmin) / (xmax - xmin) * pw

    def py(v):
        if log_y:
            v = math.log10(max(v, 10.0**ymin))
        v = min(max(v, ymin), ymax)
        return mt + ph - (v - ymin) / (ymax - ymin) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f"<!-- etdlab {__version__} -->",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    for i in range(6):
        xv = xmin + i * (xmax - xmin) / 5
        out.append(f'<text x="{px(xv):.1f}" y="{mt + ph + 18}" text-anchor="middle" font-size="11">{fmt(xv, 3)}</text>')
        yv = ymin + i * (ymax - ymin) / 5
        label = fmt(10.0**yv, 2) if log_y else fmt(yv, 3)
        out.append(f'<text x="{ml - 6}" y="{mt + ph - i * ph / 5 + 4:.1f}" text-anchor="end" font-size="11">{label}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">{_esc(xlabel)}</text>')
    ylab = ylabel + (" (log)" if log_y else "")
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{_esc(ylab)}</text>')
    for i, (m, s, lab) in enumerate(zip(means, stds, labels)):
        color = PALETTE[i % len(PALETTE)]
        ok = np.isfinite(m)
        if s is not None:
            ok &= np.isfinite(s)
            upper = [f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], (m + s)[ok])]
            lower = [f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok][::-1], (m - s)[ok][::-1])]
            if upper:
                out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], m[ok]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 14 + 18 * i
        out.append(f'<line x1="{ml + pw + 12}" y1="{ly - 4}" x2="{ml + pw + 32}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 38}" y="{ly}" font-size="11">{_esc(lab)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def sweep_svg(result: SweepResult, label_by: str = "algorithm", title: str = "") -> str:
    xs, means, stds, labels = None, [], [], []
    for c in result.cells:
        if c.curve_mean is None or not np.isfinite(c.curve_mean).any() or c.is_div:
            continue
        xs = c.curve_index
        means.append(c.curve_mean)
        stds.append(c.curve_std)
        if label_by == "algorithm":
            labels.append(c.algorithm if c.algorithm != "RETD" else f"RETD(c={c.c:g})")
        else:
            labels.append(f"{label_by}={getattr(c, label_by):g}")
    if xs is None:
        raise ValueError("no plottable (non-diverged) cells")
    return render_svg(xs, means, labels, stds, title=title)


# -- manifest -----------------------------------------------------------------


class ReportBundle:
    """Writes files into one directory and records each of them in ``manifest.json``."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.entries: dict[str, dict] = {}
        self.specs: dict[str, dict] = {}

    def write(self, name: str, content: str, mirrors: str = "", spec_hashes=(), specs: dict | None = None) -> Path:
        path = self.out_dir / name
        path.write_text(content, encoding="utf-8")
        self.entries[name] = {
            "sha256": hashlib.sha256(content.encode()).hexdigest(),
            "mirrors": mirrors,
            "spec_hashes": sorted(set(spec_hashes)),
        }
        if specs:
            self.specs.update(specs)
        return path

    @property
    def files(self) -> list[str]:
        return list(self.entries)

    def finalize(self) -> Path:
        manifest = {"generator": f"etdlab {__version__}", "files": self.entries, "specs": self.specs}
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=_json_default), encoding="utf-8")
        return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))
