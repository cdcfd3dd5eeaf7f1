"""Per-run summaries, CSV tables and SVG line charts.

Scaling efficiency is busy unit-seconds divided by provisioned
unit-seconds: the share of paid-for capacity that actually served work.
Percentiles use the nearest-rank rule (no interpolation).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

CSV_HEADER = ["policy", "interval_start", "util_mean", "util_std", "rt_mean", "rt_p95", "scale_eff"]

METRICS = {
    "utilization": ("util_mean", "Resource utilization", "mean node utilization (fraction)"),
    "response_time": ("rt_mean", "Response time", "mean response time (s)"),
    "scaling_efficiency": ("scale_eff", "Scaling efficiency", "busy / provisioned unit-seconds"),
}

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


class ConservationError(RuntimeError):
    pass


def nearest_rank(values: Sequence[float], pct: float) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return 0.0
    rank = max(1, math.ceil(pct / 100.0 * v.size))
    return float(v[rank - 1])


@dataclass
class RunSummary:
    policy: str
    interval_start: np.ndarray
    util_mean: np.ndarray
    util_std: np.ndarray
    rt_mean: np.ndarray
    rt_p95: np.ndarray
    scale_eff: np.ndarray
    submitted: int = 0
    completed: int = 0
    rejected: int = 0
    provisioned_unit_seconds: float = 0.0
    busy_unit_seconds: float = 0.0
    cost: float = 0.0
    response_time_mean: float = 0.0
    response_time_p95: float = 0.0
    util_variance: float = 0.0  # cross-node variance, averaged over intervals

    @property
    def n_intervals(self) -> int:
        return len(self.interval_start)

    @property
    def scaling_efficiency(self) -> float:
        if self.provisioned_unit_seconds <= 0:
            return 0.0
        return self.busy_unit_seconds / self.provisioned_unit_seconds

    def headline(self) -> dict:
        return {
            "policy": self.policy,
            "rt_mean": self.response_time_mean,
            "rt_p95": self.response_time_p95,
            "util_mean": float(self.util_mean.mean()) if self.n_intervals else 0.0,
            "util_var": self.util_variance,
            "scale_eff": self.scaling_efficiency,
            "completed": self.completed,
            "rejected": self.rejected,
            "cost": self.cost,
        }


def check_conservation(sample) -> None:
    held = sample.completed + sample.queued + sample.in_service + sample.rejected
    if sample.submitted != held:
        raise ConservationError(
            f"t={sample.clock}: submitted {sample.submitted} != completed {sample.completed}"
            f" + queued {sample.queued} + in service {sample.in_service} + rejected {sample.rejected}"
        )


def aggregate_run(samples: Sequence, policy: str, unit_cost=1.0) -> RunSummary:
    """Fold simulator snapshots into per-interval series and run totals."""
    starts, um, us, rm, rp, eff, var = [], [], [], [], [], [], []
    all_rt = []
    busy = prov = cost = 0.0
    for s in samples:
        check_conservation(s)
        if s.interval <= 0:
            continue
        u = np.asarray(s.utilization, dtype=float)
        rts = np.asarray(s.response_times, dtype=float)
        b = float(np.sum(s.busy_unit_seconds))
        p = float(np.sum(s.provisioned_unit_seconds))
        starts.append(s.clock - s.interval)
        um.append(float(u.mean()))
        us.append(float(u.std()))
        var.append(float(u.var()))
        rm.append(float(rts.mean()) if rts.size else 0.0)
        rp.append(nearest_rank(rts, 95))
        eff.append(min(b / p, 1.0) if p > 0 else 0.0)
        all_rt.append(rts)
        busy += b
        prov += p
        cost += float(np.sum(np.asarray(unit_cost) * np.asarray(s.provisioned_unit_seconds)))

    rt = np.concatenate(all_rt) if all_rt else np.empty(0)
    last = samples[-1] if samples else None
    return RunSummary(
        policy=policy,
        interval_start=np.asarray(starts),
        util_mean=np.asarray(um),
        util_std=np.asarray(us),
        rt_mean=np.asarray(rm),
        rt_p95=np.asarray(rp),
        scale_eff=np.asarray(eff),
        submitted=last.submitted if last else 0,
        completed=last.completed if last else 0,
        rejected=last.rejected if last else 0,
        provisioned_unit_seconds=prov,
        busy_unit_seconds=busy,
        cost=cost,
        response_time_mean=float(rt.mean()) if rt.size else 0.0,
        response_time_p95=nearest_rank(rt, 95),
        util_variance=float(np.mean(var)) if var else 0.0,
    )


def _rows(summaries: Sequence[RunSummary]):
    rows = []
    for s in summaries:
        for i in range(s.n_intervals):
            rows.append(
                (s.policy, s.interval_start[i], s.util_mean[i], s.util_std[i], s.rt_mean[i], s.rt_p95[i], s.scale_eff[i])
            )
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def emit_csv(summaries: Sequence[RunSummary], path) -> None:
    if not summaries:
        raise ValueError("need at least one summary")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in _rows(summaries):
            w.writerow([r[0], *(f"{x:.6f}" for x in r[1:])])


def read_csv(path) -> dict[str, dict[str, np.ndarray]]:
    """Inverse of :func:`emit_csv`: policy -> column -> values."""
    out: dict[str, dict[str, list]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cols = out.setdefault(row["policy"], {k: [] for k in CSV_HEADER[1:]})
            for k in CSV_HEADER[1:]:
                cols[k].append(float(row[k]))
    return {p: {k: np.asarray(v) for k, v in cols.items()} for p, cols in out.items()}


def emit_summary_table(summaries: Sequence[RunSummary], path) -> list[dict]:
    """Headline metrics per policy with percentage deltas against the first."""
    base = summaries[0].headline()
    keys = ("rt_mean", "rt_p95", "util_mean", "util_var", "scale_eff", "cost")
    table = []
    for s in summaries:
        h = s.headline()
        for k in keys:
            h[f"{k}_delta_pct"] = _pct(h[k], base[k])
        table.append(h)
    cols = ["policy", *keys, "completed", "rejected", *(f"{k}_delta_pct" for k in keys)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for h in table:
            w.writerow([h[c] if isinstance(h[c], (str, int)) else f"{h[c]:.6f}" for c in cols])
    return table


def _pct(value: float, base: float) -> float:
    if base == 0:
        return 0.0 if value == 0 else math.copysign(math.inf, value)
    return 100.0 * (value - base) / abs(base)


# -- SVG ----------------------------------------------------------------------

W, H = 720, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 40, 60


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def emit_svg_chart(summaries: Sequence[RunSummary], metric: str, path) -> None:
    """One polyline per policy against interval start time."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {sorted(METRICS)}")
    field_name, title, ylabel = METRICS[metric]
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    series = [(s.policy, s.interval_start, getattr(s, field_name)) for s in summaries]
    xs = [x for _, xv, _ in series for x in xv]
    ys = [y for _, _, yv in series for y in yv]

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2 - RIGHT / 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
        f'<text x="{LEFT + pw / 2}" y="{H - 15}" text-anchor="middle" font-family="sans-serif" font-size="12">time (s)</text>',
        f'<text x="18" y="{TOP + ph / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {TOP + ph / 2})">{escape(ylabel)}</text>',
    ]

    if not xs:
        out.append(
            f'<text x="{LEFT + pw / 2}" y="{TOP + ph / 2}" text-anchor="middle" font-family="sans-serif" font-size="14">no data</text>'
        )
    else:
        x0, x1 = min(xs), max(xs)
        y0, y1 = 0.0, max(max(ys), 1e-9)
        if metric != "response_time":
            y1 = max(y1, 1.0)
        if x1 == x0:
            x1 = x0 + 1.0

        def px(x):
            return LEFT + (x - x0) / (x1 - x0) * pw

        def py(y):
            return TOP + ph - (y - y0) / (y1 - y0) * ph

        for t in _ticks(x0, x1):
            out.append(f'<text x="{_fmt(px(t))}" y="{TOP + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="10">{t:g}</text>')
        for t in _ticks(y0, y1):
            out.append(f'<text x="{LEFT - 6}" y="{_fmt(py(t) + 3)}" text-anchor="end" font-family="sans-serif" font-size="10">{t:.3g}</text>')
            out.append(f'<line x1="{LEFT}" y1="{_fmt(py(t))}" x2="{LEFT + pw}" y2="{_fmt(py(t))}" stroke="#dddddd"/>')

        for k, (name, xv, yv) in enumerate(series):
            color = PALETTE[k % len(PALETTE)]
            pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xv, yv))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')

    for k, (name, _, _) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        ly = TOP + 10 + 18 * k
        out.append(f'<line x1="{W - RIGHT + 15}" y1="{ly}" x2="{W - RIGHT + 35}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - RIGHT + 40}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(name)}</text>')

    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
