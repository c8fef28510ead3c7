"""Hourly mean trajectories per subgroup and their CSV / SVG renderings."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import CHANNELS, NOISE
from .prognosis import subgroup_name

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
CSV_HEADER = ["era", "subgroup", "channel", "hour", "n", "mean", "std", "se"]


@dataclass
class TrajectorySummary:
    """Pointwise statistics indexed ``[subgroup, channel, hour]`` per era.

    ``subgroups[era]`` lists the cluster indices present, in ascending order,
    matching the first axis of ``mean[era]`` etc.
    """

    subgroups: dict
    n: dict
    mean: dict
    std: dict
    se: dict
    n_hours: int

    @property
    def eras(self):
        return list(self.subgroups)

    def rows(self):
        for era in self.eras:
            for gi, g in enumerate(self.subgroups[era]):
                for c, chan in enumerate(CHANNELS):
                    for t in range(self.n_hours):
                        yield {
                            "era": era, "subgroup": subgroup_name(g), "channel": chan.code,
                            "hour": t, "n": int(self.n[era][gi]),
                            "mean": float(self.mean[era][gi, c, t]),
                            "std": float(self.std[era][gi, c, t]),
                            "se": float(self.se[era][gi, c, t]),
                        }


def aggregate(cohorts_by_era, labels_by_era):
    """Mean, population std and standard error per (subgroup, channel, hour)
    in physical units. Noise points (-1) are left out."""
    subgroups, ns, means, stds, ses = {}, {}, {}, {}, {}
    n_hours = None
    for era, cohort in cohorts_by_era.items():
        if len(cohort) == 0:
            continue
        labels = labels_by_era[era]
        grids = cohort.grids()
        n_hours = grids.shape[-1]
        lab = np.array([labels[p] for p in cohort.patient_ids], dtype=int)
        groups = sorted(set(lab.tolist()) - {NOISE})
        m = np.zeros((len(groups),) + grids.shape[1:])
        s = np.zeros_like(m)
        counts = np.zeros(len(groups), dtype=int)
        for gi, g in enumerate(groups):
            members = grids[lab == g]
            counts[gi] = len(members)
            m[gi] = members.mean(axis=0)
            s[gi] = members.std(axis=0)
        subgroups[era] = groups
        ns[era] = counts
        means[era] = m
        stds[era] = s
        ses[era] = s / np.sqrt(np.maximum(counts, 1))[:, None, None]
    return TrajectorySummary(subgroups, ns, means, stds, ses, n_hours or 0)


def write_csv(summary, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in summary.rows():
            w.writerow([r["era"], r["subgroup"], r["channel"], r["hour"], r["n"],
                        repr(r["mean"]), repr(r["std"]), repr(r["se"])])


def _fmt(v):
    return f"{v:.2f}"


def render_svg(summary, era, band=1.0):
    """One panel per channel, one polyline per subgroup with a shaded
    ``mean ± band * se`` region. Output depends only on the summary."""
    width, panel_h, pad_l, pad_r, pad_t, gap = 640, 150, 70, 110, 30, 40
    plot_w = width - pad_l - pad_r
    height = pad_t + len(CHANNELS) * (panel_h + gap)
    groups = summary.subgroups[era]
    T = summary.n_hours
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="13">'
        f"Vital-sign trajectories ({era})</text>",
    ]
    xs = [pad_l + (plot_w * t / max(T - 1, 1)) for t in range(T)]
    for c, chan in enumerate(CHANNELS):
        top = pad_t + c * (panel_h + gap)
        lo = summary.mean[era][:, c] - band * summary.se[era][:, c]
        hi = summary.mean[era][:, c] + band * summary.se[era][:, c]
        ymin, ymax = (float(lo.min()), float(hi.max())) if groups else (0.0, 1.0)
        if ymax - ymin < 1e-9:
            ymin, ymax = ymin - 1.0, ymax + 1.0
        span = ymax - ymin

        def y(v):
            return top + panel_h - panel_h * (v - ymin) / span

        out.append(f'<g class="panel" data-channel="{chan.code}">')
        out.append(f'<rect x="{pad_l}" y="{top}" width="{plot_w}" height="{panel_h}" '
                   'fill="none" stroke="#999"/>')
        out.append(f'<text x="{pad_l}" y="{top - 6}">{chan.label} ({chan.unit})</text>')
        out.append(f'<text x="{pad_l - 6}" y="{top + 10}" text-anchor="end">{_fmt(ymax)}</text>')
        out.append(f'<text x="{pad_l - 6}" y="{top + panel_h}" text-anchor="end">{_fmt(ymin)}</text>')
        for t in range(T):
            out.append(f'<text x="{xs[t]:.2f}" y="{top + panel_h + 14}" '
                       f'text-anchor="middle">{t}</text>')
        for gi, g in enumerate(groups):
            color = PALETTE[g % len(PALETTE)]
            upper = " ".join(f"{xs[t]:.2f},{y(hi[gi, t]):.2f}" for t in range(T))
            lower = " ".join(f"{xs[t]:.2f},{y(lo[gi, t]):.2f}" for t in reversed(range(T)))
            out.append(f'<polygon class="band" points="{upper} {lower}" fill="{color}" '
                       'fill-opacity="0.2" stroke="none"/>')
            line = " ".join(f"{xs[t]:.2f},{y(summary.mean[era][gi, c, t]):.2f}" for t in range(T))
            out.append(f'<polyline class="trajectory" data-subgroup="{subgroup_name(g)}" '
                       f'points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        out.append("</g>")
    for gi, g in enumerate(groups):
        ly = pad_t + 14 * gi
        color = PALETTE[g % len(PALETTE)]
        out.append(f'<rect x="{width - pad_r + 12}" y="{ly}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{width - pad_r + 26}" y="{ly + 9}">{subgroup_name(g)}</text>')
    out.append(f'<text x="{pad_l + plot_w / 2:.0f}" y="{height - 6}" text-anchor="middle">'
               "Hour since ICU admission</text>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot_data(summary, out_dir, formats=("csv", "svg"), band=1.0):
    """Write ``trajectories_<era>.csv`` / ``.svg`` per era; returns the paths."""
    out_dir = Path(out_dir)
    if not summary.eras:
        raise ValueError("empty trajectory summary")
    paths = []
    for era in summary.eras:
        single = TrajectorySummary(
            {era: summary.subgroups[era]}, {era: summary.n[era]}, {era: summary.mean[era]},
            {era: summary.std[era]}, {era: summary.se[era]}, summary.n_hours,
        )
        for fmt in formats:
            path = out_dir / f"trajectories_{era}.{fmt}"
            if fmt == "csv":
                write_csv(single, path)
            elif fmt == "svg":
                path.write_text(render_svg(single, era, band), encoding="utf-8")
            else:
                raise ValueError(f"unknown format {fmt!r}")
            paths.append(path)
    return paths
