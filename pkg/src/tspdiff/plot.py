"""Dependency-free SVG: cost drop vs. inference steps, one panel per parallel-sample count."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
PANEL_W, PANEL_H, PAD = 360, 260, 50


def render_svg(rows: list[dict]) -> str:
    """``rows`` carry model_id, inference_steps, parallel_samples and mean_drop_pct."""
    panels = sorted({int(r["parallel_samples"]) for r in rows})
    models = list(dict.fromkeys(r["model_id"] for r in rows))
    steps = sorted({int(r["inference_steps"]) for r in rows})
    drops = [float(r["mean_drop_pct"]) for r in rows]
    lo, hi = min(drops + [0.0]), max(drops + [1e-9])
    hi += 0.05 * (hi - lo) or 1.0
    width = len(panels) * (PANEL_W + PAD) + PAD
    height = PANEL_H + 2 * PAD + 20 * len(models)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" '
           f'font-size="11">', f'<rect width="{width}" height="{height}" fill="white"/>']

    xs = [math.log2(s) for s in steps]
    x_lo, x_hi = min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1

    for p, S in enumerate(panels):
        ox = PAD + p * (PANEL_W + PAD)
        oy = PAD

        def px(step):
            return ox + (math.log2(step) - x_lo) / (x_hi - x_lo) * PANEL_W

        def py(v):
            return oy + PANEL_H - (v - lo) / (hi - lo) * PANEL_H

        out.append(f'<rect x="{ox}" y="{oy}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>')
        out.append(f'<text x="{ox + PANEL_W / 2}" y="{oy - 10}" text-anchor="middle">{S} sample(s)</text>')
        for s in steps:
            out.append(f'<text x="{px(s):.1f}" y="{oy + PANEL_H + 15}" text-anchor="middle">{s}</text>')
        for k in range(5):
            v = lo + k * (hi - lo) / 4
            out.append(f'<text x="{ox - 5}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
        out.append(f'<text x="{ox + PANEL_W / 2}" y="{oy + PANEL_H + 32}" text-anchor="middle">inference steps</text>')
        for m, model in enumerate(models):
            pts = sorted((int(r["inference_steps"]), float(r["mean_drop_pct"])) for r in rows
                         if r["model_id"] == model and int(r["parallel_samples"]) == S)
            color = COLORS[m % len(COLORS)]
            if pts:
                line = " ".join(f"{px(s):.1f},{py(v):.1f}" for s, v in pts)
                out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
                out.extend(f'<circle cx="{px(s):.1f}" cy="{py(v):.1f}" r="3" fill="{color}"/>' for s, v in pts)
    out.append(f'<text x="15" y="{PAD + PANEL_H / 2}" transform="rotate(-90 15 {PAD + PANEL_H / 2})" '
               'text-anchor="middle">cost drop (%)</text>')
    for m, model in enumerate(models):
        y = PAD + PANEL_H + 50 + 20 * m
        color = COLORS[m % len(COLORS)]
        out.append(f'<line x1="{PAD}" y1="{y}" x2="{PAD + 20}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{PAD + 26}" y="{y + 4}">{escape(model)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
