"""Standalone SVG rendering of records: drivable cells as grey squares, one
polyline per vehicle with start (circle) and end (square) markers."""
import math
from xml.sax.saxutils import escape

PANEL = 320
PAD = 10
COLORS = ("#1f77b4", "#d62728")


def _panel(rec, x0, y0):
    gm = rec.map
    ext_w = gm.width * gm.resolution
    ext_h = gm.height * gm.resolution
    k = (PANEL - 2 * PAD) / max(ext_w, ext_h)

    def tx(x, y):
        # world y grows upward, svg y downward
        return x0 + PAD + (x - gm.origin[0]) * k, y0 + PAD + (ext_h - (y - gm.origin[1])) * k

    out = [f'<g id="{escape(rec.id)}">',
           f'<rect x="{x0}" y="{y0}" width="{PANEL}" height="{PANEL}" fill="white" stroke="black"/>']
    cell = gm.resolution * k
    for row in range(gm.height):
        for col in range(gm.width):
            if gm.cells[row, col]:
                px, py = tx(gm.origin[0] + col * gm.resolution, gm.origin[1] + (row + 1) * gm.resolution)
                out.append(f'<rect x="{px:.2f}" y="{py:.2f}" width="{cell:.2f}" height="{cell:.2f}" fill="#d0d0d0"/>')
    for traj, color in zip((rec.traj_a, rec.traj_b), COLORS):
        pts = [tx(x, y) for x, y in traj.waypoints]
        coords = " ".join(f"{px:.2f},{py:.2f}" for px, py in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        sx, sy = pts[0]
        ex, ey = pts[-1]
        out.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="3" fill="{color}"/>')
        out.append(f'<rect x="{ex - 3:.2f}" y="{ey - 3:.2f}" width="6" height="6" fill="{color}"/>')
    out.append(f'<text x="{x0 + 4}" y="{y0 + PANEL - 4}" font-size="9" font-family="monospace">'
               f'{escape(rec.id[:60])} [{escape(rec.label)}]</text>')
    out.append("</g>")
    return out


def render_svg(records, ncols=4):
    records = list(records)
    if not records:
        w, h = PANEL, 40
        body = [f'<text x="10" y="25" font-size="14" font-family="sans-serif">no records to plot</text>']
    else:
        ncols = max(1, min(ncols, len(records)))
        nrows = math.ceil(len(records) / ncols)
        w, h = ncols * PANEL, nrows * PANEL
        body = []
        for i, rec in enumerate(records):
            body += _panel(rec, (i % ncols) * PANEL, (i // ncols) * PANEL)
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}">')
    return "\n".join([head] + body + ["</svg>"]) + "\n"


def plot(records, out_path, ncols=4):
    svg = render_svg(records, ncols)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    return out_path
