"""Minimal standalone SVG line charts for spline and training-trace figures."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .network import KanModel, edge_eval
from .splines import basis_eval

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")
SAMPLES = 200


def _num(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".") if v != 0 else "0"


class Panel:
    """One axes box inside a larger SVG canvas."""

    def __init__(self, x0, y0, w, h, title="", xlim=None, ylim=None):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.title = title
        self.xlim, self.ylim = xlim, ylim
        self.curves = []

    def add(self, xs, ys, css_class="curve", color=None, attrs=None):
        self.curves.append((np.asarray(xs, float), np.asarray(ys, float), css_class, color, attrs or {}))

    def _limits(self):
        xs = np.concatenate([c[0] for c in self.curves]) if self.curves else np.array([0.0, 1.0])
        ys = np.concatenate([c[1] for c in self.curves]) if self.curves else np.array([0.0, 1.0])
        xlo, xhi = self.xlim or (float(xs.min()), float(xs.max()))
        ylo, yhi = self.ylim or (float(ys.min()), float(ys.max()))
        if xhi <= xlo:
            xlo, xhi = xlo - 1, xhi + 1
        if yhi - ylo < 1e-12:
            ylo, yhi = ylo - 1, yhi + 1
        pad = 0.05 * (yhi - ylo)
        return xlo, xhi, ylo - pad, yhi + pad

    def render(self) -> str:
        xlo, xhi, ylo, yhi = self._limits()
        px = lambda x: self.x0 + (x - xlo) / (xhi - xlo) * self.w
        py = lambda y: self.y0 + self.h - (y - ylo) / (yhi - ylo) * self.h
        out = [f'<rect x="{_num(self.x0)}" y="{_num(self.y0)}" width="{_num(self.w)}" '
               f'height="{_num(self.h)}" fill="none" stroke="#999"/>']
        if self.title:
            out.append(f'<text x="{_num(self.x0 + 2)}" y="{_num(self.y0 - 3)}" font-size="10">'
                       f'{escape(self.title)}</text>')
        if ylo < 0 < yhi:
            out.append(f'<line x1="{_num(self.x0)}" y1="{_num(py(0))}" x2="{_num(self.x0 + self.w)}" '
                       f'y2="{_num(py(0))}" stroke="#ddd"/>')
        for i, (xs, ys, cls, color, attrs) in enumerate(self.curves):
            pts = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in zip(xs, ys))
            extra = "".join(f' {k}="{escape(str(v))}"' for k, v in attrs.items())
            color = color or PALETTE[i % len(PALETTE)]
            out.append(f'<polyline class="{cls}" fill="none" stroke="{color}" stroke-width="1.2"'
                       f'{extra} points="{pts}"/>')
        out.append(f'<text x="{_num(self.x0)}" y="{_num(self.y0 + self.h + 11)}" font-size="8">'
                   f'{xlo:.3g}</text>')
        out.append(f'<text x="{_num(self.x0 + self.w)}" y="{_num(self.y0 + self.h + 11)}" font-size="8" '
                   f'text-anchor="end">{xhi:.3g}</text>')
        return "\n".join(out)


def document(width, height, body, title="") -> str:
    head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n')
    if title:
        head += f'<title>{escape(title)}</title>\n'
    return head + '<rect width="100%" height="100%" fill="white"/>\n' + body + "\n</svg>\n"


def layer_svg(model: KanModel, layer_index: int) -> str:
    """Grid of learned edge activations plus a panel of the raw basis functions."""
    layer = model.layers[layer_index]
    pw, ph, gap = 150, 100, 30
    cols, rows = layer.in_dim, layer.out_dim + 1
    width = cols * (pw + gap) + gap
    height = rows * (ph + gap) + gap
    panels = []
    for j in range(layer.out_dim):
        for i in range(layer.in_dim):
            g = layer.grids[i]
            xs = np.linspace(g.domain_lo, g.domain_hi, SAMPLES)
            ys = edge_eval(layer.edge(j, i), xs)
            p = Panel(gap + i * (pw + gap), gap + j * (ph + gap), pw, ph, f"phi[{j},{i}]")
            p.add(xs, ys, "edge-curve", PALETTE[0],
                  {"data-edge": f"{j},{i}", "data-min": repr(float(ys.min())), "data-max": repr(float(ys.max()))})
            panels.append(p)
    g = layer.grids[0]
    xs = np.linspace(g.domain_lo, g.domain_hi, SAMPLES)
    B = basis_eval(g, xs)
    p = Panel(gap, gap + layer.out_dim * (ph + gap), max(pw, cols * (pw + gap) - gap), ph,
              f"B_i(x), G={g.interior_count}, k={g.degree_k}", ylim=(0.0, 1.0))
    for b in range(B.shape[1]):
        p.add(xs, B[:, b], "basis-curve", attrs={"data-basis": b})
    panels.append(p)
    body = "\n".join(p.render() for p in panels)
    return document(width, height, body, f"layer {layer_index} activations")


def trace_svg(records, title="training loss") -> str:
    """Loss (log10 scale) against iteration for TrainTrace records."""
    its = np.array([r[0] for r in records], dtype=float)
    loss = np.array([r[1] for r in records], dtype=float)
    reg = np.array([r[2] for r in records], dtype=float)
    p = Panel(50, 30, 540, 300, f"{title} (log10)")
    if len(its):
        p.add(its, np.log10(np.maximum(loss, 1e-300)), "trace-loss", PALETTE[0])
        if np.any(reg > 0):
            p.add(its, np.log10(np.maximum(reg, 1e-300)), "trace-reg", PALETTE[1])
    return document(640, 380, p.render(), title)
