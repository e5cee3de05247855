"""SVG renders: elite grid projections and decoded codebook centers.

Colormap: linear RGB interpolation from cold ``#2c7bb6`` (lowest normalized
elite fitness) to hot ``#d7191c`` (highest); empty cells are ``#eeeeee``.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from ..autodiff import ConfigurationError
from ..containers import Individual
from ..metrics import elite_grid_projection
from ..vqvae import VqVaeModel, decoded_centers

COLD = (0x2C, 0x7B, 0xB6)
HOT = (0xD7, 0x19, 0x1C)
EMPTY = "#eeeeee"
CELL_PX = 24


def hex_color(rgb: Sequence[float]) -> str:
    return "#" + "".join(f"{int(round(min(max(c, 0), 255))):02x}" for c in rgb)


def colormap(value: float) -> str:
    """Hex color for a normalized value in [0, 1]; NaN means empty."""
    if not np.isfinite(value):
        return EMPTY
    v = float(np.clip(value, 0.0, 1.0))
    return hex_color([c0 + v * (c1 - c0) for c0, c1 in zip(COLD, HOT)])


def _svg(width: int, height: int, body: list[str], title: str) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    return "\n".join([head, f"<title>{escape(title)}</title>", *body, "</svg>", ""])


def grid_svg(values: np.ndarray, title: str = "elite grid") -> str:
    """One ``rect class="cell"`` per matrix entry; row 0 is drawn at the bottom
    so the second axis reads upward like a plot."""
    nx, ny = values.shape
    body = []
    for i in range(nx):
        for j in range(ny):
            v = values[i, j]
            x, y = i * CELL_PX, (ny - 1 - j) * CELL_PX
            label = "empty" if not np.isfinite(v) else f"{v:.4f}"
            body.append(
                f'<rect class="cell" x="{x}" y="{y}" width="{CELL_PX}" height="{CELL_PX}" '
                f'fill="{colormap(v)}" stroke="#ffffff" data-value="{label}"/>'
            )
    return _svg(nx * CELL_PX, ny * CELL_PX, body, title)


def render_elite_grid(
    members: list[Individual],
    bounds: Sequence[tuple[float, float]],
    path: str | Path,
    bins: Sequence[int] = (8, 8),
    dims: tuple[int, int] = (0, 1),
) -> np.ndarray:
    grid = elite_grid_projection(members, bounds, bins, dims)
    Path(path).write_text(grid_svg(grid))
    return grid


def centers_svg(images: np.ndarray, shape: tuple[int, ...], per_row: int = 20, px: int = 3) -> str:
    """A strip of decoded rasters. ``shape`` is (h, w) for gray or (3, h, w) for color."""
    lo, hi = float(images.min()), float(images.max())
    span = hi - lo if hi > lo else 1.0
    norm = (images - lo) / span
    if len(shape) == 2:
        h, w = shape
    else:
        _, h, w = shape
    gap = 2
    cols = min(per_row, len(images)) or 1
    rows = -(-len(images) // cols)
    body = []
    for k, img in enumerate(norm):
        ox = (k % cols) * (w * px + gap)
        oy = (k // cols) * (h * px + gap)
        body.append(f'<g class="center" data-index="{k}">')
        pic = img.reshape(shape)
        for r in range(h):
            for c in range(w):
                if len(shape) == 2:
                    g = 255 * pic[r, c]
                    rgb = (g, g, g)
                else:
                    rgb = 255 * pic[:, r, c]
                body.append(
                    f'<rect class="px" x="{ox + c * px}" y="{oy + r * px}" width="{px}" height="{px}" '
                    f'fill="{hex_color(rgb)}"/>'
                )
        body.append("</g>")
    return _svg(cols * (w * px + gap), rows * (h * px + gap), body, "decoded centers")


def render_decoded_centers(model: VqVaeModel, path: str | Path) -> np.ndarray:
    shape = model.arch.input_shape
    if shape is None or len(shape) not in (2, 3):
        raise ConfigurationError(
            "decoded-centers needs image-like raw records (mobile or gridworld); "
            "this model reads flat vectors"
        )
    images = decoded_centers(model)
    Path(path).write_text(centers_svg(images, tuple(shape)))
    return images
