"""Debug rendering of EMAGS slices with label rectangles (north up)."""

from __future__ import annotations

import colorsys

import numpy as np
from PIL import Image, ImageDraw

from .grid_core import Canvas

LABEL_COLOR = (255, 140, 0)


def slice_image(canvas: Canvas, t: int, scale: int = 2, min_speed: float = 0.5) -> Image.Image:
    """Grayscale P_O (dark = occupied) with dynamic cells hue-coded by
    velocity direction."""
    po = canvas.po[t]
    gray = (255 * (1.0 - po)).astype(np.uint8)
    rgb = np.repeat(gray[..., None], 3, axis=2)
    dyn = canvas.valid[t] & (canvas.speed[t] >= min_speed) & (po > 0.5)
    if dyn.any():
        hue = (canvas.theta[t][dyn] + np.pi) / (2 * np.pi)
        cols = np.array([colorsys.hsv_to_rgb(h, 0.9, 0.9) for h in hue]) * 255
        rgb[dyn] = cols.astype(np.uint8)
    img = Image.fromarray(rgb[::-1], "RGB")
    if scale != 1:
        img = img.resize((img.width * scale, img.height * scale), Image.NEAREST)
    return img


def world_to_pixel(canvas: Canvas, e, n, scale: int = 2) -> tuple[float, float]:
    H = canvas.shape[1]
    x = (e - canvas.origin_e) / canvas.cell_size * scale
    y = (H - (n - canvas.origin_n) / canvas.cell_size) * scale
    return x, y


def draw_labels(img: Image.Image, canvas: Canvas, records, scale: int = 2) -> None:
    from .geometry import OrientedRect
    draw = ImageDraw.Draw(img)
    for r in records:
        rect = OrientedRect(r.center[0], r.center[1], r.orientation, r.length, r.width)
        pts = [world_to_pixel(canvas, c[0], c[1], scale) for c in rect.corners()]
        draw.line(pts + [pts[0]], fill=LABEL_COLOR, width=1)


def render_slices(canvas: Canvas, records, slices, out_dir, scale: int = 2) -> list:
    by_t = {}
    for r in records or []:
        by_t.setdefault(r.slice, []).append(r)
    paths = []
    for t in slices:
        img = slice_image(canvas, t, scale)
        if t in by_t:
            draw_labels(img, canvas, by_t[t], scale)
        path = out_dir / f"slice_{t:05d}.png"
        img.save(path)
        paths.append(path)
    return paths
