"""Deterministic rasterization of truss states to 3x128x128 images.

Pixel mapping: ``x=-1`` is column 0 and ``x=+1`` column 127; ``y=+1`` is row 0
and ``y=-1`` row 127.  Positions are snapped to the nearest pixel (halves
round up) before drawing, so a node at the origin is centred on (64, 64).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .truss import TrussState

IMAGE_SIZE = 128

BACKGROUND = (255, 255, 255)
MEMBER_COLOR = (0, 0, 0)
NODE_COLOR = (0, 0, 255)
SUPPORT_COLOR = (0, 255, 0)
LOAD_COLOR = (255, 0, 0)

NODE_RADIUS = 2.0
ARROW_LENGTH = 14.0

_ROWS, _COLS = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(float)


def to_pixel(x: float, y: float) -> tuple[int, int]:
    """(row, col) of a design-space point."""
    scale = (IMAGE_SIZE - 1) / 2.0
    col = math.floor((x + 1.0) * scale + 0.5)
    row = math.floor((1.0 - y) * scale + 0.5)
    return row, col


def member_width(size_level: int) -> int:
    return 1 + size_level


def segment_mask(p: tuple[float, float], q: tuple[float, float], width: float) -> np.ndarray:
    """Pixels whose centre projects inside segment p-q with signed offset in [-w/2, w/2).

    The half-open band gives exactly ``width`` pixels across axis-aligned lines.
    """
    (r0, c0), (r1, c1) = p, q
    dr, dc = r1 - r0, c1 - c0
    length = math.hypot(dr, dc)
    if length == 0:
        return (_ROWS - r0) ** 2 + (_COLS - c0) ** 2 <= (width / 2.0) ** 2
    ur, uc = dr / length, dc / length
    vr, vc = _ROWS - r0, _COLS - c0
    t = vr * ur + vc * uc
    d = vc * ur - vr * uc
    return (t >= 0) & (t <= length) & (d >= -width / 2.0) & (d < width / 2.0)


def disc_mask(center: tuple[float, float], radius: float) -> np.ndarray:
    r0, c0 = center
    return (_ROWS - r0) ** 2 + (_COLS - c0) ** 2 <= radius**2


def triangle_mask(a, b, c) -> np.ndarray:
    """Filled triangle with (row, col) vertices, edges inclusive."""

    def side(p, q):
        return (q[1] - p[1]) * (_ROWS - p[0]) - (q[0] - p[0]) * (_COLS - p[1])

    s1, s2, s3 = side(a, b), side(b, c), side(c, a)
    neg = (s1 < 0) | (s2 < 0) | (s3 < 0)
    pos = (s1 > 0) | (s2 > 0) | (s3 > 0)
    return ~(neg & pos)


def support_mask(center: tuple[int, int], kind: str) -> np.ndarray:
    r, c = center
    if kind == "roller_x":
        mask = triangle_mask((r, c - 3), (r - 4, c - 8), (r + 4, c - 8))
        return mask | segment_mask((r - 5, c - 10), (r + 5, c - 10), 1)
    mask = triangle_mask((r + 3, c), (r + 8, c - 4), (r + 8, c + 4))
    if kind == "roller":
        mask |= segment_mask((r + 10, c - 5), (r + 10, c + 5), 1)
    return mask


def arrow_mask(center: tuple[int, int], fx: float, fy: float) -> np.ndarray:
    """Arrow with its tail at the node, pointing along the force."""
    norm = math.hypot(fx, fy)
    if norm == 0:
        return np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=bool)
    ur, uc = -fy / norm, fx / norm
    r, c = center
    tail = (r + 3 * ur, c + 3 * uc)
    tip = (r + ARROW_LENGTH * ur, c + ARROW_LENGTH * uc)
    mask = segment_mask(tail, tip, 2)
    for ang in (math.radians(150), math.radians(-150)):
        br = ur * math.cos(ang) - uc * math.sin(ang)
        bc = ur * math.sin(ang) + uc * math.cos(ang)
        mask |= segment_mask(tip, (tip[0] + 5 * br, tip[1] + 5 * bc), 2)
    return mask


def node_footprint(state: TrussState, node_id: int) -> np.ndarray:
    """Pixels a free node can touch: its marker plus its incident members."""
    node = state.node(node_id)
    mask = disc_mask(to_pixel(*node.xy), NODE_RADIUS)
    for m in state.members:
        if node_id in (m.a, m.b):
            mask |= segment_mask(
                to_pixel(*state.node(m.a).xy), to_pixel(*state.node(m.b).xy), member_width(m.size_level)
            )
    return mask


def render_uint8(state: TrussState) -> np.ndarray:
    """Render to a channel-first uint8 array of shape (3, 128, 128)."""
    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    pix = {n.id: to_pixel(*n.xy) for n in state.nodes}
    for m in state.members:
        img[segment_mask(pix[m.a], pix[m.b], member_width(m.size_level))] = MEMBER_COLOR
    for n in state.nodes:
        img[disc_mask(pix[n.id], NODE_RADIUS)] = NODE_COLOR
    for s in state.problem.supports:
        node = state.node_at(s.x, s.y)
        if node is not None:
            img[support_mask(pix[node.id], s.kind)] = SUPPORT_COLOR
    for ld in state.problem.loads:
        node = state.node_at(ld.x, ld.y)
        if node is not None:
            img[arrow_mask(pix[node.id], ld.fx, ld.fy)] = LOAD_COLOR
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def render(state: TrussState) -> np.ndarray:
    """Float32 image in [0, 1], shape (3, 128, 128)."""
    return render_uint8(state).astype(np.float32) / 255.0


def save_png(image: np.ndarray, path: str | Path) -> None:
    """Write a (3, H, W) image, uint8 or float in [0, 1], as a lossless PNG."""
    from PIL import Image

    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")
