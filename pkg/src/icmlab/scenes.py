"""Synthetic labeled scenes: textured backgrounds plus filled shapes.

These stand in for externally segmented photographs. Everything is drawn
from counter-based integer streams, so a seed reproduces the exact same
image, label map, and confidences on every platform. Confidences are
integer per-mille values, which round-trip exactly through the text
sidecar format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .masks import SegmentationInput
from .rng import mix, random_floats, random_ints

_TAG_BG = 11
_TAG_SHAPE = 12
_TAG_FILL = 13
_TAG_CONF = 14
_TAG_MOTION = 15

# width of the value-noise lattice cells, in pixels
_LATTICE_STEP = 8


@dataclass(frozen=True)
class SceneSpec:
    """What a generated scene should contain."""

    height: int = 64
    width: int = 64
    min_objects: int = 2
    max_objects: int = 5
    conf_low: float = 0.3
    conf_high: float = 1.0
    allow_overlap: bool = True
    margin: int = 0  # minimum Chebyshev gap between shapes when not overlapping

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ContractError(
                f"scene dimensions must be at least 16x16, got "
                f"{self.height}x{self.width}")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ContractError("need 0 <= min_objects <= max_objects")
        if not 0.0 <= self.conf_low <= self.conf_high <= 1.0:
            raise ContractError("confidence range must satisfy 0 <= low <= high <= 1")


def _value_noise(seed: int, h: int, w: int) -> np.ndarray:
    """Bilinear interpolation of a coarse random lattice; values in [0, 1]."""
    gh = h // _LATTICE_STEP + 2
    gw = w // _LATTICE_STEP + 2
    lattice = random_floats(seed, gh * gw).reshape(gh, gw)
    ys = np.arange(h) / _LATTICE_STEP
    xs = np.arange(w) / _LATTICE_STEP
    y0 = ys.astype(np.int64)
    x0 = xs.astype(np.int64)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = lattice[y0][:, x0]
    b = lattice[y0][:, x0 + 1]
    c = lattice[y0 + 1][:, x0]
    d = lattice[y0 + 1][:, x0 + 1]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def _shape_footprint(kind: int, geom: np.ndarray, h: int, w: int,
                     dy: float = 0.0, dx: float = 0.0) -> np.ndarray:
    """Bool map of the pixels covered by one shape, optionally translated."""
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    cy = geom[0] * h + dy
    cx = geom[1] * w + dx
    ry = (0.08 + 0.17 * geom[2]) * h
    rx = (0.08 + 0.17 * geom[3]) * w
    if kind == 0:  # axis-aligned rectangle
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    if kind == 1:  # ellipse
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    # triangle: apex above the base edge, half-plane tests
    x0, y0 = cx, cy - ry
    x1, y1 = cx - rx, cy + ry
    x2, y2 = cx + rx, cy + ry

    def side(ax, ay, bx, by):
        return (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)

    s0 = side(x0, y0, x1, y1)
    s1 = side(x1, y1, x2, y2)
    s2 = side(x2, y2, x0, y0)
    return (s0 >= 0) & (s1 >= 0) & (s2 >= 0)


def _chebyshev_gap_ok(mask: np.ndarray, occupied: np.ndarray, margin: int) -> bool:
    if margin <= 0:
        return not (mask & occupied).any()
    grown = occupied.copy()
    for r in range(1, margin + 1):
        grown[r:, :] |= occupied[:-r, :]
        grown[:-r, :] |= occupied[r:, :]
    widened = grown.copy()
    for r in range(1, margin + 1):
        widened[:, r:] |= grown[:, :-r]
        widened[:, :-r] |= grown[:, r:]
    return not (mask & widened).any()


def _scene_shapes(seed: int, spec: SceneSpec) -> list[dict]:
    """Sample shape kinds, geometry, fills, confidences, and velocities."""
    h, w = spec.height, spec.width
    count = int(random_ints(mix(seed, _TAG_SHAPE, 0), 1,
                            spec.min_objects, spec.max_objects)[0])
    shapes: list[dict] = []
    occupied = np.zeros((h, w), dtype=bool)
    lo = int(round(spec.conf_low * 1000))
    hi = int(round(spec.conf_high * 1000))
    for i in range(count):
        placed = None
        for attempt in range(20):
            g = random_floats(mix(seed, _TAG_SHAPE, i + 1, attempt), 4)
            kind = int(random_ints(mix(seed, _TAG_SHAPE, i + 1, attempt, 99), 1, 0, 2)[0])
            footprint = _shape_footprint(kind, g, h, w)
            if not footprint.any():
                continue
            if spec.allow_overlap or _chebyshev_gap_ok(footprint, occupied, spec.margin):
                placed = (kind, g, footprint)
                break
        if placed is None:
            continue  # crowded scene; skip this object
        kind, g, footprint = placed
        occupied |= footprint
        fill = random_floats(mix(seed, _TAG_FILL, i + 1), 3) * 0.7 + 0.15
        conf_millis = int(random_ints(mix(seed, _TAG_CONF, i + 1), 1, lo, hi)[0])
        vel = random_floats(mix(seed, _TAG_MOTION, i + 1), 2) * 4.0 - 2.0
        shapes.append({
            "kind": kind,
            "geom": g,
            "fill": fill,
            "confidence": conf_millis / 1000.0,
            "velocity": (float(vel[0]), float(vel[1])),
        })
    return shapes


def _render(seed: int, spec: SceneSpec, shapes: list[dict],
            dy: float = 0.0, dx: float = 0.0) -> tuple[np.ndarray, SegmentationInput]:
    h, w = spec.height, spec.width
    image = np.empty((3, h, w), dtype=np.float64)
    for c in range(3):
        base = 0.35 + 0.3 * random_floats(mix(seed, _TAG_BG, c, 777), 1)[0]
        noise = _value_noise(mix(seed, _TAG_BG, c), h, w)
        image[c] = np.clip(base + 0.25 * (noise - 0.5), 0.0, 1.0)
    label_map = np.zeros((h, w), dtype=np.int64)
    for i, shape in enumerate(shapes):
        rid = i + 1
        sdy = dy * shape["velocity"][0]
        sdx = dx * shape["velocity"][1]
        footprint = _shape_footprint(shape["kind"], shape["geom"], h, w, sdy, sdx)
        if not footprint.any():
            continue
        label_map[footprint] = rid
        speckle = random_floats(mix(seed, _TAG_FILL, rid, 55), 3 * h * w).reshape(3, h, w)
        for c in range(3):
            image[c][footprint] = np.clip(
                shape["fill"][c] + 0.1 * (speckle[c][footprint] - 0.5), 0.0, 1.0)
    visible = set(np.unique(label_map)) - {0}
    regions = [(i + 1, shapes[i]["confidence"]) for i in range(len(shapes))
               if (i + 1) in visible]
    seg = SegmentationInput(width=w, height=h, label_map=label_map, regions=regions)
    return image, seg


def generate_synthetic_scene(seed: int, spec: SceneSpec) -> tuple[np.ndarray, SegmentationInput]:
    """One labeled scene: a (3, H, W) image in [0, 1] plus its segmentation.

    Fully determined by (seed, spec). Shapes that end up completely
    overdrawn by later shapes are dropped from the region list so that
    every listed region has at least one pixel.
    """
    shapes = _scene_shapes(seed, spec)
    return _render(seed, spec, shapes)


def generate_synthetic_clip(seed: int, spec: SceneSpec,
                            num_frames: int) -> tuple[np.ndarray, list[SegmentationInput]]:
    """A clip of moving shapes: (T, 3, H, W) frames plus per-frame segmentations.

    Shapes share geometry and fills across frames and drift along fixed
    per-shape velocities, so frame t is a pure function of (seed, spec, t).
    """
    if num_frames < 1:
        raise ContractError(f"need at least one frame, got {num_frames}")
    shapes = _scene_shapes(seed, spec)
    frames = np.empty((num_frames, 3, spec.height, spec.width), dtype=np.float64)
    segs: list[SegmentationInput] = []
    for t in range(num_frames):
        img, seg = _render(seed, spec, shapes, dy=float(t), dx=float(t))
        frames[t] = img
        segs.append(seg)
    return frames, segs
