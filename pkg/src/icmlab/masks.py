"""Binary training masks from segmentation regions.

The pipeline: keep regions whose confidence clears a threshold, trace
their edges (either a from-scratch Canny pass over a rendered gray map,
or exact per-region boundaries), then thicken by a small dilation. A
lower threshold keeps more regions and therefore produces more edges.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .pnm import read_pgm, write_pgm8
from .rng import mix

_TAN_22_5 = math.sqrt(2.0) - 1.0


class EmptyMaskWarning(UserWarning):
    """No regions survived filtering; the resulting mask is all zeros."""


@dataclass
class BinaryMask:
    """An (H, W) map of exact {0, 1} values."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.shape != (self.height, self.width):
            raise ContractError(
                f"mask values shape {self.values.shape} does not match "
                f"{self.height}x{self.width}")
        bad = (self.values != 0) & (self.values != 1)
        if bad.any():
            raise ContractError("mask values must be exactly 0 or 1")

    def as_float(self) -> np.ndarray:
        return self.values.astype(np.float64)

    def coverage(self) -> float:
        return float(self.values.mean())

    def is_superset_of(self, other: "BinaryMask") -> bool:
        return bool(np.all(self.values >= other.values))


def mask_to_pgm(mask: BinaryMask, path) -> None:
    """Masks are stored as maxval-255 PGM with samples 0 or 255."""
    write_pgm8(path, mask.values.astype(np.int64) * 255)


def mask_from_pgm(path) -> BinaryMask:
    samples, maxval = read_pgm(path)
    if maxval != 255:
        raise ContractError(f"{path}: mask PGM must have maxval 255, got {maxval}")
    if not np.isin(samples, (0, 255)).all():
        raise ContractError(f"{path}: mask samples must be exactly 0 or 255")
    h, w = samples.shape
    return BinaryMask(width=w, height=h, values=(samples == 255).astype(np.uint8))


@dataclass
class SegmentationInput:
    """Per-pixel region labels plus per-region confidence scores.

    Region id 0 is reserved for unlabeled pixels. Every nonzero id present
    in the label map must carry exactly one confidence entry.
    """

    width: int
    height: int
    label_map: np.ndarray
    regions: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.label_map = np.asarray(self.label_map, dtype=np.int64)
        if self.label_map.shape != (self.height, self.width):
            raise ContractError(
                f"label map shape {self.label_map.shape} does not match "
                f"{self.height}x{self.width}")
        if self.label_map.min() < 0:
            raise ContractError("label map ids must be non-negative")
        ids = [rid for rid, _ in self.regions]
        if len(ids) != len(set(ids)):
            raise ContractError("duplicate region id in confidence list")
        present = {int(v) for v in np.unique(self.label_map)}
        missing = sorted(present - {0} - set(ids))
        if missing:
            raise ContractError(
                f"label map ids missing from confidence list: {missing}")
        for rid, conf in self.regions:
            if rid <= 0:
                raise ContractError(f"region id must be positive, got {rid}")
            if not 0.0 <= conf <= 1.0:
                raise ContractError(f"confidence {conf} for region {rid} not in [0, 1]")

    def confidence_of(self, rid: int) -> float:
        for r, c in self.regions:
            if r == rid:
                return c
        raise KeyError(rid)


@dataclass(frozen=True)
class CannyParams:
    """Knobs for the edge extractor. Thresholds are fractions of the
    maximum gradient magnitude; dilation radius is a Chebyshev radius."""

    gaussian_sigma: float = 1.0
    low_ratio: float = 0.1
    high_ratio: float = 0.3
    dilate_radius: int = 1

    def __post_init__(self):
        if self.gaussian_sigma <= 0:
            raise ContractError(f"gaussian_sigma must be positive, got {self.gaussian_sigma}")
        if not 0 < self.low_ratio <= self.high_ratio <= 1:
            raise ContractError(
                f"need 0 < low_ratio <= high_ratio <= 1, got "
                f"({self.low_ratio}, {self.high_ratio})")
        if self.dilate_radius < 0:
            raise ContractError(f"dilate_radius must be >= 0, got {self.dilate_radius}")


# -- segmentation ingestion ----------------------------------------------------

def load_segmentation(label_path, conf_path) -> SegmentationInput:
    """Read a 16-bit PGM label map plus an "id confidence" sidecar.

    Sidecar lines hold one "id confidence" pair each; '#' starts a comment
    line. Ids present in the map but absent from the sidecar are an error.
    """
    samples, maxval = read_pgm(label_path)
    if maxval != 65535:
        raise ContractError(
            f"{label_path}: label map must be 16-bit PGM (maxval 65535), got {maxval}")
    regions: list[tuple[int, float]] = []
    seen: set[int] = set()
    with open(conf_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ContractError(
                    f"{conf_path}:{lineno}: expected 'id confidence', got {text!r}")
            try:
                rid = int(parts[0])
                conf = float(parts[1])
            except ValueError as exc:
                raise ContractError(f"{conf_path}:{lineno}: {exc}") from None
            if rid in seen:
                raise ContractError(f"{conf_path}:{lineno}: duplicate id {rid}")
            seen.add(rid)
            regions.append((rid, conf))
    h, w = samples.shape
    return SegmentationInput(width=w, height=h, label_map=samples, regions=regions)


def save_segmentation(seg: SegmentationInput, label_path, conf_path) -> None:
    from .ioutil import atomic_write_text
    from .pnm import write_pgm16

    write_pgm16(label_path, seg.label_map)
    lines = ["# region_id confidence"]
    lines += [f"{rid} {conf:.3f}" for rid, conf in seg.regions]
    atomic_write_text(conf_path, "\n".join(lines) + "\n")


def filter_regions(seg: SegmentationInput, alpha: float) -> SegmentationInput:
    """Keep exactly the regions with confidence >= alpha.

    Pixels of dropped regions become unlabeled (id 0); kept labels are
    untouched, so the retained region count never grows as alpha rises.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    kept = [(rid, conf) for rid, conf in seg.regions if conf >= alpha]
    kept_ids = np.array([rid for rid, _ in kept], dtype=np.int64)
    label_map = np.where(np.isin(seg.label_map, kept_ids), seg.label_map, 0)
    return SegmentationInput(width=seg.width, height=seg.height,
                             label_map=label_map, regions=kept)


# -- the Canny pipeline ----------------------------------------------------------

def _gaussian_kernel(sigma: float) -> np.ndarray:
    # Scalar math.exp and a sequential normalizer keep the taps bit-identical
    # to a plain-Python recipe regardless of numpy's summation strategy.
    radius = int(math.ceil(3.0 * sigma))
    taps = [math.exp(-(i * i) / (2.0 * sigma * sigma))
            for i in range(-radius, radius + 1)]
    total = 0.0
    for t in taps:
        total += t
    return np.array([t / total for t in taps], dtype=np.float64)


def _correlate_rows(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """1-D correlation along rows with edge replication at the borders."""
    radius = len(kernel) // 2
    padded = np.pad(img, ((0, 0), (radius, radius)), mode="edge")
    out = np.zeros_like(img)
    w = img.shape[1]
    for i, coeff in enumerate(kernel):
        out += coeff * padded[:, i:i + w]
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3 sigma), edge-replicated."""
    kernel = _gaussian_kernel(sigma)
    return _correlate_rows(_correlate_rows(img, kernel).T, kernel).T


def sobel_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel gradients with edge replication; returns (gx, gy)."""
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    tl = p[0:h, 0:w]
    tc = p[0:h, 1:w + 1]
    tr = p[0:h, 2:w + 2]
    ml = p[1:h + 1, 0:w]
    mr = p[1:h + 1, 2:w + 2]
    bl = p[2:h + 2, 0:w]
    bc = p[2:h + 2, 1:w + 1]
    br = p[2:h + 2, 2:w + 2]
    gx = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl)
    gy = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr)
    return gx, gy


def _quantize_directions(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Map gradient angles to 4 bins: 0 horizontal, 1 vertical, 2 the
    down-right diagonal, 3 the down-left diagonal. Pure arithmetic, no
    trigonometry, so the binning is bit-stable everywhere."""
    ax = np.abs(gx)
    ay = np.abs(gy)
    bins = np.full(gx.shape, 2, dtype=np.int8)
    bins[ay <= _TAN_22_5 * ax] = 0
    bins[ax <= _TAN_22_5 * ay] = 1
    diag = (bins == 2)
    opposite = diag & (gx * gy < 0)
    bins[opposite] = 3
    return bins


_BIN_OFFSETS = {0: (0, 1), 1: (1, 0), 2: (1, 1), 3: (1, -1)}


def _non_maximum_suppression(mag: np.ndarray, bins: np.ndarray) -> np.ndarray:
    """Keep pixels that dominate both neighbors along the gradient line.

    Ties toward the trailing neighbor are kept and ties toward the leading
    neighbor are dropped, so a two-pixel plateau yields one edge pixel.
    The outer one-pixel border never survives.
    """
    h, w = mag.shape
    keep = np.zeros((h, w), dtype=bool)
    interior = np.zeros((h, w), dtype=bool)
    interior[1:h - 1, 1:w - 1] = True
    for b, (dy, dx) in _BIN_OFFSETS.items():
        sel = interior & (bins == b) & (mag > 0)
        if not sel.any():
            continue
        nxt = np.roll(np.roll(mag, -dy, axis=0), -dx, axis=1)
        prv = np.roll(np.roll(mag, dy, axis=0), dx, axis=1)
        keep |= sel & (mag > nxt) & (mag >= prv)
    return keep


def _hysteresis(mag: np.ndarray, keep: np.ndarray, low_t: float, high_t: float) -> np.ndarray:
    """Strong pixels seed a flood fill through weak pixels, 8-connected."""
    weak = keep & (mag >= low_t)
    edges = keep & (mag >= high_t)
    while True:
        grown = edges.copy()
        grown[1:, :] |= edges[:-1, :]
        grown[:-1, :] |= edges[1:, :]
        grown[:, 1:] |= edges[:, :-1]
        grown[:, :-1] |= edges[:, 1:]
        grown[1:, 1:] |= edges[:-1, :-1]
        grown[1:, :-1] |= edges[:-1, 1:]
        grown[:-1, 1:] |= edges[1:, :-1]
        grown[:-1, :-1] |= edges[1:, 1:]
        grown &= weak
        grown |= edges
        if np.array_equal(grown, edges):
            return edges
        edges = grown


def canny(gray: np.ndarray, p: CannyParams) -> BinaryMask:
    """Edge detection on an (H, W) image in [0, 1].

    Pipeline: Gaussian blur, 3x3 Sobel, 4-bin direction quantization,
    non-maximum suppression, then double-threshold hysteresis with
    thresholds taken as fractions of the maximum gradient magnitude.
    A constant image legitimately yields an all-zero mask.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise ContractError(f"canny expects an (H, W) image, got shape {gray.shape}")
    h, w = gray.shape
    if h < 5 or w < 5:
        raise ContractError(f"canny needs at least 5x5 pixels, got {h}x{w}")
    blurred = gaussian_blur(gray, p.gaussian_sigma)
    gx, gy = sobel_gradients(blurred)
    mag = np.sqrt(gx * gx + gy * gy)
    max_mag = float(mag.max())
    if max_mag <= 0.0:
        return BinaryMask(width=w, height=h, values=np.zeros((h, w), dtype=np.uint8))
    bins = _quantize_directions(gx, gy)
    keep = _non_maximum_suppression(mag, bins)
    edges = _hysteresis(mag, keep, p.low_ratio * max_mag, p.high_ratio * max_mag)
    return BinaryMask(width=w, height=h, values=edges.astype(np.uint8))


# -- mask assembly -----------------------------------------------------------------

def dilate(mask: BinaryMask, radius: int) -> BinaryMask:
    """Chebyshev-ball dilation (a square of side 2r + 1); r = 0 is identity."""
    if radius < 0:
        raise ContractError(f"dilate radius must be >= 0, got {radius}")
    if radius == 0:
        return BinaryMask(width=mask.width, height=mask.height, values=mask.values.copy())
    vals = mask.values.astype(bool)
    for axis in (0, 1):
        acc = vals.copy()
        for r in range(1, radius + 1):
            shifted = np.zeros_like(vals)
            if axis == 0:
                shifted[r:, :] = vals[:-r, :]
                acc |= shifted
                shifted = np.zeros_like(vals)
                shifted[:-r, :] = vals[r:, :]
            else:
                shifted[:, r:] = vals[:, :-r]
                acc |= shifted
                shifted = np.zeros_like(vals)
                shifted[:, :-r] = vals[:, r:]
            acc |= shifted
        vals = acc
    return BinaryMask(width=mask.width, height=mask.height, values=vals.astype(np.uint8))


def region_gray_level(rid: int) -> int:
    """Deterministic gray level in [32, 255] for rendering a region id."""
    return 32 + mix(0x6E4, rid) % 224


def render_label_map(seg: SegmentationInput) -> np.ndarray:
    """Draw regions as flat hashed gray levels on black; values in [0, 1]."""
    out = np.zeros((seg.height, seg.width), dtype=np.float64)
    for rid, _ in seg.regions:
        out[seg.label_map == rid] = region_gray_level(rid) / 255.0
    return out


def region_boundary(label_map: np.ndarray, rid: int) -> np.ndarray:
    """Pixels of a region with a 4-neighbor outside it (image border counts
    as outside), as a bool map."""
    inside = label_map == rid
    padded = np.pad(inside, 1, mode="constant", constant_values=False)
    surrounded = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                  & padded[1:-1, :-2] & padded[1:-1, 2:])
    return inside & ~surrounded


def edge_mask(seg: SegmentationInput, alpha: float, p: CannyParams,
              mode: str = "region-union") -> BinaryMask:
    """Build the binary training mask for one segmentation.

    "composite" renders surviving regions to hashed gray levels and runs
    Canny over the rendering. "region-union" takes each surviving region's
    exact boundary and unions them; this mode makes the mask a pixelwise
    superset whenever alpha decreases. Both finish with dilation. With no
    surviving regions the mask is all zeros and an EmptyMaskWarning fires.
    """
    if mode not in ("composite", "region-union"):
        raise ContractError(f"unknown edge_mask mode {mode!r}")
    kept = filter_regions(seg, alpha)
    if not kept.regions:
        warnings.warn("no regions passed the confidence threshold; mask is empty",
                      EmptyMaskWarning, stacklevel=2)
        zeros = np.zeros((seg.height, seg.width), dtype=np.uint8)
        return BinaryMask(width=seg.width, height=seg.height, values=zeros)
    if mode == "composite":
        base = canny(render_label_map(kept), p)
    else:
        union = np.zeros((seg.height, seg.width), dtype=bool)
        for rid, _ in kept.regions:
            union |= region_boundary(kept.label_map, rid)
        base = BinaryMask(width=seg.width, height=seg.height,
                          values=union.astype(np.uint8))
    return dilate(base, p.dilate_radius)
