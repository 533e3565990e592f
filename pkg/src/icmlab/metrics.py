"""Distortion, quality, and rate measurement.

SSIM is built out of differentiable graph ops (an 11x11 Gaussian window,
sigma 1.5, valid window positions only) so the same code serves both as a
reported metric and as a loss term. RGB inputs are scored per channel and
averaged. The float-returning wrappers evaluate the graph on constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .masks import BinaryMask

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def mse(x: np.ndarray, xhat: np.ndarray, mask: BinaryMask | None = None) -> float:
    """Mean of (x*m - xhat*m)^2 over all elements; no mask means all ones.

    The mask multiplies the images before differencing and the mean keeps
    the full element count, so a k-pixel mask on unit error gives k/N.
    """
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ContractError(f"mse: shape mismatch {x.shape} vs {xhat.shape}")
    if mask is not None:
        m = mask.as_float()
        spatial = x.shape[-2:]
        if m.shape != spatial:
            raise ContractError(
                f"mse: mask {m.shape} does not match image spatial dims {spatial}")
        x = x * m
        xhat = xhat * m
    diff = x - xhat
    return float(np.mean(diff * diff))


def psnr(mse_value: float, peak: float = 1.0) -> float:
    """10 log10(peak^2 / mse); zero error maps to the +inf sentinel."""
    if mse_value < 0:
        raise ContractError(f"mse must be non-negative, got {mse_value}")
    if mse_value == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse_value)


def _gaussian_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    coords = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    k = np.exp(-(coords * coords) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    win = np.outer(k, k)
    return win / win.sum()

_WINDOW = _gaussian_window()


def _ssim_plane(x: Tensor, y: Tensor) -> Tensor:
    """SSIM over one (H, W) plane as a scalar graph node."""
    win = ad.constant(_WINDOW.reshape(1, 1, SSIM_WINDOW, SSIM_WINDOW))
    x3 = ad.reshape(x, (1,) + x.shape)
    y3 = ad.reshape(y, (1,) + y.shape)

    def smooth(t: Tensor) -> Tensor:
        return ad.conv2d(t, win)

    mu_x = smooth(x3)
    mu_y = smooth(y3)
    mu_xx = ad.square(mu_x)
    mu_yy = ad.square(mu_y)
    mu_xy = ad.mul(mu_x, mu_y)
    var_x = ad.sub(smooth(ad.square(x3)), mu_xx)
    var_y = ad.sub(smooth(ad.square(y3)), mu_yy)
    cov = ad.sub(smooth(ad.mul(x3, y3)), mu_xy)
    num = ad.mul(ad.add(ad.mul(mu_xy, 2.0), _SSIM_C1), ad.add(ad.mul(cov, 2.0), _SSIM_C2))
    den = ad.mul(ad.add(ad.add(mu_xx, mu_yy), _SSIM_C1),
                 ad.add(ad.add(var_x, var_y), _SSIM_C2))
    return ad.mean_all(ad.div(num, den))


def ssim_graph(x: Tensor, y: Tensor) -> Tensor:
    """Differentiable SSIM for (H, W) or (C, H, W) tensors."""
    if x.shape != y.shape:
        raise ContractError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if x.data.ndim not in (2, 3):
        raise ContractError(f"ssim expects rank 2 or 3, got shape {x.shape}")
    h, w = x.shape[-2:]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ContractError(
            f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")
    if x.data.ndim == 2:
        return _ssim_plane(x, y)
    channels = x.shape[0]
    total = _ssim_plane(ad.select_channel(x, 0), ad.select_channel(y, 0))
    for c in range(1, channels):
        total = ad.add(total, _ssim_plane(ad.select_channel(x, c), ad.select_channel(y, c)))
    return ad.mul(total, 1.0 / channels)


def ssim(x: np.ndarray, xhat: np.ndarray) -> float:
    """Plain-number SSIM of two arrays in [0, 1]."""
    return ssim_graph(ad.constant(x), ad.constant(xhat)).item()


def bpp(bitstream_bytes: int, width: int, height: int) -> float:
    """Bits per pixel for a payload of the given byte length."""
    if width <= 0 or height <= 0:
        raise ContractError(f"image dims must be positive, got {width}x{height}")
    return bitstream_bytes * 8.0 / (width * height)


def empirical_entropy(symbols) -> float:
    """Shannon entropy (bits/symbol) of the empirical histogram."""
    symbols = np.asarray(symbols)
    if symbols.size == 0:
        raise ContractError("empirical_entropy of an empty sequence")
    _, counts = np.unique(symbols, return_counts=True)
    probs = counts / symbols.size
    return float(-(probs * np.log2(probs)).sum())


@dataclass
class MetricReport:
    """One image's worth of quality and rate numbers; any field may be absent.

    Serializes as one CSV fragment in the fixed order
    ``bpp,mse,masked_mse,psnr,masked_psnr,ssim`` (the CLI prefixes the
    alpha and lambda columns); absent fields render as ``nan``.
    """

    mse: float | None = None
    masked_mse: float | None = None
    psnr_db: float | None = None
    masked_psnr_db: float | None = None
    ssim: float | None = None
    bpp: float | None = None
    bitstream_bytes: int | None = None

    CSV_FIELDS = ("bpp", "mse", "masked_mse", "psnr", "masked_psnr", "ssim")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def csv_fragment(self) -> str:
        ordered = (self.bpp, self.mse, self.masked_mse, self.psnr_db,
                   self.masked_psnr_db, self.ssim)
        return ",".join("nan" if v is None else repr(float(v)) for v in ordered)

    @classmethod
    def from_pair(cls, image: np.ndarray, decoded: np.ndarray,
                  mask: BinaryMask | None = None,
                  payload_bytes: int | None = None,
                  total_bytes: int | None = None) -> "MetricReport":
        """Score one reconstruction against its source."""
        err = mse(image, decoded)
        report = cls(mse=err, psnr_db=psnr(err), ssim=ssim(image, decoded),
                     bitstream_bytes=total_bytes)
        if mask is not None:
            masked_err = mse(image, decoded, mask)
            report.masked_mse = masked_err
            report.masked_psnr_db = psnr(masked_err)
        if payload_bytes is not None:
            h, w = image.shape[-2:]
            report.bpp = bpp(payload_bytes, w, h)
        return report
