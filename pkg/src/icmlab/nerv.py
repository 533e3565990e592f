"""Implicit video representation: a network mapping frame index to frame.

The decoder is a small stack: sinusoidal positional encoding of the
normalized frame index, two affine layers, then pixel-shuffle upsampling
blocks and a sigmoid head. Training losses combine per-frame mean
absolute error with a structural-similarity term; the edge-aware variant
adds the same pair computed on mask-multiplied frames on top of the plain
term, so edge regions are deliberately counted twice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, NumericError
from .masks import BinaryMask
from .metrics import ssim_graph


@dataclass(frozen=True)
class NervConfig:
    frame_h: int = 64
    frame_w: int = 64
    base_h: int = 8
    base_w: int = 8
    stage_channels: tuple[int, ...] = (32, 16, 8, 4)
    stem_hidden: int = 256
    pe_base: float = 1.25
    pe_levels: int = 40
    relu_slope: float = 0.2

    def __post_init__(self):
        k = len(self.stage_channels) - 1
        if k < 1:
            raise ContractError("need at least one upsample stage")
        if self.base_h * (2 ** k) != self.frame_h or self.base_w * (2 ** k) != self.frame_w:
            raise ContractError(
                f"base {self.base_h}x{self.base_w} with {k} doubling stages "
                f"does not reach frame size {self.frame_h}x{self.frame_w}")
        if self.pe_base <= 1 or self.pe_levels < 1:
            raise ContractError("positional encoding needs base > 1 and levels >= 1")

    @property
    def num_stages(self) -> int:
        return len(self.stage_channels) - 1

    @property
    def pe_dim(self) -> int:
        return 2 * self.pe_levels

    @classmethod
    def for_frames(cls, frame_h: int, frame_w: int) -> "NervConfig":
        """Pick a base grid and stage count that reach the given frame size:
        as many doubling stages as the dimensions allow, at most three."""
        k = 0
        while (k < 3 and frame_h % (2 ** (k + 1)) == 0
               and frame_w % (2 ** (k + 1)) == 0
               and min(frame_h, frame_w) // (2 ** (k + 1)) >= 4):
            k += 1
        if k == 0:
            raise ContractError(
                f"frame size {frame_h}x{frame_w} must be divisible by 2 "
                f"(with at least 8 pixels per side) to build a decoder")
        return cls(frame_h=frame_h, frame_w=frame_w,
                   base_h=frame_h // (2 ** k), base_w=frame_w // (2 ** k),
                   stage_channels=(32, 16, 8, 4)[: k + 1])


class NervModel:
    kind = "nerv"

    def __init__(self, config: NervConfig, num_frames: int, params: dict[str, Tensor]):
        self.config = config
        self.num_frames = num_frames
        self.params = params

    @staticmethod
    def param_specs(config: NervConfig):
        from .params import ParamSpec

        c0 = config.stage_channels[0]
        stem_out = c0 * config.base_h * config.base_w
        specs = [
            ParamSpec("stem0.w", (config.stem_hidden, config.pe_dim), "he", config.pe_dim),
            ParamSpec("stem0.b", (config.stem_hidden,), "zero"),
            ParamSpec("stem1.w", (stem_out, config.stem_hidden), "he", config.stem_hidden),
            ParamSpec("stem1.b", (stem_out,), "zero"),
        ]
        for i in range(config.num_stages):
            cin = config.stage_channels[i]
            cout = config.stage_channels[i + 1] * 4  # pixel-shuffle eats a factor of 4
            specs.append(ParamSpec(f"up{i}.w", (cout, cin, 3, 3), "he", cin * 9))
            specs.append(ParamSpec(f"up{i}.b", (cout,), "zero"))
        c_last = config.stage_channels[-1]
        specs.append(ParamSpec("head.w", (3, c_last, 3, 3), "he", c_last * 9))
        specs.append(ParamSpec("head.b", (3,), "zero"))
        return specs

    @classmethod
    def init(cls, config: NervConfig, num_frames: int, seed: int = 0) -> "NervModel":
        from .params import init_params

        if num_frames < 1:
            raise ContractError(f"need at least one frame, got {num_frames}")
        return cls(config, num_frames, init_params(cls.param_specs(config), seed))

    @classmethod
    def from_params(cls, params: dict[str, Tensor], meta: np.ndarray) -> "NervModel":
        pe_base, pe_levels, num_frames, base_h, base_w = meta[:5]
        stage_channels = [params["up0.w"].shape[1]]
        i = 0
        while f"up{i}.w" in params:
            stage_channels.append(params[f"up{i}.w"].shape[0] // 4)
            i += 1
        k = len(stage_channels) - 1
        config = NervConfig(
            frame_h=int(base_h) * (2 ** k), frame_w=int(base_w) * (2 ** k),
            base_h=int(base_h), base_w=int(base_w),
            stage_channels=tuple(stage_channels),
            stem_hidden=params["stem0.w"].shape[0],
            pe_base=float(pe_base), pe_levels=int(pe_levels))
        return cls(config, int(num_frames), params)

    def meta(self) -> np.ndarray:
        c = self.config
        return np.array([c.pe_base, c.pe_levels, self.num_frames, c.base_h, c.base_w],
                        dtype=np.float64)


@dataclass
class VideoClip:
    """T frames of shape (3, H, W) in [0, 1], optionally with per-frame masks."""

    frames: np.ndarray
    masks: list[BinaryMask] | None = field(default=None)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ContractError(
                f"clip frames must be (T, 3, H, W), got {self.frames.shape}")
        if self.masks is not None:
            if len(self.masks) != self.num_frames:
                raise ContractError(
                    f"{len(self.masks)} masks for {self.num_frames} frames")
            h, w = self.frames.shape[2:]
            for t, m in enumerate(self.masks):
                if (m.height, m.width) != (h, w):
                    raise ContractError(
                        f"mask {t} is {m.height}x{m.width}, frames are {h}x{w}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def positional_encode(t: int, num_frames: int, base: float, levels: int) -> np.ndarray:
    """Interleaved sin/cos features of the normalized index t / T."""
    if not 0 <= t < num_frames:
        raise ContractError(f"frame index {t} out of range [0, {num_frames})")
    if base <= 1 or levels < 1:
        raise ContractError("positional encoding needs base > 1 and levels >= 1")
    tau = t / num_frames
    out = np.empty(2 * levels, dtype=np.float64)
    for i in range(levels):
        angle = (base ** i) * math.pi * tau
        out[2 * i] = math.sin(angle)
        out[2 * i + 1] = math.cos(angle)
    return out


def nerv_forward(model: NervModel, t: int) -> Tensor:
    """Decode frame ``t`` as a (3, H, W) graph node."""
    cfg = model.config
    pe = ad.constant(positional_encode(t, model.num_frames, cfg.pe_base, cfg.pe_levels))
    h = ad.leaky_relu(ad.linear(pe, model.params["stem0.w"], model.params["stem0.b"]),
                      cfg.relu_slope)
    h = ad.leaky_relu(ad.linear(h, model.params["stem1.w"], model.params["stem1.b"]),
                      cfg.relu_slope)
    out = ad.reshape(h, (cfg.stage_channels[0], cfg.base_h, cfg.base_w))
    for i in range(cfg.num_stages):
        out = ad.conv2d(out, model.params[f"up{i}.w"], model.params[f"up{i}.b"],
                        stride=1, padding=1)
        out = ad.pixel_shuffle(out, 2)
        out = ad.leaky_relu(out, cfg.relu_slope)
    out = ad.conv2d(out, model.params["head.w"], model.params["head.b"],
                    stride=1, padding=1)
    return ad.sigmoid(out)


def frame_fit_term(frame: Tensor, decoded: Tensor, beta: float,
                   mask: BinaryMask | None = None) -> Tensor:
    """beta * MAE + (1 - beta) * (1 - SSIM), optionally on masked frames."""
    if mask is not None:
        m = ad.constant(mask.as_float())
        frame = ad.mask_multiply(frame, m)
        decoded = ad.mask_multiply(decoded, m)
    mae = ad.mean_all(ad.absolute(ad.sub(frame, decoded)))
    dssim = ad.sub(ad.constant(np.asarray(1.0)), ssim_graph(frame, decoded))
    return ad.add(ad.mul(mae, beta), ad.mul(dssim, 1.0 - beta))


def _check_beta(beta: float) -> None:
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must lie in [0, 1], got {beta}")


def loss_nerv(clip: VideoClip, model: NervModel, beta: float = 0.7) -> Tensor:
    """Mean over frames of the fit term; the plain reconstruction objective."""
    _check_beta(beta)
    total = None
    for t in range(clip.num_frames):
        decoded = nerv_forward(model, t)
        term = frame_fit_term(ad.constant(clip.frames[t]), decoded, beta)
        total = term if total is None else ad.add(total, term)
    loss = ad.mul(total, 1.0 / clip.num_frames)
    if not math.isfinite(loss.item()):
        raise NumericError("non-finite video reconstruction loss")
    return loss


def loss_sa_nerv(clip: VideoClip, model: NervModel, beta: float = 0.7) -> Tensor:
    """Plain loss plus the same fit term on mask-multiplied frames.

    The plain term is kept in full, so with all-ones masks the value is
    exactly twice the plain loss.
    """
    _check_beta(beta)
    if clip.masks is None:
        raise ContractError("edge-aware video loss requires per-frame masks")
    plain_total = None
    masked_total = None
    for t in range(clip.num_frames):
        if clip.masks[t] is None:
            raise ContractError(f"missing mask for frame {t}")
        decoded = nerv_forward(model, t)
        frame = ad.constant(clip.frames[t])
        plain = frame_fit_term(frame, decoded, beta)
        masked = frame_fit_term(frame, decoded, beta, clip.masks[t])
        plain_total = plain if plain_total is None else ad.add(plain_total, plain)
        masked_total = masked if masked_total is None else ad.add(masked_total, masked)
    scale = 1.0 / clip.num_frames
    loss = ad.add(ad.mul(plain_total, scale), ad.mul(masked_total, scale))
    if not math.isfinite(loss.item()):
        raise NumericError("non-finite edge-aware video loss")
    return loss
