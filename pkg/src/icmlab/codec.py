"""The learned image codec: transforms, rate model, losses, bitstream.

The analysis transform is three stride-2 convolutions (3 -> 32 -> 64 ->
latent channels, kernel 5, leaky-relu 0.2 between layers); synthesis
mirrors it with nearest-neighbor upsampling plus convolution and a
sigmoid head, so decoded pixels always land in [0, 1]. Each latent
channel carries a learnable mean and log-scale for a discretized-Gaussian
rate model, which doubles as the probability table for a real range
coder at test time.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import rangecoder as rc
from .autodiff import Tensor
from .errors import BitstreamError, ContractError, NumericError
from .masks import BinaryMask
from .rng import mix, random_floats

LIKELIHOOD_FLOOR = 1e-12
SYMBOL_MIN = -64
SYMBOL_MAX = 63
_NUM_BINS = SYMBOL_MAX - SYMBOL_MIN + 1  # 128 symbol bins
_MAGIC = b"SAIBITS1"
_NOISE_TAG = 0x51

# Rate-distortion losses follow the standard learned-compression scaling:
# rate as bits per pixel and squared error on 8-bit-scaled pixels, so that
# the usual lambda range (0.01..0.25) trades the two terms meaningfully.
PIXEL_SCALE = 255.0 ** 2

# fixed seed for the default task head so the stand-in objective is stable
_TASK_HEAD_SEED = 0x7A5C

TaskLossFn = Callable[[Tensor], Tensor]


@dataclass(frozen=True)
class LicConfig:
    latent_channels: int = 48
    hidden_channels: tuple[int, int] = (32, 64)
    kernel: int = 5
    relu_slope: float = 0.2

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.hidden_channels) + 1)


class LicModel:
    """Parameter container for one codec instance."""

    kind = "lic"

    def __init__(self, config: LicConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @staticmethod
    def param_specs(config: LicConfig):
        from .params import ParamSpec

        k = config.kernel
        chans = (3,) + config.hidden_channels + (config.latent_channels,)
        specs = []
        for i in range(len(chans) - 1):
            cin, cout = chans[i], chans[i + 1]
            specs.append(ParamSpec(f"enc{i}.w", (cout, cin, k, k), "he", cin * k * k))
            specs.append(ParamSpec(f"enc{i}.b", (cout,), "zero"))
        rev = tuple(reversed(chans))
        for i in range(len(rev) - 1):
            cin, cout = rev[i], rev[i + 1]
            specs.append(ParamSpec(f"dec{i}.w", (cout, cin, k, k), "he", cin * k * k))
            specs.append(ParamSpec(f"dec{i}.b", (cout,), "zero"))
        specs.append(ParamSpec("entropy.mu", (config.latent_channels,), "zero"))
        specs.append(ParamSpec("entropy.log_sigma", (config.latent_channels,), "zero"))
        return specs

    @classmethod
    def init(cls, config: LicConfig = LicConfig(), seed: int = 0) -> "LicModel":
        from .params import init_params

        return cls(config, init_params(cls.param_specs(config), seed))

    @classmethod
    def from_params(cls, params: dict[str, Tensor]) -> "LicModel":
        latent = params["entropy.mu"].shape[0]
        hidden = []
        i = 1
        while f"enc{i}.w" in params:
            hidden.append(params[f"enc{i - 1}.w"].shape[0])
            i += 1
        kernel = params["enc0.w"].shape[2]
        config = LicConfig(latent_channels=latent, hidden_channels=tuple(hidden),
                           kernel=kernel)
        return cls(config, params)

    def mu(self) -> np.ndarray:
        return self.params["entropy.mu"].data

    def sigma(self) -> np.ndarray:
        return np.exp(self.params["entropy.log_sigma"].data)


def analysis(model: LicModel, x: Tensor | np.ndarray) -> Tensor:
    """Encode a (3, H, W) image in [0, 1] into a latent tensor."""
    xt = x if isinstance(x, Tensor) else ad.constant(x)
    if xt.data.ndim != 3 or xt.shape[0] != 3:
        raise ContractError(f"analysis expects a (3, H, W) image, got shape {xt.shape}")
    factor = model.config.downsample_factor
    _, h, w = xt.shape
    if h % factor or w % factor:
        raise ContractError(
            f"image dims {h}x{w} are not divisible by {factor}; "
            f"pad the image first (pad_image/encode_bitstream do this)")
    cfg = model.config
    p = cfg.kernel // 2
    out = xt
    n_layers = len(cfg.hidden_channels) + 1
    for i in range(n_layers):
        out = ad.conv2d(out, model.params[f"enc{i}.w"], model.params[f"enc{i}.b"],
                        stride=2, padding=p)
        if i < n_layers - 1:
            out = ad.leaky_relu(out, cfg.relu_slope)
    return out


def synthesis(model: LicModel, y: Tensor) -> Tensor:
    """Decode a latent tensor back to a (3, H, W) image in [0, 1]."""
    cfg = model.config
    p = cfg.kernel // 2
    out = y
    n_layers = len(cfg.hidden_channels) + 1
    for i in range(n_layers):
        out = ad.upsample_nearest(out, 2)
        out = ad.conv2d(out, model.params[f"dec{i}.w"], model.params[f"dec{i}.b"],
                        stride=1, padding=p)
        if i < n_layers - 1:
            out = ad.leaky_relu(out, cfg.relu_slope)
    return ad.sigmoid(out)


def relax_quantize(y: Tensor, model: LicModel, mode: str, noise_seed: int = 0) -> Tensor:
    """Quantizer stand-ins for the two phases.

    "train" adds seeded uniform noise in (-0.5, 0.5), keeping the graph
    differentiable; "test" rounds the mean-removed latent and clamps it to
    the codable symbol range, exactly what the bitstream path reproduces.
    """
    if mode == "train":
        noise = random_floats(mix(noise_seed, _NOISE_TAG), y.size).reshape(y.shape) - 0.5
        return ad.add(y, ad.constant(noise))
    if mode == "test":
        symbols = quantize_to_symbols(y.data, model.mu())
        return ad.constant(dequantize_symbols(symbols, model.mu()))
    raise ContractError(f"unknown quantize mode {mode!r}")


def quantize_to_symbols(y: np.ndarray, mu: np.ndarray) -> np.ndarray:
    centered = np.rint(y - mu[:, None, None])
    return np.clip(centered, SYMBOL_MIN, SYMBOL_MAX).astype(np.int64)


def dequantize_symbols(symbols: np.ndarray, mu: np.ndarray) -> np.ndarray:
    return symbols.astype(np.float64) + mu[:, None, None]


def rate_estimate(y_tilde: Tensor, model: LicModel) -> Tensor:
    """Total coding cost in bits under the per-channel Gaussian model.

    Each element's likelihood is the Gaussian mass of a unit-width bin
    around it, floored at 1e-12 before the log so the graph never sees
    log(0). Differentiable in the latent, the means, and the log-scales.
    """
    if y_tilde.data.ndim != 3:
        raise ContractError(f"rate_estimate expects (C, h, w), got shape {y_tilde.shape}")
    c, h, w = y_tilde.shape
    mu = model.params["entropy.mu"]
    log_sigma = model.params["entropy.log_sigma"]
    if mu.shape != (c,):
        raise ContractError(
            f"latent has {c} channels but entropy model has {mu.shape[0]}")
    mu_field = ad.expand_channels(mu, (h, w))
    sigma_field = ad.expand_channels(ad.exp(log_sigma), (h, w))
    centered = ad.sub(y_tilde, mu_field)
    upper = ad.normal_cdf(ad.div(ad.add(centered, 0.5), sigma_field))
    lower = ad.normal_cdf(ad.div(ad.sub(centered, 0.5), sigma_field))
    likelihood = ad.clamp_min(ad.sub(upper, lower), LIKELIHOOD_FLOOR)
    return ad.mul(ad.sum_all(ad.log(likelihood)), -1.0 / ad.LN2)


@dataclass
class LossParts:
    """A loss value with its pieces; ``decoded`` is the reconstruction node.

    ``total`` composes the pieces as bits/pixel + lambda * 255^2 * mse;
    ``rate_bits`` stays in raw total bits and ``distortion`` in unit-range
    mse so logs and reports keep their natural units.
    """

    total: Tensor
    rate_bits: Tensor
    distortion: Tensor
    decoded: Tensor


def masked_mse_node(x: Tensor, xhat: Tensor, mask: BinaryMask | None) -> Tensor:
    """mean((x*m - xhat*m)^2) over all elements; mask broadcast over channels."""
    if mask is not None:
        spatial = x.shape[-2:]
        if (mask.height, mask.width) != spatial:
            raise ContractError(
                f"mask {mask.height}x{mask.width} does not match image "
                f"spatial dims {spatial}")
        m = ad.constant(mask.as_float())
        x = ad.mask_multiply(x, m)
        xhat = ad.mask_multiply(xhat, m)
    return ad.mean_all(ad.square(ad.sub(x, xhat)))


def _check_finite(parts: LossParts, context: str) -> LossParts:
    total = parts.total.item()
    if not math.isfinite(total):
        raise NumericError(
            f"non-finite {context}: rate={parts.rate_bits.item()!r} "
            f"distortion={parts.distortion.item()!r}")
    return parts


def _rd_loss(x, model: LicModel, lmbda: float, mask: BinaryMask | None,
             noise_seed: int) -> LossParts:
    if lmbda <= 0:
        raise ContractError(f"lambda must be positive, got {lmbda}")
    xt = x if isinstance(x, Tensor) else ad.constant(x)
    y = analysis(model, xt)
    y_tilde = relax_quantize(y, model, "train", noise_seed)
    bits = rate_estimate(y_tilde, model)
    xhat = synthesis(model, y_tilde)
    distortion = masked_mse_node(xt, xhat, mask)
    num_pixels = xt.shape[1] * xt.shape[2]
    total = ad.add(ad.mul(bits, 1.0 / num_pixels),
                   ad.mul(distortion, lmbda * PIXEL_SCALE))
    return _check_finite(LossParts(total, bits, distortion, xhat), "rate-distortion loss")


def loss_human(x, model: LicModel, lmbda: float, noise_seed: int = 0) -> LossParts:
    """Classic rate-distortion objective: rate term + lambda * mse(x, xhat),
    composed at the standard bits-per-pixel / 8-bit-error scale."""
    return _rd_loss(x, model, lmbda, None, noise_seed)


def loss_masked(x, mask: BinaryMask, model: LicModel, lmbda: float,
                noise_seed: int = 0) -> LossParts:
    """Region-restricted objective: rate term + lambda * mse(x*m, xhat*m).

    The distortion averages over all pixels (zeros included), so an
    all-ones mask makes this bit-identical to ``loss_human`` and pixels
    outside the mask contribute no reconstruction gradient at all.
    """
    if mask is None:
        raise ContractError("loss_masked requires a mask")
    return _rd_loss(x, model, lmbda, mask, noise_seed)


def loss_tl(x, model: LicModel, lmbda1: float, lmbda2: float,
            task: TaskLossFn | None = None, noise_seed: int = 0) -> LossParts:
    """Task-augmented objective: rate term + lambda1 * mse + lambda2 * task(xhat)."""
    if lmbda1 < 0 or lmbda2 < 0:
        raise ContractError(f"task-loss weights must be >= 0, got ({lmbda1}, {lmbda2})")
    if task is None:
        task = default_task_head()
    xt = x if isinstance(x, Tensor) else ad.constant(x)
    y = analysis(model, xt)
    y_tilde = relax_quantize(y, model, "train", noise_seed)
    bits = rate_estimate(y_tilde, model)
    xhat = synthesis(model, y_tilde)
    distortion = masked_mse_node(xt, xhat, None)
    task_term = task(xhat)
    if not isinstance(task_term, Tensor) or task_term.size != 1:
        raise ContractError("task head must return a scalar graph node")
    num_pixels = xt.shape[1] * xt.shape[2]
    total = ad.add(ad.add(ad.mul(bits, 1.0 / num_pixels),
                          ad.mul(distortion, lmbda1 * PIXEL_SCALE)),
                   ad.mul(task_term, lmbda2))
    return _check_finite(LossParts(total, bits, distortion, xhat), "task loss")


def default_task_head(seed: int = _TASK_HEAD_SEED, target: float = 0.5) -> TaskLossFn:
    """A differentiable stand-in for a recognition model: the mean squared
    response of a fixed seeded 3x3 filter against a constant target."""
    kernel = ad.constant(
        (random_floats(mix(seed, 3), 27).reshape(1, 3, 3, 3) - 0.5))

    def head(xhat: Tensor) -> Tensor:
        response = ad.conv2d(xhat, kernel, stride=1, padding=1)
        return ad.mean_all(ad.square(ad.sub(response, target)))

    return head


# -- real bitstream -----------------------------------------------------------

@dataclass
class Bitstream:
    """Entropy-coded latent plus the header needed to reproduce it."""

    image_w: int
    image_h: int
    padded_w: int
    padded_h: int
    channels: int
    latent_h: int
    latent_w: int
    mu: np.ndarray      # float32 per channel
    sigma: np.ndarray   # float32 per channel
    payload: bytes

    def to_bytes(self) -> bytes:
        head = bytearray()
        head += _MAGIC
        head += struct.pack("<IIII", self.image_w, self.image_h,
                            self.padded_w, self.padded_h)
        head += struct.pack("<HHH", self.channels, self.latent_h, self.latent_w)
        for c in range(self.channels):
            head += struct.pack("<ff", float(self.mu[c]), float(self.sigma[c]))
        head += struct.pack("<I", len(self.payload))
        return bytes(head) + self.payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Bitstream":
        if blob[:8] != _MAGIC:
            raise BitstreamError(
                f"bad magic {blob[:8]!r} at byte 0 (expected {_MAGIC!r})")
        off = 8
        try:
            image_w, image_h, padded_w, padded_h = struct.unpack_from("<IIII", blob, off)
            off += 16
            channels, latent_h, latent_w = struct.unpack_from("<HHH", blob, off)
            off += 6
            mu = np.empty(channels, dtype=np.float32)
            sigma = np.empty(channels, dtype=np.float32)
            for c in range(channels):
                mu[c], sigma[c] = struct.unpack_from("<ff", blob, off)
                off += 8
            (payload_len,) = struct.unpack_from("<I", blob, off)
            off += 4
        except struct.error as exc:
            raise BitstreamError(f"truncated header at byte {off}: {exc}") from None
        payload = blob[off:off + payload_len]
        if len(payload) < payload_len:
            raise BitstreamError(
                f"payload truncated: header promises {payload_len} bytes, "
                f"found {len(payload)}")
        return cls(image_w, image_h, padded_w, padded_h, channels,
                   latent_h, latent_w, mu, sigma, payload)


def pad_image(x: np.ndarray, factor: int) -> np.ndarray:
    """Reflect-pad bottom/right up to the next multiple of ``factor``."""
    _, h, w = x.shape
    ph = (-h) % factor
    pw = (-w) % factor
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="reflect")


def channel_pmf(sigma_c: float) -> np.ndarray:
    """Discretized-Gaussian pmf over the 128 symbol bins, tails folded in."""
    edges = (np.arange(SYMBOL_MIN, SYMBOL_MAX + 1) + 0.5) / sigma_c
    cdf = np.empty(_NUM_BINS + 1, dtype=np.float64)
    cdf[0] = 0.0
    cdf[-1] = 1.0
    from scipy.special import erf

    cdf[1:-1] = 0.5 * (1.0 + erf(edges[:-1] / np.sqrt(2.0)))
    return np.diff(cdf)


def _channel_tables(model: LicModel) -> list[np.ndarray]:
    """One quantized cumulative table per latent channel (derived from the
    full-precision model parameters, identically at encode and decode)."""
    return [rc.cdf_from_freq(rc.quantize_pmf(channel_pmf(float(s))))
            for s in model.sigma()]


def encode_bitstream(model: LicModel, x: np.ndarray) -> Bitstream:
    """Compress a (3, H, W) image in [0, 1] into a decodable byte stream."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ContractError(f"encode expects a (3, H, W) image, got shape {x.shape}")
    factor = model.config.downsample_factor
    _, h, w = x.shape
    padded = pad_image(x, factor)
    _, ph, pw = padded.shape
    y = analysis(model, padded).data
    symbols = quantize_to_symbols(y, model.mu())
    tables = _channel_tables(model)
    enc = rc.RangeEncoder()
    bins = symbols - SYMBOL_MIN
    for c in range(symbols.shape[0]):
        cdf = tables[c]
        for s in bins[c].ravel():
            enc.encode(int(cdf[s]), int(cdf[s + 1]), rc.PROB_TOTAL)
    payload = enc.finish()
    return Bitstream(
        image_w=w, image_h=h, padded_w=pw, padded_h=ph,
        channels=symbols.shape[0], latent_h=symbols.shape[1], latent_w=symbols.shape[2],
        mu=model.mu().astype(np.float32), sigma=model.sigma().astype(np.float32),
        payload=payload)


def decode_latent_symbols(model: LicModel, bs: Bitstream) -> np.ndarray:
    """Entropy-decode the quantized latent; raises on truncation."""
    _check_model_compat(model, bs)
    tables = _channel_tables(model)
    dec = rc.RangeDecoder(bs.payload)
    per_channel = bs.latent_h * bs.latent_w
    out = np.empty((bs.channels, bs.latent_h, bs.latent_w), dtype=np.int64)
    for c in range(bs.channels):
        cdf = tables[c]
        flat = np.empty(per_channel, dtype=np.int64)
        for i in range(per_channel):
            try:
                flat[i] = dec.decode(cdf, rc.PROB_TOTAL)
            except BitstreamError as exc:
                raise BitstreamError(
                    f"payload truncated at symbol {c * per_channel + i} of "
                    f"{bs.channels * per_channel}: {exc}") from None
        out[c] = flat.reshape(bs.latent_h, bs.latent_w) + SYMBOL_MIN
    return out


def _check_model_compat(model: LicModel, bs: Bitstream) -> None:
    if bs.channels != model.config.latent_channels:
        raise ContractError(
            f"bitstream has {bs.channels} latent channels, model has "
            f"{model.config.latent_channels}")
    mu32 = model.mu().astype(np.float32)
    sigma32 = model.sigma().astype(np.float32)
    if (np.abs(mu32 - bs.mu).max() > 1e-6
            or np.abs(sigma32 - bs.sigma).max() > 1e-6):
        raise ContractError(
            "bitstream entropy parameters do not match the model "
            "(mismatch beyond 1e-6); refusing to decode")


def decode_bitstream(model: LicModel, bs: Bitstream) -> np.ndarray:
    """Reconstruct the image: decode symbols, add back the channel means,
    run synthesis, and crop away the encode-time padding."""
    symbols = decode_latent_symbols(model, bs)
    y_hat = dequantize_symbols(symbols, model.mu())
    xhat = synthesis(model, ad.constant(y_hat)).data
    return xhat[:, :bs.image_h, :bs.image_w].copy()
