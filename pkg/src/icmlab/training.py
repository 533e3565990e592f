"""Optimization loop shared by the image codec and the video model.

Runs are fully determined by (seed, config, data): parameters come from
seeded init, quantizer noise is keyed on (seed, epoch, batch, item), and
batch gradients reduce in fixed item order. Checkpoints round-trip every
parameter bit-exactly through a little-endian container format.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import codec as codec_mod
from . import nerv as nerv_mod
from .autodiff import Tensor
from .codec import LicModel, LossParts
from .errors import CheckpointError, ContractError, NumericError, TrainAbort
from .masks import BinaryMask
from .nerv import NervModel, VideoClip
from .params import init_params  # noqa: F401  (re-exported; models build on it)
from .rng import mix

_CKPT_MAGIC = b"SAICKPT1"
_CKPT_VERSION = 1
_KIND_CODES = {"lic": 1, "nerv": 2}
_NOISE_STREAM = 0xB417

OBJECTIVES = ("human", "masked", "task", "nerv", "sa-nerv")


@dataclass
class TrainConfig:
    objective: str = "masked"
    lmbda: float = 0.05        # rate/distortion trade-off weight
    lmbda2: float = 0.01       # task-term weight (objective "task" only)
    beta: float = 0.7          # MAE vs SSIM balance (video objectives)
    alpha: float = 0.48        # confidence threshold used to build the masks
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ContractError(
                f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.objective in ("human", "masked", "task") and self.lmbda <= 0:
            raise ContractError(f"lambda must be positive, got {self.lmbda}")
        if self.objective == "task" and self.lmbda2 <= 0:
            raise ContractError(f"lambda2 must be positive, got {self.lmbda2}")
        if not 0.0 <= self.beta <= 1.0:
            raise ContractError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ContractError("lr, epochs, and batch_size must be positive")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    rate_bits: float
    distortion: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def add(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ContractError("epochs must be strictly increasing")
        self.records.append(record)

    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_csv(self, command: str | None = None) -> str:
        """CSV columns: epoch,loss,rate_bits,distortion,seconds. The seconds
        column holds wall time and is the only non-deterministic field."""
        lines = []
        if command:
            lines.append(f"# {command}")
        lines.append("epoch,loss,rate_bits,distortion,seconds")
        for r in self.records:
            lines.append(f"{r.epoch},{r.loss!r},{r.rate_bits!r},"
                         f"{r.distortion!r},{r.seconds:.3f}")
        return "\n".join(lines) + "\n"

    def deterministic_csv(self) -> str:
        """Same rows minus the wall-time column; byte-stable across runs."""
        lines = ["epoch,loss,rate_bits,distortion"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.loss!r},{r.rate_bits!r},{r.distortion!r}")
        return "\n".join(lines) + "\n"


# -- Adam ------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(step=0,
                   m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied in place in dict order."""
    state.step += 1
    t = state.step
    corr1 = 1.0 - beta1 ** t
    corr2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ContractError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name} shape {p.data.shape}")
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        update = (m / corr1) / (np.sqrt(v / corr2) + eps)
        p.data = p.data - lr * update
    return state


def _collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


def _batches(n: int, batch_size: int) -> list[list[int]]:
    return [list(range(i, min(i + batch_size, n))) for i in range(0, n, batch_size)]


# -- codec training ------------------------------------------------------------------

@dataclass
class LicExample:
    image: np.ndarray
    mask: BinaryMask | None = None


def train_lic(dataset: Sequence[LicExample], cfg: TrainConfig,
              config: codec_mod.LicConfig | None = None) -> tuple[LicModel, TrainLog]:
    """Train a codec on a fixed image set; returns the model and its log."""
    if cfg.objective not in ("human", "masked", "task"):
        raise ContractError(f"objective {cfg.objective!r} is not an image objective")
    if len(dataset) == 0:
        raise ContractError("empty training dataset")
    if cfg.objective == "masked":
        for i, ex in enumerate(dataset):
            if ex.mask is None:
                raise ContractError(f"masked objective but example {i} has no mask")
    model = LicModel.init(config or codec_mod.LicConfig(), seed=cfg.seed)
    task_fn = codec_mod.default_task_head() if cfg.objective == "task" else None
    state = AdamState.zeros(model.params)
    log = TrainLog()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        loss_sum = rate_sum = dist_sum = 0.0
        for bi, batch in enumerate(_batches(len(dataset), cfg.batch_size)):
            parts_list: list[LossParts] = []
            for item in batch:
                noise_seed = mix(cfg.seed, _NOISE_STREAM, epoch, bi, item)
                ex = dataset[item]
                try:
                    if cfg.objective == "human":
                        parts = codec_mod.loss_human(ex.image, model, cfg.lmbda, noise_seed)
                    elif cfg.objective == "masked":
                        parts = codec_mod.loss_masked(ex.image, ex.mask, model,
                                                      cfg.lmbda, noise_seed)
                    else:
                        parts = codec_mod.loss_tl(ex.image, model, cfg.lmbda,
                                                  cfg.lmbda2, task_fn, noise_seed)
                except NumericError as exc:
                    raise TrainAbort(epoch, bi, str(exc)) from None
                parts_list.append(parts)
                loss_sum += parts.total.item()
                rate_sum += parts.rate_bits.item()
                dist_sum += parts.distortion.item()
            batch_loss = parts_list[0].total
            for parts in parts_list[1:]:
                batch_loss = ad.add(batch_loss, parts.total)
            batch_loss = ad.mul(batch_loss, 1.0 / len(parts_list))
            batch_loss.backward()
            adam_step(model.params, _collect_grads(model.params), state, cfg.lr)
        n = len(dataset)
        log.add(EpochRecord(epoch, loss_sum / n, rate_sum / n, dist_sum / n,
                            time.perf_counter() - t0))
    return model, log


# -- video training ---------------------------------------------------------------------

def train_nerv(clip: VideoClip, cfg: TrainConfig,
               config: nerv_mod.NervConfig | None = None) -> tuple[NervModel, TrainLog]:
    """Fit the video model to a clip; returns the model and its log."""
    if cfg.objective not in ("nerv", "sa-nerv"):
        raise ContractError(f"objective {cfg.objective!r} is not a video objective")
    if cfg.objective == "sa-nerv" and clip.masks is None:
        raise ContractError("sa-nerv objective requires per-frame masks")
    if config is None:
        h, w = clip.frames.shape[2:]
        config = nerv_mod.NervConfig.for_frames(h, w)
    model = NervModel.init(config, clip.num_frames, seed=cfg.seed)
    state = AdamState.zeros(model.params)
    log = TrainLog()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        loss_sum = 0.0
        for bi, batch in enumerate(_batches(clip.num_frames, cfg.batch_size)):
            terms: list[Tensor] = []
            for t in batch:
                decoded = nerv_mod.nerv_forward(model, t)
                frame = ad.constant(clip.frames[t])
                term = nerv_mod.frame_fit_term(frame, decoded, cfg.beta)
                if cfg.objective == "sa-nerv":
                    masked = nerv_mod.frame_fit_term(frame, decoded, cfg.beta,
                                                     clip.masks[t])
                    term = ad.add(term, masked)
                terms.append(term)
                loss_sum += term.item()
            batch_loss = terms[0]
            for term in terms[1:]:
                batch_loss = ad.add(batch_loss, term)
            batch_loss = ad.mul(batch_loss, 1.0 / len(terms))
            if not np.isfinite(batch_loss.item()):
                raise TrainAbort(epoch, bi)
            batch_loss.backward()
            adam_step(model.params, _collect_grads(model.params), state, cfg.lr)
        n = clip.num_frames
        log.add(EpochRecord(epoch, loss_sum / n, 0.0, loss_sum / n,
                            time.perf_counter() - t0))
    return model, log


# -- checkpoints ----------------------------------------------------------------------------

def _pack_tensor(name: str, data: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    out = struct.pack("<H", len(encoded)) + encoded
    out += struct.pack("<B", data.ndim)
    out += struct.pack(f"<{data.ndim}I", *data.shape)
    out += data.astype("<f8").tobytes()
    return out


def checkpoint_bytes(model: LicModel | NervModel) -> bytes:
    """Little-endian container: magic, version, model kind, then named
    float64 tensors. Extra metadata rides along as a tensor for the video
    model (encoding config and frame count)."""
    tensors: list[tuple[str, np.ndarray]] = []
    if isinstance(model, NervModel):
        tensors.append(("__meta__", model.meta()))
    tensors += [(name, p.data) for name, p in model.params.items()]
    blob = bytearray()
    blob += _CKPT_MAGIC
    blob += struct.pack("<H", _CKPT_VERSION)
    blob += struct.pack("<B", _KIND_CODES[model.kind])
    blob += struct.pack("<I", len(tensors))
    for name, data in tensors:
        blob += _pack_tensor(name, data)
    return bytes(blob)


def save_checkpoint(model: LicModel | NervModel, path) -> None:
    from .ioutil import atomic_write_bytes

    atomic_write_bytes(path, checkpoint_bytes(model))


def load_checkpoint(path) -> LicModel | NervModel:
    blob = open(path, "rb").read()
    if blob[:8] != _CKPT_MAGIC:
        raise CheckpointError(
            f"{path}: bad magic {blob[:8]!r} (expected {_CKPT_MAGIC!r})")
    off = 8
    try:
        (version,) = struct.unpack_from("<H", blob, off)
        off += 2
        if version != _CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (kind_code,) = struct.unpack_from("<B", blob, off)
        off += 1
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            end = off + 8 * n
            if end > len(blob):
                raise CheckpointError(
                    f"{path}: tensor {name!r} truncated at byte {len(blob)} "
                    f"(need {end})")
            tensors[name] = np.frombuffer(blob[off:end], dtype="<f8").reshape(shape).copy()
            off = end
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated at byte {off}: {exc}") from None
    if kind_code == _KIND_CODES["lic"]:
        params = {k: ad.parameter(v) for k, v in tensors.items()}
        return LicModel.from_params(params)
    if kind_code == _KIND_CODES["nerv"]:
        meta = tensors.pop("__meta__", None)
        if meta is None:
            raise CheckpointError(f"{path}: video checkpoint lacks __meta__")
        params = {k: ad.parameter(v) for k, v in tensors.items()}
        return NervModel.from_params(params, meta)
    raise CheckpointError(f"{path}: unknown model kind {kind_code}")
