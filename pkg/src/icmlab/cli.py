"""Command-line surface for the whole pipeline.

Subcommands: datagen, mask-gen, train (lic|nerv), encode, decode, eval,
rd-curve. Every command is deterministic given its flags and seed, writes
files atomically, and uses stable exit codes: 0 success, 2 usage or
contract violation, 3 numeric abort during training, 4 corrupt data.

Evaluation CSVs use the fixed column order
``alpha,lambda,bpp,mse,masked_mse,psnr,masked_psnr,ssim`` (one row per
model per image; bpp counts payload bits only, excluding the header),
preceded by a comment row recording the exact command line.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import codec as codec_mod
from . import metrics
from . import pnm
from .errors import (BitstreamError, ContractError, FormatError, IcmError,
                     NumericError, TrainAbort)
from .ioutil import atomic_write_bytes, atomic_write_text
from .masks import (CannyParams, edge_mask, load_segmentation, mask_from_pgm,
                    mask_to_pgm)
from .nerv import VideoClip
from .scenes import SceneSpec, generate_synthetic_scene
from .training import (LicExample, TrainConfig, load_checkpoint,
                       save_checkpoint, train_lic, train_nerv)

EXIT_OK = 0
EXIT_CONTRACT = 2
EXIT_NUMERIC = 3
EXIT_CORRUPT = 4

EVAL_COLUMNS = "alpha,lambda,bpp,mse,masked_mse,psnr,masked_psnr,ssim"


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ContractError(f"--size expects HxW, got {text!r}") from None


def _parse_range(text: str) -> tuple[int, int]:
    try:
        a, b = text.split("..")
        return int(a), int(b)
    except ValueError:
        raise ContractError(f"--objects expects a..b, got {text!r}") from None


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ContractError(f"expected a comma-separated float list, got {text!r}") from None


def _check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def _fmt(value: float) -> str:
    return repr(float(value))


# -- subcommand implementations --------------------------------------------------

def _cmd_datagen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h, w = _parse_size(args.size)
    lo, hi = _parse_range(args.objects)
    spec = SceneSpec(height=h, width=w, min_objects=lo, max_objects=hi)
    from .masks import save_segmentation
    from .rng import mix

    for i in range(args.count):
        scene_seed = mix(args.seed, 0xDA7A, i)
        image, seg = generate_synthetic_scene(scene_seed, spec)
        pnm.write_ppm(out / f"image_{i:04d}.ppm", image)
        save_segmentation(seg, out / f"labels_{i:04d}.pgm", out / f"conf_{i:04d}.txt")
    return EXIT_OK


def _canny_params(args) -> CannyParams:
    return CannyParams(gaussian_sigma=args.sigma, low_ratio=args.low,
                       high_ratio=args.high, dilate_radius=args.dilate)


def _cmd_mask_gen(args) -> int:
    alpha = _check_alpha(args.alpha)
    seg = load_segmentation(args.labels, args.conf)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mask = edge_mask(seg, alpha, _canny_params(args), mode=args.mode)
    mask_to_pgm(mask, args.out)
    print(f"coverage={mask.coverage():g}")
    return EXIT_OK


def _load_dataset(data_dir: Path, masks_dir: Path | None) -> list[LicExample]:
    images = sorted(data_dir.glob("image_*.ppm"))
    if not images:
        raise ContractError(f"no image_*.ppm files under {data_dir}")
    examples = []
    for img_path in images:
        mask = None
        if masks_dir is not None:
            mask_path = masks_dir / img_path.name.replace("image_", "mask_").replace(
                ".ppm", ".pgm")
            if not mask_path.exists():
                raise ContractError(f"missing mask file {mask_path}")
            mask = mask_from_pgm(mask_path)
        examples.append(LicExample(image=pnm.read_ppm(img_path), mask=mask))
    return examples


def _load_clip(data_dir: Path, masks_dir: Path | None) -> VideoClip:
    frame_paths = sorted(data_dir.glob("frame_*.ppm"))
    if not frame_paths:
        raise ContractError(f"no frame_*.ppm files under {data_dir}")
    frames = np.stack([pnm.read_ppm(p) for p in frame_paths])
    masks = None
    if masks_dir is not None:
        masks = []
        for p in frame_paths:
            mask_path = masks_dir / p.name.replace("frame_", "mask_").replace(
                ".ppm", ".pgm")
            if not mask_path.exists():
                raise ContractError(f"missing mask file {mask_path}")
            masks.append(mask_from_pgm(mask_path))
    return VideoClip(frames=frames, masks=masks)


def _cmd_train(args, command_line: str) -> int:
    cfg = TrainConfig(objective=args.objective, lmbda=args.lmbda,
                      lmbda2=args.lmbda2, beta=args.beta,
                      alpha=_check_alpha(args.alpha), epochs=args.epochs,
                      seed=args.seed)
    masks_dir = Path(args.masks) if args.masks else None
    if args.model == "lic":
        if cfg.objective not in ("human", "masked", "task"):
            raise ContractError(f"objective {cfg.objective!r} is not valid for lic")
        if cfg.objective == "masked" and masks_dir is None:
            raise ContractError("--objective masked requires --masks")
        dataset = _load_dataset(Path(args.data),
                                masks_dir if cfg.objective == "masked" else None)
        model, log = train_lic(dataset, cfg)
    else:
        if cfg.objective not in ("nerv", "sa-nerv"):
            raise ContractError(f"objective {cfg.objective!r} is not valid for nerv")
        if cfg.objective == "sa-nerv" and masks_dir is None:
            raise ContractError("--objective sa-nerv requires --masks")
        clip = _load_clip(Path(args.data),
                          masks_dir if cfg.objective == "sa-nerv" else None)
        model, log = train_nerv(clip, cfg)
    save_checkpoint(model, args.ckpt)
    atomic_write_text(Path(args.ckpt).with_suffix(".log.csv"),
                      log.to_csv(command=command_line))
    return EXIT_OK


def _cmd_encode(args) -> int:
    model = load_checkpoint(args.ckpt)
    if model.kind != "lic":
        raise ContractError("encode requires a lic checkpoint")
    image = pnm.read_ppm(args.input)
    bs = codec_mod.encode_bitstream(model, image)
    atomic_write_bytes(args.out, bs.to_bytes())
    print(f"bpp={_fmt(metrics.bpp(len(bs.payload), bs.image_w, bs.image_h))}")
    return EXIT_OK


def _cmd_decode(args) -> int:
    model = load_checkpoint(args.ckpt)
    if model.kind != "lic":
        raise ContractError("decode requires a lic checkpoint")
    bs = codec_mod.Bitstream.from_bytes(open(args.input, "rb").read())
    xhat = codec_mod.decode_bitstream(model, bs)
    pnm.write_ppm(args.out, xhat)
    if args.ref:
        ref = pnm.read_ppm(args.ref)
        print(f"psnr={_fmt(metrics.psnr(metrics.mse(ref, xhat)))}")
    return EXIT_OK


def _eval_rows(model, images, segs, alpha: float, lmbda: float,
               canny_params: CannyParams) -> list[str]:
    import warnings

    rows = []
    for image, seg in zip(images, segs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            mask = edge_mask(seg, alpha, canny_params, mode="region-union")
        bs = codec_mod.encode_bitstream(model, image)
        xhat = codec_mod.decode_bitstream(model, bs)
        report = metrics.MetricReport.from_pair(
            image, xhat, mask=mask, payload_bytes=len(bs.payload),
            total_bytes=len(bs.to_bytes()))
        rows.append(f"{_fmt(alpha)},{_fmt(lmbda)},{report.csv_fragment()}")
    return rows


def _load_eval_scenes(data_dir: Path):
    images, segs = [], []
    for img_path in sorted(data_dir.glob("image_*.ppm")):
        stem = img_path.stem.replace("image_", "")
        images.append(pnm.read_ppm(img_path))
        segs.append(load_segmentation(data_dir / f"labels_{stem}.pgm",
                                      data_dir / f"conf_{stem}.txt"))
    if not images:
        raise ContractError(f"no image_*.ppm files under {data_dir}")
    return images, segs


def _cmd_eval(args, command_line: str) -> int:
    images, segs = _load_eval_scenes(Path(args.data))
    alpha = _check_alpha(args.alpha)
    lines = [f"# {command_line}", EVAL_COLUMNS]
    for ckpt in args.ckpt_list.split(","):
        model = load_checkpoint(ckpt.strip())
        if model.kind != "lic":
            raise ContractError(f"{ckpt}: eval requires lic checkpoints")
        lines += _eval_rows(model, images, segs, alpha, args.lmbda, _canny_params(args))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_rd_curve(args, command_line: str) -> int:
    images, segs = _load_eval_scenes(Path(args.data))
    alphas = [_check_alpha(a) for a in _parse_float_list(args.alpha_list)]
    if not alphas:
        raise ContractError("--alpha-list must name at least one value")
    params = _canny_params(args)
    lines = [f"# {command_line}", EVAL_COLUMNS]
    series: dict[str, list[tuple[float, float]]] = {}
    import warnings

    for alpha in alphas:
        dataset = []
        for image, seg in zip(images, segs):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                mask = edge_mask(seg, alpha, params, mode="region-union")
            dataset.append(LicExample(image=image, mask=mask))
        cfg = TrainConfig(objective="masked", lmbda=args.lmbda, alpha=alpha,
                          epochs=args.epochs, seed=args.seed)
        model, _ = train_lic(dataset, cfg)
        rows = _eval_rows(model, images, segs, alpha, args.lmbda, params)
        lines += rows
        pts = []
        for row in rows:
            cols = row.split(",")
            pts.append((float(cols[2]), float(cols[6])))
        series[f"alpha={alpha:g}"] = pts
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    if args.svg:
        from .svgplot import scatter_svg

        atomic_write_text(args.svg, scatter_svg(
            series, xlabel="bits per pixel", ylabel="masked PSNR (dB)",
            title="rate vs in-mask quality"))
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def _add_canny_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--low", type=float, default=0.1)
    p.add_argument("--high", type=float, default=0.3)
    p.add_argument("--dilate", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icmlab",
        description="Edge-mask-guided learned image and video compression lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="write synthetic labeled scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", default="64x64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--objects", default="2..5")

    p = sub.add_parser("mask-gen", help="build an edge mask from a labeled scene")
    p.add_argument("--labels", required=True)
    p.add_argument("--conf", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--mode", choices=("composite", "region-union"),
                   default="region-union")
    _add_canny_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a codec or a video model")
    p.add_argument("model", choices=("lic", "nerv"))
    p.add_argument("--data", required=True)
    p.add_argument("--masks")
    p.add_argument("--objective", required=True,
                   choices=("human", "masked", "task", "nerv", "sa-nerv"))
    p.add_argument("--lambda", dest="lmbda", type=float, default=0.05)
    p.add_argument("--lambda2", dest="lmbda2", type=float, default=0.01)
    p.add_argument("--alpha", type=float, default=0.48)
    p.add_argument("--beta", type=float, default=0.7)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ckpt", required=True)

    p = sub.add_parser("encode", help="compress an image to a bitstream")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("decode", help="reconstruct an image from a bitstream")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ref")

    p = sub.add_parser("eval", help="score checkpoints on a scene directory")
    p.add_argument("--ckpt-list", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.48)
    p.add_argument("--lambda", dest="lmbda", type=float, default=float("nan"))
    _add_canny_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rd-curve", help="train per alpha and emit RD points")
    p.add_argument("--alpha-list", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lmbda", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    _add_canny_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--svg")

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command_line = "icmlab " + " ".join(argv)
    try:
        if args.command == "datagen":
            return _cmd_datagen(args)
        if args.command == "mask-gen":
            return _cmd_mask_gen(args)
        if args.command == "train":
            return _cmd_train(args, command_line)
        if args.command == "encode":
            return _cmd_encode(args)
        if args.command == "decode":
            return _cmd_decode(args)
        if args.command == "eval":
            return _cmd_eval(args, command_line)
        if args.command == "rd-curve":
            return _cmd_rd_curve(args, command_line)
        raise ContractError(f"unknown command {args.command!r}")
    except TrainAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BitstreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except IcmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


def entrypoint() -> None:
    sys.exit(main())
