"""Command-line surface.

Subcommands: synth-data, pretrain, train-taming-unet,
train-taming-decoder, enhance, eval, ablate. Every run writes a resolved
configuration echo next to its outputs and all randomness flows from
named seeds, so reruns with identical configs are byte-stable.

Exit codes: 0 success, 1 configuration/runtime error (single
machine-parsable line on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import backbone as bb
from . import training as tr
from .config import resolve_config, write_config_echo
from .container import read_container, write_container
from .errors import ConfigError, DarkwaveError
from .inference import (
    AblationTamings,
    EnhanceConfig,
    ablation_variants,
    enhance,
    evaluate_pairs,
    sample_latent,
)
from .metrics import write_report
from .rawproc import (
    BayerRaw,
    load_dataset,
    read_pair,
    synthesize_dataset,
    write_ppm,
)
from .taming import CONDITIONING_MODES, build_conditioning, load_taming_set, save_taming_set
from .wavelets import WaveletSpec, dwt_pyramid


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; CLI flags override its values")


def _require_dir(path: str | None, flag: str) -> Path:
    if not path:
        raise ConfigError(flag, "required artifact path missing")
    p = Path(path)
    if not p.exists():
        raise ConfigError(flag, f"missing artifact: {p}")
    return p


def _load_bundle(path: str, flag: str = "bundle") -> bb.BackboneBundle:
    return bb.load_bundle(_require_dir(path, flag))


def _load_taming(path: str | None, flag: str, bundle: bb.BackboneBundle, expect_owner: str, conditioning: str):
    if path is None:
        return None
    tset, meta = load_taming_set(_require_dir(path, flag))
    if tset.owner != expect_owner:
        raise ConfigError(flag, f"expected a {expect_owner} taming set, found {tset.owner}")
    if meta.get("bundle_checksum") != bundle.parameter_checksum():
        raise ConfigError(flag, "taming set was trained for a different backbone bundle")
    if tset.conditioning != conditioning:
        raise ConfigError(
            flag, f"taming set trained for conditioning={tset.conditioning!r}, run asks {conditioning!r}"
        )
    return tset


# ---------------------------------------------------------------------------
# Subcommands

def cmd_synth_data(args) -> int:
    defaults = {
        "out": None, "count": 8, "seed": 0, "size": 64,
        "ratio": 250.0, "shot_gain": 1.0, "read_sigma": 3.0,
    }
    cfg = resolve_config(defaults, args.config, {
        "out": args.out, "count": args.count, "seed": args.seed, "size": args.size,
        "ratio": args.ratio, "shot_gain": args.shot_gain, "read_sigma": args.read_sigma,
    })
    if not cfg["out"]:
        raise ConfigError("out", "output directory required")
    synthesize_dataset(
        cfg["out"], count=int(cfg["count"]), seed=int(cfg["seed"]),
        size=(int(cfg["size"]), int(cfg["size"])), ratio=float(cfg["ratio"]),
        shot_gain=float(cfg["shot_gain"]), read_sigma=float(cfg["read_sigma"]),
    )
    write_config_echo(cfg["out"], cfg)
    print(f"wrote {cfg['count']} pairs to {cfg['out']}")
    return 0


def cmd_pretrain(args) -> int:
    defaults = {
        "data": None, "out": None, "holdout": 8, "seed": 0,
        "ae_steps": 2400, "unet_steps": 1500, "batch_size": 8,
        "ae_lr": 3e-3, "unet_lr": 1e-3, "min_recon_psnr": 28.0, "min_unet_drop": 0.5,
        "timesteps": 1000,
    }
    cfg = resolve_config(defaults, args.config, {
        "data": args.data, "out": args.out, "holdout": args.holdout, "seed": args.seed,
        "ae_steps": args.ae_steps, "unet_steps": args.unet_steps, "batch_size": args.batch_size,
        "ae_lr": args.ae_lr, "unet_lr": args.unet_lr, "min_recon_psnr": args.min_recon_psnr,
        "min_unet_drop": args.min_unet_drop, "timesteps": args.timesteps,
    })
    pairs, _, manifest = load_dataset(_require_dir(cfg["data"], "data"))
    if not cfg["out"]:
        raise ConfigError("out", "output directory required")
    holdout_n = int(cfg["holdout"])
    if holdout_n < 1 or holdout_n >= len(pairs):
        raise ConfigError("holdout", f"needs 1 <= holdout < {len(pairs)}")
    images = np.stack([p.target.data for p in pairs])
    size = int(manifest["image_size"][0])
    pre_cfg = bb.PretrainConfig(
        seed=int(cfg["seed"]), ae_steps=int(cfg["ae_steps"]), unet_steps=int(cfg["unet_steps"]),
        batch_size=int(cfg["batch_size"]), ae_lr=float(cfg["ae_lr"]), unet_lr=float(cfg["unet_lr"]),
        min_recon_psnr=float(cfg["min_recon_psnr"]), min_unet_loss_drop=float(cfg["min_unet_drop"]),
        arch=bb.ArchConfig(image_size=size),
    )
    schedule = bb.DiffusionSchedule(timesteps=int(cfg["timesteps"]))
    bundle = bb.pretrain_backbone(images[:-holdout_n], images[-holdout_n:], pre_cfg, schedule)
    bb.save_bundle(bundle, cfg["out"])
    write_config_echo(cfg["out"], cfg)
    print(f"pretrained backbone saved to {cfg['out']} (checksum {bundle.parameter_checksum()[:12]})")
    return 0


def cmd_train_taming_unet(args) -> int:
    defaults = {
        "data": None, "bundle": None, "out": None, "conditioning": "dwt",
        "epochs": 100, "batch_size": 8, "lr": 1e-4, "seed": 0, "hidden": 16,
    }
    cfg = resolve_config(defaults, args.config, {
        "data": args.data, "bundle": args.bundle, "out": args.out, "conditioning": args.conditioning,
        "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr,
        "seed": args.seed, "hidden": args.hidden,
    })
    pairs, _, _ = load_dataset(_require_dir(cfg["data"], "data"))
    bundle = _load_bundle(cfg["bundle"])
    if not cfg["out"]:
        raise ConfigError("out", "output directory required")
    out = Path(cfg["out"])
    train_cfg = tr.TrainConfig(
        stage="unet", epochs=int(cfg["epochs"]), batch_size=int(cfg["batch_size"]),
        learning_rate=float(cfg["lr"]), seed=int(cfg["seed"]),
    )
    log = tr.TrainingLogger(out / "train_log.jsonl")
    result = tr.train_unet_taming(pairs, bundle, train_cfg, conditioning=cfg["conditioning"],
                                  hidden=int(cfg["hidden"]), log=log)
    save_taming_set(result.taming_set, out, bundle.parameter_checksum())
    write_config_echo(out, cfg)
    first, last = result.moving_average()
    print(f"unet taming trained: {result.steps} steps, loss {first:.4f} -> {last:.4f}")
    return 0


def cmd_train_taming_decoder(args) -> int:
    defaults = {
        "data": None, "bundle": None, "unet_taming": None, "out": None, "conditioning": "dwt",
        "epochs": 30, "batch_size": 8, "lr": 1e-4, "seed": 0, "hidden": 16,
        "cache_steps": 20, "cache_seed": 0,
    }
    cfg = resolve_config(defaults, args.config, {
        "data": args.data, "bundle": args.bundle, "unet_taming": args.unet_taming, "out": args.out,
        "conditioning": args.conditioning, "epochs": args.epochs, "batch_size": args.batch_size,
        "lr": args.lr, "seed": args.seed, "hidden": args.hidden,
        "cache_steps": args.cache_steps, "cache_seed": args.cache_seed,
    })
    pairs, _, _ = load_dataset(_require_dir(cfg["data"], "data"))
    bundle = _load_bundle(cfg["bundle"])
    unet_set = _load_taming(cfg["unet_taming"], "unet_taming", bundle, "unet", cfg["conditioning"])
    if unet_set is None:
        raise ConfigError("unet_taming", "stage-1 UNet taming set required")
    if not cfg["out"]:
        raise ConfigError("out", "output directory required")
    out = Path(cfg["out"])
    cache = tr.generate_latent_cache(pairs, bundle, unet_set, int(cfg["cache_steps"]), int(cfg["cache_seed"]))
    train_cfg = tr.TrainConfig(
        stage="decoder", epochs=int(cfg["epochs"]), batch_size=int(cfg["batch_size"]),
        learning_rate=float(cfg["lr"]), seed=int(cfg["seed"]),
    )
    log = tr.TrainingLogger(out / "train_log.jsonl")
    result = tr.train_decoder_taming(pairs, cache, bundle, train_cfg, conditioning=cfg["conditioning"],
                                     hidden=int(cfg["hidden"]), log=log)
    save_taming_set(result.taming_set, out, bundle.parameter_checksum())
    write_config_echo(out, cfg)
    first, last = result.moving_average()
    print(f"decoder taming trained: {result.steps} steps, loss {first:.4f} -> {last:.4f}")
    return 0


def _read_input_raw(path: Path, ratio: float | None) -> tuple[BayerRaw, float]:
    if path.suffix == ".pair":
        pair = read_pair(path)
        return pair.low, float(ratio if ratio is not None else pair.ratio)
    mosaic = read_container(path)
    if mosaic.ndim != 2 or mosaic.dtype != np.uint16:
        raise ConfigError("input", "raw tensor input must be a 2-D uint16 mosaic")
    if ratio is None:
        raise ConfigError("ratio", "explicit --ratio required for raw tensor inputs")
    return BayerRaw(data=mosaic), float(ratio)


def cmd_enhance(args) -> int:
    defaults = {
        "input": None, "ratio": None, "bundle": None, "unet_taming": None, "decoder_taming": None,
        "steps": 50, "seed": 0, "conditioning": "dwt", "out": None,
        "dump_latent": None, "dump_subbands": None,
    }
    cfg = resolve_config(defaults, args.config, {
        "input": args.input, "ratio": args.ratio, "bundle": args.bundle,
        "unet_taming": args.unet_taming, "decoder_taming": args.decoder_taming,
        "steps": args.steps, "seed": args.seed, "conditioning": args.conditioning,
        "out": args.out, "dump_latent": args.dump_latent, "dump_subbands": args.dump_subbands,
    })
    if not cfg["input"]:
        raise ConfigError("input", "input file required")
    if not cfg["out"]:
        raise ConfigError("out", "output path required")
    raw, ratio = _read_input_raw(_require_dir(cfg["input"], "input"), cfg["ratio"])
    bundle = _load_bundle(cfg["bundle"])
    unet_set = _load_taming(cfg["unet_taming"], "unet_taming", bundle, "unet", cfg["conditioning"])
    if unet_set is None:
        raise ConfigError("unet_taming", "trained UNet taming set required for enhancement")
    dec_set = _load_taming(cfg["decoder_taming"], "decoder_taming", bundle, "decoder", cfg["conditioning"])
    run_cfg = EnhanceConfig(
        ratio=ratio, ddim_steps=int(cfg["steps"]), seed=int(cfg["seed"]),
        conditioning=cfg["conditioning"], decoder_taming=dec_set is not None,
    )
    out_img = enhance(raw, bundle, unet_set, dec_set, run_cfg)
    out_path = Path(cfg["out"])
    write_ppm(out_img, out_path)
    if cfg["dump_latent"]:
        z0 = sample_latent(raw, bundle, unet_set, run_cfg)
        write_container(cfg["dump_latent"], z0[0].numpy().astype(np.float32))
    if cfg["dump_subbands"]:
        from .rawproc import pack_and_normalize

        packed = pack_and_normalize(raw, ratio)
        latent_hw = bundle.latent_hw((raw.height, raw.width))
        levels = int(np.log2(packed.data.shape[-1] / latent_hw[1]))
        pyr = dwt_pyramid(packed.data.astype(np.float64), WaveletSpec(levels=levels))
        dump_dir = Path(cfg["dump_subbands"])
        for li, lvl in enumerate(pyr.levels, start=1):
            for band in ("ll", "lh", "hl", "hh"):
                write_container(dump_dir / f"level{li}_{band}.ldmt",
                                getattr(lvl, band).astype(np.float32))
    write_config_echo(out_path, cfg)
    print(f"enhanced image written to {out_path}")
    return 0


def cmd_eval(args) -> int:
    defaults = {
        "data": None, "bundle": None, "unet_taming": None, "decoder_taming": None,
        "steps": 50, "seed": 0, "conditioning": "dwt", "out": None, "limit": None,
    }
    cfg = resolve_config(defaults, args.config, {
        "data": args.data, "bundle": args.bundle, "unet_taming": args.unet_taming,
        "decoder_taming": args.decoder_taming, "steps": args.steps, "seed": args.seed,
        "conditioning": args.conditioning, "out": args.out, "limit": args.limit,
    })
    pairs, ids, _ = load_dataset(_require_dir(cfg["data"], "data"))
    if cfg["limit"]:
        pairs, ids = pairs[: int(cfg["limit"])], ids[: int(cfg["limit"])]
    bundle = _load_bundle(cfg["bundle"])
    unet_set = _load_taming(cfg["unet_taming"], "unet_taming", bundle, "unet", cfg["conditioning"])
    if unet_set is None:
        raise ConfigError("unet_taming", "trained UNet taming set required for evaluation")
    dec_set = _load_taming(cfg["decoder_taming"], "decoder_taming", bundle, "decoder", cfg["conditioning"])
    if not cfg["out"]:
        raise ConfigError("out", "output prefix required")
    run_cfg = EnhanceConfig(
        ratio=pairs[0].ratio, ddim_steps=int(cfg["steps"]), seed=int(cfg["seed"]),
        conditioning=cfg["conditioning"], decoder_taming=dec_set is not None,
    )
    label = f"{cfg['conditioning']}/unet" + ("+decoder" if dec_set is not None else "-only")
    report = evaluate_pairs(pairs, bundle, unet_set, dec_set, run_cfg, label, ids)
    prefix = Path(cfg["out"])
    write_report(prefix, [report])
    write_config_echo(prefix.parent if prefix.suffix else prefix, cfg)
    print(f"{label}: PSNR {report.mean_psnr:.2f} dB, SSIM {report.mean_ssim:.4f}")
    return 0


def cmd_ablate(args) -> int:
    defaults = {
        "data": None, "bundle": None,
        "unet_taming_dwt": None, "decoder_taming_dwt": None,
        "unet_taming_resize": None, "decoder_taming_resize": None,
        "steps": 50, "seed": 0, "out": None, "limit": None,
    }
    cfg = resolve_config(defaults, args.config, {
        "data": args.data, "bundle": args.bundle,
        "unet_taming_dwt": args.unet_taming_dwt, "decoder_taming_dwt": args.decoder_taming_dwt,
        "unet_taming_resize": args.unet_taming_resize,
        "decoder_taming_resize": args.decoder_taming_resize,
        "steps": args.steps, "seed": args.seed, "out": args.out, "limit": args.limit,
    })
    pairs, ids, _ = load_dataset(_require_dir(cfg["data"], "data"))
    if cfg["limit"]:
        pairs, ids = pairs[: int(cfg["limit"])], ids[: int(cfg["limit"])]
    bundle = _load_bundle(cfg["bundle"])
    tamings = AblationTamings(
        unet_dwt=_load_taming(cfg["unet_taming_dwt"], "unet_taming_dwt", bundle, "unet", "dwt"),
        decoder_dwt=_load_taming(cfg["decoder_taming_dwt"], "decoder_taming_dwt", bundle, "decoder", "dwt"),
        unet_resize=_load_taming(cfg["unet_taming_resize"], "unet_taming_resize", bundle, "unet", "resize"),
        decoder_resize=_load_taming(
            cfg["decoder_taming_resize"], "decoder_taming_resize", bundle, "decoder", "resize"
        ),
    )
    for flag, val in (("unet_taming_dwt", tamings.unet_dwt), ("decoder_taming_dwt", tamings.decoder_dwt),
                      ("unet_taming_resize", tamings.unet_resize),
                      ("decoder_taming_resize", tamings.decoder_resize)):
        if val is None:
            raise ConfigError(flag, "all four taming sets are required for the ablation")
    if not cfg["out"]:
        raise ConfigError("out", "output directory required")
    out = Path(cfg["out"])
    base = EnhanceConfig(ratio=pairs[0].ratio, ddim_steps=int(cfg["steps"]), seed=int(cfg["seed"]))
    reports = []
    for label, variant_cfg in ablation_variants(base):
        t_unet, t_dec = tamings.select(variant_cfg)
        reports.append(evaluate_pairs(pairs, bundle, t_unet, t_dec, variant_cfg, label, ids))
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "ablation", reports)
    write_config_echo(out, cfg)
    for rep in reports:
        print(f"{rep.label}: PSNR {rep.mean_psnr:.2f} dB, SSIM {rep.mean_ssim:.4f}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="darkwave",
        description="Low-light RAW enhancement with a frozen latent-diffusion backbone "
        "steered by wavelet-subband taming modules.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic low-light dataset")
    p.add_argument("--out"); p.add_argument("--count", type=int); p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int, help="square image side (default 64)")
    p.add_argument("--ratio", type=float, help="amplification ratio (default 250)")
    p.add_argument("--shot-gain", dest="shot_gain", type=float)
    p.add_argument("--read-sigma", dest="read_sigma", type=float)
    _add_config_flag(p)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("pretrain", help="pretrain and freeze the miniature backbone")
    p.add_argument("--data"); p.add_argument("--out"); p.add_argument("--holdout", type=int)
    p.add_argument("--seed", type=int); p.add_argument("--ae-steps", dest="ae_steps", type=int)
    p.add_argument("--unet-steps", dest="unet_steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--ae-lr", dest="ae_lr", type=float); p.add_argument("--unet-lr", dest="unet_lr", type=float)
    p.add_argument("--min-recon-psnr", dest="min_recon_psnr", type=float)
    p.add_argument("--min-unet-drop", dest="min_unet_drop", type=float)
    p.add_argument("--timesteps", type=int)
    _add_config_flag(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-taming-unet", help="stage 1: train UNet taming modules")
    p.add_argument("--data"); p.add_argument("--bundle"); p.add_argument("--out")
    p.add_argument("--conditioning", choices=CONDITIONING_MODES)
    p.add_argument("--epochs", type=int, help="default 100")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float); p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int)
    _add_config_flag(p)
    p.set_defaults(func=cmd_train_taming_unet)

    p = sub.add_parser("train-taming-decoder", help="stage 2: train decoder taming modules")
    p.add_argument("--data"); p.add_argument("--bundle"); p.add_argument("--unet-taming", dest="unet_taming")
    p.add_argument("--out"); p.add_argument("--conditioning", choices=CONDITIONING_MODES)
    p.add_argument("--epochs", type=int, help="default 30")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float); p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--cache-steps", dest="cache_steps", type=int, help="DDIM steps for the latent cache")
    p.add_argument("--cache-seed", dest="cache_seed", type=int)
    _add_config_flag(p)
    p.set_defaults(func=cmd_train_taming_decoder)

    p = sub.add_parser("enhance", help="enhance one low-light input to sRGB")
    p.add_argument("--input", help=".pair file or 2-D uint16 mosaic container")
    p.add_argument("--ratio", type=float); p.add_argument("--bundle")
    p.add_argument("--unet-taming", dest="unet_taming")
    p.add_argument("--decoder-taming", dest="decoder_taming")
    p.add_argument("--steps", type=int, help="DDIM steps (default 50; 200 mirrors full scale)")
    p.add_argument("--seed", type=int); p.add_argument("--conditioning", choices=CONDITIONING_MODES)
    p.add_argument("--out", help="output PPM path")
    p.add_argument("--dump-latent", dest="dump_latent", help="also dump the sampled latent tensor")
    p.add_argument("--dump-subbands", dest="dump_subbands", help="dump conditioning subbands to a dir")
    _add_config_flag(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="evaluate PSNR/SSIM over a dataset")
    p.add_argument("--data"); p.add_argument("--bundle")
    p.add_argument("--unet-taming", dest="unet_taming")
    p.add_argument("--decoder-taming", dest="decoder_taming")
    p.add_argument("--steps", type=int); p.add_argument("--seed", type=int)
    p.add_argument("--conditioning", choices=CONDITIONING_MODES)
    p.add_argument("--out", help="report path prefix"); p.add_argument("--limit", type=int)
    _add_config_flag(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run all four conditioning/decoder variants")
    p.add_argument("--data"); p.add_argument("--bundle")
    p.add_argument("--unet-taming-dwt", dest="unet_taming_dwt")
    p.add_argument("--decoder-taming-dwt", dest="decoder_taming_dwt")
    p.add_argument("--unet-taming-resize", dest="unet_taming_resize")
    p.add_argument("--decoder-taming-resize", dest="decoder_taming_resize")
    p.add_argument("--steps", type=int); p.add_argument("--seed", type=int)
    p.add_argument("--out"); p.add_argument("--limit", type=int)
    _add_config_flag(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DarkwaveError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
