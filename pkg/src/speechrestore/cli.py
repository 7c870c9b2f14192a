"""Command-line surface. Exit codes: 0 success, 1 an item failed, 2 invalid configuration."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .audio import AudioBuffer, load_wav, save_wav
from .config import ConfigError, load_config
from .degrade import degrade, sample_degradation, synth_rir
from .manifest import ManifestError, emit_manifest, filter_by_mos, ingest_manifest, split_assets
from .metrics import evaluate_pair, refinement_report, write_metric_csv

logger = logging.getLogger("speechrestore")

EXIT_OK, EXIT_ITEM_FAILED, EXIT_CONFIG = 0, 1, 2


def _common(p):
    p.add_argument("--config", help="YAML key-value configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--jobs", type=int, help="worker pool width")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speechrestore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="apply a sampled degradation chain to one file")
    _common(p)
    p.add_argument("input")
    p.add_argument("--out", required=True, help="output WAV")
    p.add_argument("--noise", help="noise WAV (default: white noise)")
    p.add_argument("--rir", help="impulse response WAV (default: synthetic)")
    p.add_argument("--profile", choices=("train", "eval"))

    p = sub.add_parser("recover", help="16 kHz recovery stage")
    _common(p)
    p.add_argument("input")
    p.add_argument("--out", required=True)

    p = sub.add_parser("restore", help="48 kHz latent restoration stage")
    _common(p)
    p.add_argument("input")
    p.add_argument("--out", required=True)

    p = sub.add_parser("pipeline", help="run the full chain over a manifest")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--out", help="output root directory")

    p = sub.add_parser("evaluate", help="intrusive metrics for a clean/processed pair")
    _common(p)
    p.add_argument("clean")
    p.add_argument("processed")
    p.add_argument("--out", help="CSV path (default: print JSON)")

    p = sub.add_parser("refine", help="iterative refinement of one file")
    _common(p)
    p.add_argument("input")
    p.add_argument("--iterations", type=int)
    p.add_argument("--stage", choices=("identity", "restore", "full"), default="full")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("fit-denoiser", help="fit the linear denoiser on the train split")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--ridge", type=float, default=1e-4)
    p.add_argument("--out", required=True, help="sidecar JSON path")

    p = sub.add_parser("synth-rir", help="synthesise an exponential-decay impulse response")
    _common(p)
    p.add_argument("--t60", type=float, required=True)
    p.add_argument("--duration", type=float)
    p.add_argument("--rate", type=int, default=48000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("manifest", help="manifest curation")
    msub = p.add_subparsers(dest="action", required=True)
    f = msub.add_parser("filter", help="drop speech rows with MOS below a threshold")
    _common(f)
    f.add_argument("input")
    f.add_argument("--threshold", type=float, default=4.0)
    f.add_argument("--out", required=True)
    s = msub.add_parser("split", help="seeded train/eval split of noise and rir rows")
    _common(s)
    s.add_argument("input")
    s.add_argument("--fraction", type=float, default=0.8)
    s.add_argument("--out", required=True)
    return parser


def _config(args, **extra):
    overrides = {"seed": args.seed, "jobs": args.jobs, **extra}
    return load_config(args.config, overrides)


def _cmd_degrade(args):
    cfg = _config(args, degradation_profile=args.profile).validate(require_manifest=False)
    from .pipeline import FULL_BAND_RATE, codec_params, prepare_clean

    clean = prepare_clean(load_wav(args.input), cfg.target_lufs)
    spec = sample_degradation(cfg.degradation_profile, cfg.seed, cfg.codec_mode)
    if args.noise:
        from .audio import resample
        noise = resample(load_wav(args.noise), FULL_BAND_RATE)
    else:
        import numpy as np
        noise = AudioBuffer(np.random.default_rng(cfg.seed + 7).standard_normal(len(clean)), FULL_BAND_RATE)
    rir = load_wav(args.rir) if args.rir else None
    out = degrade(clean, noise, rir, spec, codec_params(cfg))
    save_wav(out, args.out, "float32")
    with open(os.path.splitext(args.out)[0] + ".json", "w") as fh:
        json.dump(spec.to_dict(), fh, indent=1, sort_keys=True)
    return EXIT_OK


def _cmd_recover(args):
    from .pipeline import build_enhancer
    from .recovery import recover

    cfg = _config(args).validate(require_manifest=False)
    save_wav(recover(load_wav(args.input), build_enhancer(cfg), cfg.target_lufs).buffer, args.out, "float32")
    return EXIT_OK


def _cmd_restore(args):
    from .pipeline import PipelineRunner

    cfg = _config(args).validate(require_manifest=False)
    save_wav(PipelineRunner(cfg).restore(load_wav(args.input), cfg.seed), args.out, "float32")
    return EXIT_OK


def _cmd_pipeline(args):
    from .pipeline import run_pipeline

    cfg = _config(args, manifest=args.manifest, out_dir=args.out)
    report = run_pipeline(cfg)
    print(json.dumps({k: report[k] for k in ("run_id", "run_dir", "n_items", "n_failed")}))
    return EXIT_ITEM_FAILED if report["n_failed"] else EXIT_OK


def _cmd_evaluate(args):
    cfg = _config(args).validate(require_manifest=False)
    row = evaluate_pair(load_wav(args.clean), load_wav(args.processed), os.path.basename(args.processed),
                        rates=tuple(cfg.ssim_rates))
    if args.out:
        write_metric_csv([row], args.out)
    else:
        print(json.dumps(row.__dict__))
    return EXIT_OK


def _cmd_refine(args):
    from .pipeline import refine

    cfg = _config(args, refine_iterations=args.iterations).validate(require_manifest=False)
    item_id = os.path.splitext(os.path.basename(args.input))[0]
    results = refine(load_wav(args.input), cfg, cfg.refine_iterations, args.stage, item_id, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    for it, (buf, _) in enumerate(results, start=1):
        save_wav(buf, os.path.join(args.out, f"{item_id}_iter{it}.wav"), "float32")
    refinement_report([row for _, row in results], args.out, plot=cfg.plot and not args.no_plot)
    return EXIT_OK


def _cmd_fit(args):
    from .pipeline import fit_denoiser_from_manifest

    cfg = _config(args, manifest=args.manifest, degradation_profile="train")
    den = fit_denoiser_from_manifest(cfg, args.ridge)
    den.save(args.out)
    return EXIT_OK


def _cmd_synth_rir(args):
    cfg = _config(args).validate(require_manifest=False)
    save_wav(synth_rir(args.t60, args.duration, args.rate, seed=cfg.seed), args.out, "float32")
    return EXIT_OK


def _cmd_manifest(args):
    cfg = _config(args).validate(require_manifest=False)
    records = ingest_manifest(args.input)
    if args.action == "filter":
        out = filter_by_mos(records, args.threshold)
    else:
        out = split_assets(records, args.fraction, cfg.seed)
    emit_manifest(out, args.out)
    return EXIT_OK


COMMANDS = {
    "degrade": _cmd_degrade, "recover": _cmd_recover, "restore": _cmd_restore, "pipeline": _cmd_pipeline,
    "evaluate": _cmd_evaluate, "refine": _cmd_refine, "fit-denoiser": _cmd_fit, "synth-rir": _cmd_synth_rir,
    "manifest": _cmd_manifest,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ManifestError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ITEM_FAILED


if __name__ == "__main__":
    sys.exit(main())
