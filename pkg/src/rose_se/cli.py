"""Command-line entry point: ``rose-se synth|train|enhance|eval|spectrogram``.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 numeric abort during training.  Diagnostics go to stderr; the one-line
machine-readable summary of each subcommand goes to stdout.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .audio_io import read_wav, write_wav
from .dsp import StftConfig, spectrogram_image, write_pgm
from .echo_sim import EchoParams, MixParams, synth_corpus
from .errors import ConfigError, FormatError, NumericAbort, RoseError
from .synthetic import speech_like
from .trainer import evaluate, enhance, load_checkpoint, load_config, train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _delay_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI in milliseconds, got {text!r}") from None
    return lo, hi


def _snr_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated dB values, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rose-se", description="Echo-robust speech enhancement toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth", help="synthesize a paired clean/noisy corpus")
    s.add_argument("--mode", choices=["echo", "additive"], required=True, help="channel model")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--in", dest="in_dir", type=Path, help="directory of clean WAV files")
    src.add_argument("--generate", type=int, metavar="N", help="use N built-in speech-like clips instead of --in")
    s.add_argument("--noise-dir", type=Path, help="additive mode: directory of noise WAVs (default: white noise)")
    s.add_argument("--out", type=Path, required=True, help="output corpus directory")
    s.add_argument("--seed", type=int, default=0, help="base seed; pair i uses seed+i (default 0)")
    s.add_argument("--snr", type=_snr_list, default=(-3.0, 0.0, 3.0, 6.0),
                   help="additive mode SNR levels in dB (default -3,0,3,6)")
    s.add_argument("--delay-ms", type=_delay_range, default=(10.0, 200.0),
                   help="echo mode delay range LO:HI in ms (default 10:200)")
    s.add_argument("--seconds", type=float, default=4.0, help="clip length in seconds (default 4)")
    s.add_argument("--sample-rate", type=int, default=16000, help="corpus sample rate (default 16000)")

    t = sub.add_parser("train", help="train a model on a corpus manifest")
    t.add_argument("--config", type=Path, required=True, help="key = value config file")
    t.add_argument("--manifest", type=Path, required=True, help="corpus manifest.csv")
    t.add_argument("--out", type=Path, required=True, help="checkpoint path")
    t.add_argument("--log", type=Path, help="per-step loss CSV")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--steps", type=int, help="override the config step budget")

    e = sub.add_parser("enhance", help="enhance one WAV file")
    e.add_argument("--ckpt", type=Path, required=True, help="checkpoint path")
    e.add_argument("--in", dest="in_wav", type=Path, required=True, help="noisy WAV")
    e.add_argument("--out", type=Path, required=True, help="enhanced WAV")

    v = sub.add_parser("eval", help="score a checkpoint on a corpus manifest")
    v.add_argument("--ckpt", type=Path, required=True, help="checkpoint path")
    v.add_argument("--manifest", type=Path, required=True, help="corpus manifest.csv")
    v.add_argument("--report", type=Path, required=True, help="CSV report path")

    g = sub.add_parser("spectrogram", help="write a dB spectrogram of a WAV as a PGM image")
    g.add_argument("--in", dest="in_wav", type=Path, required=True, help="input WAV")
    g.add_argument("--out", type=Path, required=True, help="output PGM")
    g.add_argument("--floor-db", type=float, default=-80.0, help="lowest dB shown (default -80)")
    return p


def _wav_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise ConfigError(f"{directory} is not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".wav")
    if not files:
        raise ConfigError(f"{directory} contains no WAV files")
    return files


def _cmd_synth(a) -> str:
    if a.noise_dir and a.mode != "additive":
        raise ConfigError("--noise-dir only applies to additive mode")
    if a.mode == "echo":
        params = EchoParams(delay_ms_range=a.delay_ms, seed=a.seed)
    else:
        params = MixParams(snr_db=a.snr, seed=a.seed)
    if a.generate is not None:
        if a.generate < 1:
            raise ConfigError("--generate needs a positive clip count")
        sources = [speech_like(a.seconds, a.sample_rate, seed=a.seed + 10_000 + i) for i in range(a.generate)]
    else:
        sources = _wav_files(a.in_dir)
    noises = _wav_files(a.noise_dir) if a.noise_dir else None
    manifest = synth_corpus(sources, a.out, a.mode, params, noises, a.seconds, a.sample_rate)
    return f"pairs={len(manifest)} manifest={manifest.path}"


def _cmd_train(a) -> str:
    cfg = load_config(a.config)
    changes = {k: v for k, v in (("seed", a.seed), ("steps", a.steps)) if v is not None}
    if changes:
        cfg = cfg.replace(**changes)
    ckpt, history = train(cfg, a.manifest, a.out, a.log)
    last = history[-1]["total"] if history else float("nan")
    return f"steps={ckpt.step} final_loss={last:.6g} checkpoint={a.out}"


def _cmd_enhance(a) -> str:
    ckpt = load_checkpoint(a.ckpt)
    out = enhance(ckpt, read_wav(a.in_wav))
    write_wav(out, a.out)
    return f"samples={len(out)} sample_rate={out.sample_rate} out={a.out}"


def _cmd_eval(a) -> str:
    report = evaluate(load_checkpoint(a.ckpt), a.manifest, a.report)
    m = report.mean()
    return (f"clips={len(report.clips)} si_sdr_db={m.si_sdr_db:.3f} seg_snr_db={m.seg_snr_db:.3f} "
            f"lsd={m.lsd:.3f} stoi={m.stoi:.4f}")


def _cmd_spectrogram(a) -> str:
    clip = read_wav(a.in_wav)
    cfg = StftConfig(sample_rate=clip.sample_rate)
    image = spectrogram_image(clip.samples, cfg, a.floor_db)
    write_pgm(image, a.out)
    return f"rows={image.shape[0]} cols={image.shape[1]} out={a.out}"


COMMANDS = {"synth": _cmd_synth, "train": _cmd_train, "enhance": _cmd_enhance,
            "eval": _cmd_eval, "spectrogram": _cmd_spectrogram}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        print(COMMANDS[args.command](args))
    except NumericAbort as exc:
        print(f"rose-se {args.command}: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"rose-se {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, RoseError, ValueError) as exc:
        print(f"rose-se {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
