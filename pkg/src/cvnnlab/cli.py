"""Command-line interface: backend verification, benchmarking, the
complex-vs-real GAN comparison, and the vocoder overfit smoke test.

Deterministic mode fixes every RNG stream and pins BLAS/OpenMP to one
thread so repeated runs produce bitwise-identical reports; the thread pin
must happen before numpy loads, which is why this module inspects argv at
import time.
"""

from __future__ import annotations

import os
import sys

if "--deterministic" in sys.argv:
    for _k in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
               "NUMEXPR_NUM_THREADS"):
        os.environ[_k] = "1"

import argparse
import configparser
import csv
import json
import math
import statistics
from pathlib import Path

import numpy as np

from .bench import run_bench
from .experiments import (
    GanConfig,
    MiniVocoderConfig,
    SpiralConfig,
    default_test_signal,
    mini_vocoder_overfit,
    run_toygan_suite,
    sample_target,
)
from .signal import write_wav
from .verify import run_verify


def _emit(args, payload: dict, text_lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


def _prepare_out_dir(path: str, filenames: list[str], force: bool) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if not force:
        clashes = [str(out / f) for f in filenames if (out / f).exists()]
        if clashes:
            raise FileExistsError(
                f"refusing to overwrite {clashes[0]} (use --force)"
            )
    return out


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    report = run_verify(seed=args.seed, trials=args.trials)
    lines = [f"verify: seed={args.seed} trials={args.trials}"]
    for row in report.rows:
        lines.append(
            f"  {row.layer:10s} forward {row.forward_output:.3e}  "
            f"input-grad {row.input_gradient:.3e}  weight-grad {row.weight_gradient:.3e}  "
            f"bias-grad {row.bias_gradient:.3e}  gradcheck {row.gradcheck:.3e}"
        )
    lines += [f"  FAIL {m}" for m in report.failures]
    lines.append("verify: PASS" if report.passed() else "verify: FAIL")
    _emit(args, report.to_dict(), lines)
    if not report.passed() and not args.json:
        for m in report.failures:
            print(f"verify failure: {m}", file=sys.stderr)
    return 0 if report.passed() else 1


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    report = run_bench(seed=args.seed, repeats=args.repeats,
                       deterministic=args.deterministic)
    lines = [f"bench: seed={args.seed} repeats={args.repeats}"]
    for stack in ("generator", "discriminator"):
        lines.append(f"  {stack} stack:")
        for r in getattr(report, stack):
            lines.append(
                f"    {r.backend:6s} forward {r.forward_ms:8.3f} ms  "
                f"backward {r.backward_ms:8.3f} ms  nodes {r.nodes}"
            )
        lines.append(f"    block/naive node ratio: {report.node_ratio(stack):.3f}")
    _emit(args, report.to_dict(), lines)
    return 0


# ---------------------------------------------------------------------------
# toygan


def _write_sample_csv(path: Path, samples) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["re", "im", "mag", "phase"])
        mag = samples.abs()
        phase = samples.phase()
        for i in range(samples.size):
            writer.writerow([repr(samples.re[i]), repr(samples.im[i]),
                             repr(mag[i]), repr(phase[i])])


def cmd_toygan(args) -> int:
    seeds = list(range(args.seeds))
    if not seeds:
        print("toygan: need at least one seed", file=sys.stderr)
        return 2
    filenames = [f"samples_seed{s}_{m}.csv" for s in seeds for m in ("cvnn", "rvnn")]
    filenames += ["summary.json", "target.csv"]
    try:
        out = _prepare_out_dir(args.out, filenames, args.force)
    except FileExistsError as exc:
        print(f"toygan: {exc}", file=sys.stderr)
        return 2

    target = sample_target(SpiralConfig(seed=args.seed))
    _write_sample_csv(out / "target.csv", target)
    workers = 1 if args.deterministic else None
    suite = run_toygan_suite(len(seeds), steps=args.steps, base_seed=args.seed,
                             workers=workers)
    per_seed = []
    failed_seeds = 0
    for s in seeds:
        row = {"seed": s}
        seed_failed = False
        for mode in ("cvnn", "rvnn"):
            rep = suite[s][mode]
            _write_sample_csv(out / f"samples_seed{s}_{mode}.csv", rep.samples)
            row[mode] = rep.summary_dict()
            seed_failed = seed_failed or rep.failed
        failed_seeds += seed_failed
        per_seed.append(row)

    summary = {"seeds": len(seeds), "per_seed": per_seed}
    for mode in ("cvnn", "rvnn"):
        mags = [r[mode]["jsd_mag"] for r in per_seed if not r[mode]["failed"]]
        phases = [r[mode]["jsd_phase"] for r in per_seed if not r[mode]["failed"]]
        if mags:
            summary[mode] = {
                "median_jsd_mag": statistics.median(mags),
                "median_jsd_phase": statistics.median(phases),
                "std_jsd_mag": statistics.pstdev(mags) if len(mags) > 1 else 0.0,
                "std_jsd_phase": statistics.pstdev(phases) if len(phases) > 1 else 0.0,
            }
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))

    lines = [f"toygan: {len(seeds)} seed(s), output in {out}"]
    for mode in ("cvnn", "rvnn"):
        if mode in summary:
            m = summary[mode]
            lines.append(
                f"  {mode}: median JSD(mag) {m['median_jsd_mag']:.6f} "
                f"+/- {m['std_jsd_mag']:.4f}  median JSD(phase) "
                f"{m['median_jsd_phase']:.6f} +/- {m['std_jsd_phase']:.4f}"
            )
    _emit(args, summary, lines)
    return 1 if failed_seeds > len(seeds) / 2 else 0


# ---------------------------------------------------------------------------
# smoke


_SMOKE_DEFAULTS = {
    "vocoder": {"steps": "2000", "dim": "32", "hidden": "96", "n_layers": "2",
                "n_quant": "128", "lr": "5e-3", "seed": "0"},
    "stft": {"n_fft": "1024", "hop": "256", "win_length": "1024"},
    "mel": {"n_mels": "100", "f_max": "12000", "sample_rate": "24000"},
}


def _load_smoke_config(path: str | None):
    parser = configparser.ConfigParser()
    parser.read_dict(_SMOKE_DEFAULTS)
    if path is not None:
        text = Path(path).read_text()
        parser.read_string(text, source=path)
        known = {(s, k) for s, kv in _SMOKE_DEFAULTS.items() for k in kv}
        for section in parser.sections():
            if section not in _SMOKE_DEFAULTS:
                raise configparser.Error(f"unknown section [{section}] in {path}")
            for key in parser[section]:
                if (section, key) not in known:
                    raise configparser.Error(
                        f"unknown key {key!r} in section [{section}] of {path}"
                    )
    v, s, m = parser["vocoder"], parser["stft"], parser["mel"]
    return MiniVocoderConfig(
        n_layers=v.getint("n_layers"),
        dim=v.getint("dim"),
        hidden=v.getint("hidden"),
        n_quant=v.getint("n_quant"),
        steps=v.getint("steps"),
        lr=v.getfloat("lr"),
        seed=v.getint("seed"),
        n_fft=s.getint("n_fft"),
        hop=s.getint("hop"),
        win_length=s.getint("win_length"),
        n_mels=m.getint("n_mels"),
        f_max=m.getfloat("f_max"),
        sample_rate=m.getint("sample_rate"),
    )


def cmd_smoke(args) -> int:
    try:
        cfg = _load_smoke_config(args.config)
    except (configparser.Error, ValueError, OSError) as exc:
        print(f"smoke: bad config: {exc}", file=sys.stderr)
        return 2
    if args.steps is not None:
        from dataclasses import replace

        cfg = replace(cfg, steps=args.steps)
    try:
        out = _prepare_out_dir(args.out, ["loss_curve.csv", "synth.wav",
                                          "report.json"], args.force)
    except FileExistsError as exc:
        print(f"smoke: {exc}", file=sys.stderr)
        return 2

    report = mini_vocoder_overfit(cfg, default_test_signal(cfg))
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mel_l1"])
        for i, v in enumerate(report.loss_curve):
            writer.writerow([i, repr(v)])
    write_wav(out / "synth.wav", report.wave_out, cfg.sample_rate)
    payload = report.summary_dict()
    (out / "report.json").write_text(json.dumps(payload, sort_keys=True, indent=1))
    lines = [
        f"smoke: steps={cfg.steps} n_quant={cfg.n_quant}",
        f"  initial mel-L1 {report.initial_loss:.6f}",
        f"  final mel-L1   {report.final_loss:.6f}",
        f"  mr-stft        {report.mr_stft:.6f}",
        f"  output in {out}",
    ]
    _emit(args, payload, lines)
    if cfg.steps > 0 and report.failed:
        print("smoke: loss did not decrease", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvnnlab",
        description="Verify, benchmark, and exercise the complex-valued "
                    "network backends.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="master RNG seed")
        p.add_argument("--deterministic", action="store_true",
                       help="pin threads and fix all RNG streams")
        p.add_argument("--json", action="store_true",
                       help="emit the report as JSON on stdout")

    p = sub.add_parser("verify", help="backend equivalence and gradient checks")
    common(p)
    p.add_argument("--trials", type=int, default=20,
                   help="random configurations per layer type")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="node counts and wall times per backend")
    common(p)
    p.add_argument("--repeats", type=int, default=10)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("toygan", help="complex-vs-real GAN comparison")
    common(p)
    p.add_argument("--seeds", type=int, default=10, help="number of seeds to run")
    p.add_argument("--steps", type=int, default=GanConfig.cvnn().steps)
    p.add_argument("--out", default="toygan_out")
    p.add_argument("--force", action="store_true", help="overwrite existing files")
    p.set_defaults(func=cmd_toygan)

    p = sub.add_parser("smoke", help="mini vocoder overfit run")
    common(p)
    p.add_argument("--config", default=None, help="INI-style configuration file")
    p.add_argument("--steps", type=int, default=None, help="override step count")
    p.add_argument("--out", default="smoke_out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_smoke)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
