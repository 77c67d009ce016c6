"""Operator surface: enhance, bench, synth, eval, inspect.

Exit codes: 0 success, 2 I/O problems, 3 malformed artifacts (weights,
manifests), 4 configuration errors.  Streaming enhance with ``-`` for
both paths reads and writes raw little-endian 16-bit mono at 16 kHz in
160-sample hops on stdin/stdout.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from .config import EngineConfig, build_engine, parse_config_file
from .errors import AudioIOError, ConfigError, FormatError
from .metrics import evaluate_manifest
from .nn.complexity import count_params_and_macs, stage_cost
from .nn.model import StageKind, default_config, random_bundle, toy_config
from .nn.weights import read_weights_file
from .pipeline import STAGE_ORDER, Engine
from .roomsim import MixSpec, RoomSampler, synth_dataset
from .streaming import StreamingEnhancer
from .wavio import read_wav, write_wav

EXIT_IO = 2
EXIT_FORMAT = 3
EXIT_CONFIG = 4


def _engine_from_args(args) -> tuple[Engine, EngineConfig]:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {
        "weights.dn": args.weights_dn,
        "weights.dr": args.weights_dr,
        "weights.sr": args.weights_sr,
        "pp.weights": args.pp_weights,
        "model.size": args.model_size,
        "stages": str(args.stages) if args.stages is not None else None,
        "mode": args.mode,
        "pp.provider": args.pp_provider,
    }
    cfg = EngineConfig.from_sources(file_values, overrides)
    engine = build_engine(cfg)
    return engine, cfg


def _add_engine_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--weights-dn", help="stage-1 weight bundle (.sddw)")
    p.add_argument("--weights-dr", help="stage-2 weight bundle (.sddw)")
    p.add_argument("--weights-sr", help="stage-3 weight bundle (.sddw)")
    p.add_argument("--pp-weights", help="provider-b SPP network bundle")
    p.add_argument("--pp-provider", choices=["a", "b"], help="SPP source")
    p.add_argument("--model-size", choices=["auto", "default", "toy"])
    p.add_argument("--stages", type=int, choices=[1, 2, 3, 4],
                   help="chain depth to run")
    p.add_argument("--mode", choices=["offline", "streaming", "streaming-offline-stats"])


def cmd_enhance(args) -> int:
    engine, cfg = _engine_from_args(args)
    depth = cfg.stages
    if args.infile == "-" or args.outfile == "-":
        if args.infile != "-" or args.outfile != "-":
            raise ConfigError("stream mode needs '-' for both input and output")
        return _enhance_stream(engine, depth)

    signal, rate = read_wav(args.infile, expect_rate=engine.frame_params.sample_rate)
    frames = engine.frame_params.num_frames(len(signal))
    delay_ms = 1000.0 * (engine.frame_params.window_len + engine.frame_params.hop) \
        / engine.frame_params.sample_rate
    start = time.perf_counter()
    if cfg.mode == "offline":
        out, _ = engine.enhance(signal, depth=depth, mode=cfg.mode)
        elapsed = time.perf_counter() - start
        stats = [f"per_frame_ms_mean: {1000.0 * elapsed / frames:.3f}"]
    else:
        frozen = None
        if cfg.mode == "streaming-offline-stats":
            frozen = engine.collect_norm_stats(signal, depth)
        streamer = StreamingEnhancer(engine, depth=depth, frozen_stats=frozen)
        hop = engine.frame_params.hop
        chunks = [streamer.push(signal[s : s + hop]) for s in range(0, len(signal), hop)]
        chunks.append(streamer.flush())
        out = np.concatenate(chunks)[: len(signal)]
        times = 1000.0 * np.asarray(streamer.frame_times)
        stats = [f"per_frame_ms_mean: {times.mean():.3f}",
                 f"per_frame_ms_p95: {np.percentile(times, 95):.3f}"]
    write_wav(args.outfile, out, rate)
    print(f"frames: {frames}", file=sys.stderr)
    print(f"algorithmic_delay_ms: {delay_ms:.1f}", file=sys.stderr)
    for line in stats:
        print(line, file=sys.stderr)
    return 0


def _enhance_stream(engine: Engine, depth: int) -> int:
    hop = engine.frame_params.hop
    streamer = StreamingEnhancer(engine, depth=depth)
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    while True:
        raw = stdin.read(hop * 2)
        if not raw:
            break
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
        out = streamer.push(samples)
        if out.size:
            stdout.write(_to_pcm(out))
            stdout.flush()
    tail = streamer.flush()
    if tail.size:
        stdout.write(_to_pcm(tail))
        stdout.flush()
    if streamer.frame_times:
        times = 1000.0 * np.asarray(streamer.frame_times)
        print(f"per_frame_ms_mean: {times.mean():.3f}", file=sys.stderr)
        print(f"per_frame_ms_p95: {np.percentile(times, 95):.3f}", file=sys.stderr)
    return 0


def _to_pcm(x: np.ndarray) -> bytes:
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()


def cmd_bench(args) -> int:
    make = toy_config if args.toy else default_config
    configs = {k: make(k) for k in StageKind}
    bundles = {k: random_bundle(configs[k], seed=args.seed + i)
               for i, k in enumerate(StageKind)}
    engine = Engine(configs=configs, bundles=bundles)
    fp = engine.frame_params
    delay_ms = 1000.0 * (fp.window_len + fp.hop) / fp.sample_rate
    params, macs = count_params_and_macs([configs[k] for k in STAGE_ORDER])
    print(f"algorithmic_delay_ms: {delay_ms:.1f}")
    print(f"params_stages_1_3: {params}")
    print(f"macs_per_frame_stages_1_3: {macs}")
    print(f"gmacs_at_100fps: {macs * 100 / 1e9:.3f}")
    for kind in STAGE_ORDER:
        p, m = stage_cost(configs[kind])
        print(f"stage_{kind.value}: params {p}  macs/frame {m}")
    print("pp_provider_a_params: 0")

    rng = np.random.default_rng(args.seed)
    signal = rng.normal(0.0, 0.1, size=int(args.bench_seconds * fp.sample_rate))
    start = time.perf_counter()
    engine.enhance(signal, depth=3, mode="offline")
    elapsed = time.perf_counter() - start
    frames = fp.num_frames(len(signal))
    print(f"per_frame_ms_offline: {1000.0 * elapsed / frames:.3f}")

    streamer = StreamingEnhancer(engine, depth=3)
    stream_sig = signal[: int(0.5 * fp.sample_rate)]
    for s in range(0, len(stream_sig), fp.hop):
        streamer.push(stream_sig[s : s + fp.hop])
    streamer.flush()
    times = 1000.0 * np.asarray(streamer.frame_times)
    print(f"per_frame_ms_streaming_mean: {times.mean():.3f}")
    print(f"per_frame_ms_streaming_p95: {np.percentile(times, 95):.3f}")
    return 0


def cmd_synth(args) -> int:
    def parse_range(text, what):
        try:
            lo, _, hi = text.partition(":")
            return float(lo), float(hi)
        except ValueError as e:
            raise ConfigError(f"bad {what} range '{text}', expected LO:HI") from e

    def parse_dims(text):
        parts = text.split(",")
        if len(parts) != 3:
            raise ConfigError(f"bad dimensions '{text}', expected X,Y,Z")
        return tuple(float(p) for p in parts)

    snr_lo, snr_hi = parse_range(args.snr, "snr")
    t60_lo, t60_hi = parse_range(args.t60, "t60")
    sampler = RoomSampler(
        dims_min=parse_dims(args.dims_min),
        dims_max=parse_dims(args.dims_max),
        t60_range=(t60_lo, t60_hi),
    )
    mix = MixSpec(snr_range=(snr_lo, snr_hi),
                  snr_db=args.fixed_snr)
    manifest = synth_dataset(args.clean, args.noise, args.out, count=args.count,
                             seed=args.seed, room_sampler=sampler, mix_spec=mix,
                             workers=args.workers)
    print(manifest)
    return 0


def cmd_eval(args) -> int:
    engine, cfg = _engine_from_args(args)
    depths = sorted({int(d) for d in args.depths.split(",")}) if args.depths else [cfg.stages]
    for d in depths:
        engine.require_stages(d)

    def enhance_fn(signal, depth):
        return engine.enhance(signal, depth=depth, mode=cfg.mode)[0]

    report = evaluate_manifest(args.manifest, enhance_fn, depths=depths,
                               workers=args.workers)
    text = report.to_text()
    print(text)
    if args.out_prefix:
        with open(args.out_prefix + ".txt", "w") as f:
            f.write(text + "\n")
        with open(args.out_prefix + ".tsv", "w") as f:
            f.write(report.to_tsv())
    return 0


def cmd_inspect(args) -> int:
    bundle = read_weights_file(args.weights)
    total = 0
    print(f"format_version: {bundle.version}")
    print(f"fingerprint: {bundle.fingerprint or '(none)'}")
    print(f"{'tensor':<28} {'shape':<20} bytes")
    for name in bundle.names():
        t = bundle.tensors[name]
        total += t.nbytes
        print(f"{name:<28} {str(tuple(t.shape)):<20} {t.nbytes}")
    print(f"tensors: {len(bundle.tensors)}  total_bytes: {total}")
    if args.expect:
        make = toy_config if args.toy else default_config
        cfg = make(StageKind(args.expect))
        bundle.validate_against(cfg.tensor_spec())
        print(f"validates_as: stage {args.expect} ({'toy' if args.toy else 'default'})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdd",
        description="Causal speech denoising + dereverberation engine",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance a WAV file or a raw sample stream")
    _add_engine_opts(p)
    p.add_argument("infile", help="input WAV path, or '-' for raw stdin stream")
    p.add_argument("outfile", help="output WAV path, or '-' for raw stdout stream")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("bench", help="report delay, parameters, MACs, wall time")
    p.add_argument("--toy", action="store_true", help="use the desk-scale topology")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bench-seconds", type=float, default=2.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="synthesize a reverberant+noisy dataset")
    p.add_argument("--clean", required=True, help="directory of clean WAVs")
    p.add_argument("--noise", required=True, help="directory of noise WAVs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", default="-5:15", help="SNR draw range LO:HI dB")
    p.add_argument("--fixed-snr", type=float, default=None,
                   help="use one SNR for every pair (must lie in --snr)")
    p.add_argument("--t60", default="0.15:0.5", help="T60 draw range LO:HI s")
    p.add_argument("--dims-min", default="3,3,2.4")
    p.add_argument("--dims-max", default="8,6,3.5")
    p.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score a manifest at the requested depths")
    _add_engine_opts(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--depths", help="comma-separated stage depths, e.g. 1,2,3")
    p.add_argument("--out-prefix", help="write PREFIX.txt and PREFIX.tsv")
    p.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="list the tensors in a weight bundle")
    p.add_argument("weights")
    p.add_argument("--expect", choices=["dn", "dr", "sr"],
                   help="validate against a stage topology")
    p.add_argument("--toy", action="store_true")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (AudioIOError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
