"""Command-line surface: basis building, enhancement, comparison sweeps,
spectrogram rendering, and estimator training.

Every subcommand is deterministic given its flags and seed.  Exit codes:
0 success, 2 usage/parameter error, 3 I/O or file-format error,
4 numerical failure, 5 fingerprint (contract) violation, 6 partial
failure in a comparison sweep.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import audio_io, enhance, metrics, transform
from .errors import (
    DecompositionError,
    FileFormatError,
    FingerprintMismatchError,
    GraphSpeechError,
    NumericalDivergenceError,
    ParameterError,
)
from .framing import FramingConfig
from .graph_basis import build_adjacency, decompose_evd, decompose_svd, load_basis, save_basis

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_CONTRACT = 5
EXIT_PARTIAL = 6

TRANSFORMS = ("gft-svd", "gft-evd", "stft")

WINDOW_KIND_BY_FLAG = {"hann": "hann_periodic", "rect": "rectangular"}


def basis_filename(n: int, k: int) -> str:
    """File naming convention used by the compare sweep."""
    return f"basis_n{n}_k{k}.gftb"


def _framing_from_args(args) -> FramingConfig:
    rate = args.rate
    return FramingConfig(
        sample_rate=rate,
        window_len=int(round(args.win_ms * rate / 1000.0)),
        hop=int(round(args.hop_ms * rate / 1000.0)),
        transform_len=args.n,
        window_kind=WINDOW_KIND_BY_FLAG[args.window],
    )


def _parse_clip(text: str) -> float | None:
    if text.lower() in ("none", "inf", "unbounded"):
        return None
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("clip must be positive, 'none', or 'inf'")
    return value


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}")


def _parse_transform_list(text: str) -> list[str]:
    items = [part.strip() for part in text.split(",") if part.strip()]
    for item in items:
        if item not in TRANSFORMS:
            raise argparse.ArgumentTypeError(f"unknown transform {item!r}")
    return items


def _oracle_enhance_complex(
    noisy: np.ndarray,
    clean: np.ndarray,
    kind: str,
    cfg: FramingConfig,
    cbasis,
    clip: float | None,
) -> np.ndarray:
    """Oracle ratio masking applied to real and imaginary parts separately."""
    if kind == "gft_evd":
        noisy_spec = transform.analyze_evd(noisy, cfg, cbasis)
        clean_spec = transform.analyze_evd(clean, cfg, cbasis)
    else:
        noisy_spec = transform.analyze_stft(noisy, cfg)
        clean_spec = transform.analyze_stft(clean, cfg)
    masked = transform.ComplexSpectrogram(
        real=enhance.ratio_mask_values(clean_spec.real, noisy_spec.real, clip=clip)
        * noisy_spec.real,
        imag=enhance.ratio_mask_values(clean_spec.imag, noisy_spec.imag, clip=clip)
        * noisy_spec.imag,
        kind=kind,
        framing=cfg,
        original_len=noisy_spec.original_len,
    )
    if kind == "gft_evd":
        return transform.synthesize_evd(masked, cbasis)
    return transform.synthesize_stft(masked)


def cmd_basis(args) -> int:
    adjacency = build_adjacency(args.n, args.k)
    basis = decompose_svd(adjacency)
    save_basis(basis, args.out)
    print(
        f"wrote {args.out}: n={basis.n} k={basis.k} "
        f"sigma_max={basis.sigma[0]:.9g} sigma_min={basis.sigma[-1]:.9g}"
    )
    print(f"fingerprint={basis.fingerprint}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    cfg = _framing_from_args(args)
    noisy_clip = audio_io.read_wav(args.infile, expected_rate=args.rate)
    noisy = noisy_clip.samples

    clean = None
    if args.clean is not None:
        clean = audio_io.read_wav(args.clean, expected_rate=args.rate).samples
        if clean.shape != noisy.shape:
            raise ParameterError("clean and noisy recordings differ in length")

    if args.transform == "gft-svd":
        if args.basis is None:
            raise ParameterError("--basis is required for the gft-svd transform")
        basis = load_basis(args.basis)
        if basis.n != args.n:
            raise ParameterError(f"basis size {basis.n} != --n {args.n}")
        if args.unity_mask:
            source = enhance.unity_mask_source()
        elif args.ckpt is not None:
            params, _ = enhance.load_checkpoint(args.ckpt, basis=basis)
            source = enhance.estimator_mask_source(params)
        elif clean is not None:
            source = enhance.oracle_mask_source(clean, clip=args.clip)
        else:
            raise ParameterError("need one of --clean, --ckpt, or --unity-mask")
        enhanced = enhance.enhance_pipeline(noisy, basis, source, cfg)
    else:
        if args.ckpt is not None:
            raise ParameterError("model checkpoints only apply to the gft-svd transform")
        kind = "gft_evd" if args.transform == "gft-evd" else "stft"
        cbasis = decompose_evd(build_adjacency(args.n, args.k)) if kind == "gft_evd" else None
        if args.unity_mask:
            if kind == "gft_evd":
                enhanced = transform.synthesize_evd(
                    transform.analyze_evd(noisy, cfg, cbasis), cbasis
                )
            else:
                enhanced = transform.synthesize_stft(transform.analyze_stft(noisy, cfg))
        elif clean is not None:
            enhanced = _oracle_enhance_complex(noisy, clean, kind, cfg, cbasis, args.clip)
        else:
            raise ParameterError("need --clean or --unity-mask for complex transforms")

    audio_io.write_wav(
        args.out, audio_io.AudioClip(samples=enhanced, sample_rate=args.rate), encoding="float32"
    )

    report = metrics.EvalReport()
    if clean is not None:
        report.si_sdr_db = metrics.si_sdr(enhanced, clean)
        report.si_sdr_improvement_db = report.si_sdr_db - metrics.si_sdr(noisy, clean)
        residual = noisy - clean
        if float(np.dot(residual, residual)) > 0.0:
            report.snr_db = metrics.snr(clean, residual)
        report.max_abs_error, report.rel_l2_error = metrics.reconstruction_error(
            clean, enhanced
        )
    writer = csv.writer(sys.stdout)
    writer.writerow(metrics.METRICS_CSV_HEADER)
    writer.writerow(metrics.metrics_row(str(args.infile), report))
    if args.metrics_out is not None:
        metrics.write_metrics_csv(args.metrics_out, [(str(args.infile), report)])
    return EXIT_OK


COMPARE_HEADER = [
    "file",
    "transform",
    "k",
    "si_sdr_noisy_db",
    "si_sdr_enh_db",
    "si_sdr_imp_db",
    "status",
]


def cmd_compare(args) -> int:
    cfg = _framing_from_args(args)
    entries = audio_io.load_manifest(args.manifest)
    basis_dir = Path(args.basis_dir)

    svd_bases: dict[int, object] = {}
    evd_bases: dict[int, object] = {}

    def svd_basis(k: int):
        if k not in svd_bases:
            svd_bases[k] = load_basis(basis_dir / basis_filename(args.n, k))
        return svd_bases[k]

    def evd_basis(k: int):
        if k not in evd_bases:
            evd_bases[k] = decompose_evd(build_adjacency(args.n, k))
        return evd_bases[k]

    rows: list[list[str]] = []
    timing_rows: list[list[str]] = []
    grouped: dict[tuple[str, int], list[tuple[float, float, float]]] = {}
    failures = 0

    for idx, entry in enumerate(entries):
        try:
            clean_clip = audio_io.read_wav(entry.clean_path, expected_rate=args.rate)
            noise_clip = audio_io.read_wav(entry.noise_path, expected_rate=args.rate)
            noisy_clip, _ = audio_io.mix_at_snr(
                clean_clip, noise_clip, entry.snr_db, seed=args.seed + idx
            )
        except (GraphSpeechError, OSError) as exc:
            print(f"{entry.id}: {exc}", file=sys.stderr)
            for name in args.transforms:
                for k in args.k_list:
                    rows.append([entry.id, name, str(k), "", "", "", "failed"])
                    timing_rows.append([entry.id, name, str(k), ""])
                    failures += 1
            continue

        clean = clean_clip.samples
        noisy = noisy_clip.samples
        before = metrics.si_sdr(noisy, clean)
        audio_seconds = len(clean) / args.rate

        for name in args.transforms:
            for k in args.k_list:
                try:
                    start = time.perf_counter()
                    if name == "gft-svd":
                        basis = svd_basis(k)
                        enhanced = enhance.enhance_pipeline(
                            noisy,
                            basis,
                            enhance.oracle_mask_source(clean, clip=args.clip),
                            cfg,
                        )
                    elif name == "gft-evd":
                        enhanced = _oracle_enhance_complex(
                            noisy, clean, "gft_evd", cfg, evd_basis(k), args.clip
                        )
                    else:
                        enhanced = _oracle_enhance_complex(
                            noisy, clean, "stft", cfg, None, args.clip
                        )
                    elapsed = time.perf_counter() - start
                    after = metrics.si_sdr(enhanced, clean)
                except (GraphSpeechError, OSError) as exc:
                    print(f"{entry.id}/{name}/k={k}: {exc}", file=sys.stderr)
                    rows.append([entry.id, name, str(k), "", "", "", "failed"])
                    timing_rows.append([entry.id, name, str(k), ""])
                    failures += 1
                    continue
                rows.append(
                    [
                        entry.id,
                        name,
                        str(k),
                        format(before, ".9g"),
                        format(after, ".9g"),
                        format(after - before, ".9g"),
                        "ok",
                    ]
                )
                timing_rows.append(
                    [entry.id, name, str(k), format(elapsed / audio_seconds, ".9g")]
                )
                grouped.setdefault((name, k), []).append((before, after, after - before))

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_HEADER)
        writer.writerows(rows)
        for name in args.transforms:
            for k in args.k_list:
                values = grouped.get((name, k), [])
                if values:
                    means = np.mean(np.asarray(values), axis=0)
                    writer.writerow(
                        ["MEAN", name, str(k)]
                        + [format(v, ".9g") for v in means]
                        + ["ok"]
                    )
                else:
                    writer.writerow(["MEAN", name, str(k), "", "", "", "failed"])

    timing_path = Path(args.out).with_name(Path(args.out).stem + "_timing.csv")
    with open(timing_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "transform", "k", "sec_per_audio_sec"])
        writer.writerows(timing_rows)

    print(f"wrote {args.out} ({len(rows)} data rows) and {timing_path}")
    return EXIT_PARTIAL if failures else EXIT_OK


def _write_pgm(path, matrix: np.ndarray) -> None:
    """8-bit portable graymap; rows are bins, columns frames, signed data
    mapped linearly and symmetrically around mid-gray."""
    img = np.asarray(matrix, dtype=np.float64).T
    peak = float(np.max(np.abs(img))) if img.size else 0.0
    if peak == 0.0:
        pixels = np.full(img.shape, 128, dtype=np.uint8)
    else:
        pixels = np.clip(np.rint((img + peak) / (2.0 * peak) * 255.0), 0, 255).astype(np.uint8)
    height, width = img.shape
    Path(path).write_bytes(f"P5\n{width} {height}\n255\n".encode() + pixels.tobytes())


def _read_spectrogram_csv(path) -> list[np.ndarray]:
    """Load matrices back from the spectrogram CSV export (1 real or 2 complex)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header == ["frame", "bin", "value"]:
            ncols = 1
        elif header == ["frame", "bin", "real", "imag"]:
            ncols = 2
        else:
            raise FileFormatError(f"{path}: unrecognized spectrogram CSV header {header!r}")
        cells = [(int(r[0]), int(r[1]), [float(v) for v in r[2:]]) for r in reader if r]
    if not cells:
        raise FileFormatError(f"{path}: no data rows")
    f = max(c[0] for c in cells) + 1
    b = max(c[1] for c in cells) + 1
    mats = [np.zeros((f, b)) for _ in range(ncols)]
    for frame, binno, values in cells:
        for i, v in enumerate(values):
            mats[i][frame, binno] = v
    return mats


def cmd_render(args) -> int:
    prefix = Path(args.out_prefix)
    suffix = Path(args.infile).suffix.lower()
    if suffix == ".csv":
        mats = _read_spectrogram_csv(args.infile)
        if len(mats) == 1:
            _write_pgm(prefix.with_suffix(".pgm"), mats[0])
            print(f"wrote {prefix.with_suffix('.pgm')}")
        else:
            _write_pgm(f"{prefix}_real.pgm", mats[0])
            _write_pgm(f"{prefix}_imag.pgm", mats[1])
            print(f"wrote {prefix}_real.pgm and {prefix}_imag.pgm")
        return EXIT_OK

    cfg = _framing_from_args(args)
    wave = audio_io.read_wav(args.infile, expected_rate=args.rate).samples
    csv_path = prefix.with_suffix(".csv")
    if args.transform == "gft-svd":
        if args.basis is None:
            raise ParameterError("--basis is required for the gft-svd transform")
        basis = load_basis(args.basis)
        spec = transform.analyze(wave, cfg, basis)
        transform.spectrogram_to_csv(spec, csv_path)
        _write_pgm(prefix.with_suffix(".pgm"), spec.coeffs)
        print(f"wrote {csv_path} and {prefix.with_suffix('.pgm')}")
    else:
        if args.transform == "gft-evd":
            cbasis = decompose_evd(build_adjacency(args.n, args.k))
            spec = transform.analyze_evd(wave, cfg, cbasis)
        else:
            spec = transform.analyze_stft(wave, cfg)
        transform.spectrogram_to_csv(spec, csv_path)
        _write_pgm(f"{prefix}_real.pgm", spec.real)
        _write_pgm(f"{prefix}_imag.pgm", spec.imag)
        print(f"wrote {csv_path}, {prefix}_real.pgm, {prefix}_imag.pgm")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _framing_from_args(args)
    basis = load_basis(args.basis)
    if basis.n != args.n:
        raise ParameterError(f"basis size {basis.n} != --n {args.n}")
    entries = audio_io.load_manifest(args.manifest)
    if not entries:
        raise ParameterError("manifest contains no utterances")

    utterances = []
    for idx, entry in enumerate(entries):
        clean = audio_io.read_wav(entry.clean_path, expected_rate=args.rate)
        noise = audio_io.read_wav(entry.noise_path, expected_rate=args.rate)
        noisy, _ = audio_io.mix_at_snr(clean, noise, entry.snr_db, seed=args.seed + idx)
        utterances.append((entry.id, noisy.samples, clean.samples))

    train_cfg = enhance.TrainConfig(
        learning_rate=args.lr,
        steps=args.steps,
        batch_size=args.batch,
        seed=args.seed,
    )
    params = enhance.init_mlp_params(
        sizes=(args.n, args.hidden, args.n), out_scale=args.out_scale, seed=args.seed
    )
    state = enhance.AdamState.zeros_like(params)

    loss_path = (
        Path(args.loss_out)
        if args.loss_out is not None
        else Path(args.out).with_suffix(".loss.csv")
    )
    with open(loss_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "utterances", "loss"])
        cursor = 0
        for step in range(1, train_cfg.steps + 1):
            batch = []
            ids = []
            for _ in range(train_cfg.batch_size):
                entry_id, noisy, clean = utterances[cursor % len(utterances)]
                batch.append((noisy, clean))
                ids.append(entry_id)
                cursor += 1
            params, state, loss = enhance.train_batch_step(
                params, state, batch, basis, cfg, train_cfg
            )
            writer.writerow([step, "+".join(ids), format(loss, ".17g")])

    enhance.save_checkpoint(args.out, params, basis.fingerprint)
    print(f"wrote {args.out} and {loss_path} (final loss {loss:.6f})")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=512, help="transform length (default 512)")
    p.add_argument("--k", type=int, default=3, help="neighbour links per sample (default 3)")
    p.add_argument("--rate", type=int, default=16000, help="sample rate in Hz (default 16000)")
    p.add_argument("--win-ms", type=float, default=25.0, help="window length in ms (default 25)")
    p.add_argument("--hop-ms", type=float, default=6.25, help="hop size in ms (default 6.25)")
    p.add_argument(
        "--window",
        choices=sorted(WINDOW_KIND_BY_FLAG),
        default="hann",
        help="analysis/synthesis window (default hann)",
    )
    p.add_argument("--seed", type=int, default=0, help="seed for all randomized choices")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphspeech",
        description="Real-valued graph-spectral speech enhancement toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("basis", help="compute and persist a canonical shift-matrix basis")
    _add_common(p)
    p.add_argument("--out", required=True, help="output basis file (.gftb)")
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("enhance", help="mask-based enhancement of a noisy recording")
    _add_common(p)
    p.add_argument("--in", dest="infile", required=True, help="noisy input WAV")
    p.add_argument("--out", required=True, help="enhanced output WAV (float32)")
    p.add_argument("--basis", help="basis file (required for gft-svd)")
    p.add_argument("--transform", choices=TRANSFORMS, default="gft-svd")
    p.add_argument("--clean", help="clean reference WAV (oracle mask / metrics)")
    p.add_argument("--ckpt", help="trained estimator checkpoint (.gftm)")
    p.add_argument("--unity-mask", action="store_true", help="debug: pass-through mask")
    p.add_argument("--clip", type=_parse_clip, default=enhance.DEFAULT_MASK_CLIP)
    p.add_argument("--metrics-out", help="also write a metrics CSV here")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("compare", help="oracle-mask sweep over transforms and k values")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="dataset manifest CSV")
    p.add_argument("--basis-dir", required=True, help="directory holding basis_n{n}_k{k}.gftb files")
    p.add_argument("--k-list", type=_parse_int_list, default=[1, 3, 5, 7])
    p.add_argument(
        "--transforms", type=_parse_transform_list, default=list(TRANSFORMS)
    )
    p.add_argument("--clip", type=_parse_clip, default=enhance.DEFAULT_MASK_CLIP)
    p.add_argument("--out", required=True, help="comparison table CSV")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("render", help="export spectrogram CSV and PGM heatmap(s)")
    _add_common(p)
    p.add_argument("--in", dest="infile", required=True, help="input WAV, or a spectrogram CSV")
    p.add_argument("--basis", help="basis file (required for gft-svd on WAV input)")
    p.add_argument("--transform", choices=TRANSFORMS, default="gft-svd")
    p.add_argument("--out-prefix", required=True, help="output path prefix")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", help="train the mask estimator on a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--out", required=True, help="output checkpoint (.gftm)")
    p.add_argument("--loss-out", help="per-step loss CSV (default <out>.loss.csv)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--out-scale", type=float, default=2.0)
    p.set_defaults(func=cmd_train)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FingerprintMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (DecompositionError, NumericalDivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
