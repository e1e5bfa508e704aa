"""
Command-line entry point: mix, train, enhance, eval and bench subcommands

Exit codes: 0 on success, 2 for usage, configuration and I/O problems,
3 when training hits a non-finite loss or gradient.
"""

import argparse
import configparser
import logging
import sys
import typing
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from audio_data import MixSpec, read_manifest, read_wav, render_mix, write_manifest, write_wav
from enhancement_engine import EnhanceConfig, bench_rtf, enhance_file, evaluate
from errors import EnhancerError, NumericalError
from losses import LossConfig
from network import ModelConfig, PercepNetPlus, load_model
from post_processor import PostprocConfig
from trainer import TrainRun, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
CONFIG_SECTIONS = {'model': ModelConfig, 'loss': LossConfig, 'postproc': PostprocConfig, 'train': TrainRun}


class UsageError(Exception):
    """Invalid flag values or combinations"""


def _coerce(raw: str, annotation):
    origin = typing.get_origin(annotation)
    if origin is typing.Union:
        inner = [a for a in typing.get_args(annotation) if a is not type(None)]
        if raw.strip().lower() in ('', 'none'):
            return None
        annotation = inner[0]
    if annotation is bool or annotation == 'bool':
        lowered = raw.strip().lower()
        if lowered not in ('1', '0', 'true', 'false', 'yes', 'no', 'on', 'off'):
            raise ValueError(f"not a boolean: '{raw}'")
        return lowered in ('1', 'true', 'yes', 'on')
    if annotation in (int, float, str):
        return annotation(raw)
    if annotation is Path:
        return Path(raw)
    return raw


def load_config(path: Optional[str]) -> Dict[str, Dict]:
    """
    Read an INI-style config file

    Sections [model], [loss], [postproc] and [train] hold key = value
    pairs named after the fields of the matching config classes.

    Returns:
        Section name -> dict of typed overrides
    """
    overrides: Dict[str, Dict] = {name: {} for name in CONFIG_SECTIONS}
    if path is None:
        return overrides
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding='utf-8'):
        raise UsageError(f"Config file not found: {path}")
    for section in parser.sections():
        if section not in CONFIG_SECTIONS:
            raise UsageError(f"{path}: unknown section [{section}]")
        hints = typing.get_type_hints(CONFIG_SECTIONS[section])
        known = {f.name for f in fields(CONFIG_SECTIONS[section])}
        for key, raw in parser.items(section):
            if key not in known:
                raise UsageError(f"{path}: unknown key '{key}' in [{section}]")
            try:
                overrides[section][key] = _coerce(raw, hints[key])
            except ValueError as e:
                raise UsageError(f"{path}: [{section}] {key}: {e}") from e
    return overrides


def snr_threshold_from_db(threshold_db: float) -> float:
    """Map a threshold in dB onto the normalized SNR scale of the network"""
    return float(np.clip((threshold_db + 10.0) / 40.0, 0.0, 1.0))


def _wav_files(directory: Optional[str], label: str) -> List[Path]:
    if directory is None:
        raise UsageError(f"--{label}-dir is required without --manifest")
    files = sorted(Path(directory).glob('*.wav'))
    if not files:
        raise UsageError(f"No WAV files found in {label} directory {directory}")
    return files


def cmd_mix(args) -> int:
    """Write clean/, noisy/, noise/ and manifest.tsv for a mixed dataset"""
    if args.snr_min > args.snr_max:
        raise UsageError(f"--snr-min {args.snr_min} exceeds --snr-max {args.snr_max}")
    if args.manifest:
        specs = read_manifest(args.manifest)
        base = Path(args.manifest).parent
    else:
        clean_files = _wav_files(args.clean_dir, 'clean')
        noise_files = _wav_files(args.noise_dir, 'noise')
        rir_files = sorted(Path(args.rir_dir).glob('*.wav')) if args.rir_dir else []
        rng = np.random.default_rng(args.seed)
        specs = []
        for clean in clean_files:
            noise = noise_files[int(rng.integers(0, len(noise_files)))]
            snr_db = round(float(rng.uniform(args.snr_min, args.snr_max)), 4)
            seed = int(rng.integers(0, 2 ** 31))
            rir = None
            if rir_files and rng.random() < args.rir_prob:
                rir = str(rir_files[int(rng.integers(0, len(rir_files)))])
            specs.append(MixSpec(str(clean), str(noise), snr_db, seed, rir))
        base = None

    out = Path(args.out_dir)
    for spec in tqdm(specs, desc='Mixing'):
        clean, noisy, noise = render_mix(spec, base)
        for folder, signal in (('clean', clean), ('noisy', noisy), ('noise', noise)):
            write_wav(out / folder / f"{spec.name}.wav", signal, subtype='DOUBLE')
    write_manifest(out / 'manifest.tsv', specs)
    logger.info("Wrote %d mixtures to %s", len(specs), out)
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = load_config(args.config)
    preset = ModelConfig.full if args.preset == 'full' else ModelConfig.desk
    train_values = dict(overrides['train'])
    train_values.update(data_dir=Path(args.data), model_path=Path(args.out),
                        model=preset(**overrides['model']), loss=LossConfig(**overrides['loss']))
    train_values.setdefault('out_dir', Path(args.out).parent / f"{Path(args.out).stem}_run")
    for flag in ('epochs', 'seed', 'batch_size'):
        if getattr(args, flag) is not None:
            train_values[flag] = getattr(args, flag)
    if args.baseline_loss:
        train_values['baseline_loss'] = True
    if args.dynamic_mix:
        train_values['dynamic_mix'] = True
    if args.resume:
        train_values['resume_from'] = Path(args.resume)
    if args.seed is not None:
        train_values['model'].seed = args.seed

    result = train(TrainRun(**train_values))
    if not result.history.empty and 'total' in result.history:
        logger.info("Final training loss %.4f", result.history['total'].iloc[-1])
    print(f"model={args.out}")
    return EXIT_OK


def enhance_config(args, overrides: Dict[str, Dict]) -> EnhanceConfig:
    if args.no_pp and args.force_pp:
        raise UsageError("--no-pp and --force-pp are mutually exclusive")
    postproc = dict(overrides['postproc'])
    if args.snr_threshold_db is not None:
        postproc['snr_threshold_norm'] = snr_threshold_from_db(args.snr_threshold_db)
    mode = 'never' if args.no_pp else 'always' if args.force_pp else 'switch'
    return EnhanceConfig(postproc=PostprocConfig(**postproc), pp_mode=mode)


def cmd_enhance(args) -> int:
    config = enhance_config(args, load_config(args.config))
    model = load_model(args.model)
    noisy = read_wav(args.input)
    enhanced = enhance_file(noisy, model, config)
    write_wav(args.output, enhanced)
    logger.info("Wrote %s (%d samples)", args.output, len(enhanced))
    return EXIT_OK


def cmd_eval(args) -> int:
    config = enhance_config(args, load_config(args.config))
    model = load_model(args.model)
    if not Path(args.testset).is_dir():
        raise UsageError(f"Test set directory not found: {args.testset}")
    report = evaluate(model, args.testset, config, report_path=args.report)
    for bucket, row in report.bucket_means().iterrows():
        logger.info("%-8s STOI %.3f -> %.3f, SI-SDR %.2f -> %.2f dB", bucket, row.stoi_noisy,
                    row.stoi_enh, row.sisdr_noisy, row.sisdr_enh)
    census = report.census()
    logger.info("%d files degraded after enhancement (%.0f%% of them at >=14 dB)",
                census['degraded'], 100.0 * census['degraded_high_snr_share'])
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.seconds <= 0:
        raise UsageError(f"--seconds must be positive, got {args.seconds}")
    if args.model:
        model = load_model(args.model)
    else:
        model = PercepNetPlus(ModelConfig.full() if args.preset == 'full' else ModelConfig.desk())
    rtf = bench_rtf(model, args.seconds, seed=args.seed, content=args.content)
    print(f"rtf={rtf:.4f}")
    return EXIT_OK


def _add_config_flag(parser: argparse.ArgumentParser):
    # SUPPRESS keeps a --config given before the command
    parser.add_argument('--config', default=argparse.SUPPRESS, help='INI file, same as the top-level --config')


def _add_pp_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--no-pp', action='store_true', help='Bypass post-processing on every frame')
    parser.add_argument('--force-pp', action='store_true', help='Post-process every frame')
    parser.add_argument('--snr-threshold-db', type=float, default=None,
                        help='SNR above which post-processing is bypassed (default 14)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='percepnet', description='Full-band speech enhancement')
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--config', default=None, help='INI file with [model], [loss], [train], [postproc]')
    sub = parser.add_subparsers(dest='command', required=True)

    mix_p = sub.add_parser('mix', help='Simulate a noisy dataset')
    mix_p.add_argument('--manifest')
    mix_p.add_argument('--clean-dir')
    mix_p.add_argument('--noise-dir')
    mix_p.add_argument('--rir-dir')
    mix_p.add_argument('--rir-prob', type=float, default=0.5)
    mix_p.add_argument('--snr-min', type=float, default=-5.0)
    mix_p.add_argument('--snr-max', type=float, default=20.0)
    mix_p.add_argument('--seed', type=int, default=0)
    mix_p.add_argument('--out-dir', required=True)
    mix_p.set_defaults(func=cmd_mix)

    train_p = sub.add_parser('train', help='Train a model')
    train_p.add_argument('--data', required=True)
    train_p.add_argument('--out', required=True)
    train_p.add_argument('--epochs', type=int)
    train_p.add_argument('--seed', type=int)
    train_p.add_argument('--batch-size', type=int)
    train_p.add_argument('--preset', choices=['desk', 'full'], default='desk')
    train_p.add_argument('--baseline-loss', action='store_true')
    train_p.add_argument('--dynamic-mix', action='store_true')
    train_p.add_argument('--resume')
    _add_config_flag(train_p)
    train_p.set_defaults(func=cmd_train)

    enh_p = sub.add_parser('enhance', help='Enhance a WAV file')
    enh_p.add_argument('--model', required=True)
    enh_p.add_argument('--in', dest='input', required=True)
    enh_p.add_argument('--out', dest='output', required=True)
    _add_pp_flags(enh_p)
    _add_config_flag(enh_p)
    enh_p.set_defaults(func=cmd_enhance)

    eval_p = sub.add_parser('eval', help='Score a model on a mixed test set')
    eval_p.add_argument('--model', required=True)
    eval_p.add_argument('--testset', required=True)
    eval_p.add_argument('--report', required=True)
    _add_pp_flags(eval_p)
    _add_config_flag(eval_p)
    eval_p.set_defaults(func=cmd_eval)

    bench_p = sub.add_parser('bench', help='Measure the single-threaded real-time factor')
    bench_p.add_argument('--model')
    bench_p.add_argument('--preset', choices=['desk', 'full'], default='desk')
    bench_p.add_argument('--seconds', type=float, default=30.0)
    bench_p.add_argument('--seed', type=int, default=0)
    bench_p.add_argument('--content', choices=['speech', 'noise', 'silence'], default='speech')
    bench_p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(stream=sys.stderr, level=getattr(logging, args.log_level),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s', force=True)
    try:
        return args.func(args)
    except NumericalError as e:
        logger.error("%s", e)
        return EXIT_NUMERICAL
    except UsageError as e:
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (EnhancerError, OSError, ValueError) as e:
        logger.error("%s", e)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
