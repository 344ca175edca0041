#!/usr/bin/env python3
"""
CADENet command line

Training-free adverse-weather perception: weather estimation, patch
reliability, condition-adaptive enhancement, the three-thread pipeline and
the C1 / C2 benchmark harness behind one entry point.

Features:
    - enhance / wem / pee: single-image tools
    - sed dump: inspect a scene database file
    - pipeline: run the three workers over a directory or a synthetic sequence
    - benchmark / ablate: C1 / C2 evaluation and ablations A1..A7
    - latency: stage timings with the GPU (10 + 50) or CPU (5 + 100) discipline
    - synth: write a synthetic VOC corpus

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import copy
import difflib
import json
import logging
import os
import re
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from cape import (
    DEFAULT_CONFIG_PATH,
    FilterConfig,
    FilterConfigError,
    enhance,
    load_config,
)
from detectors import Frame, synthetic_detector
from evaluation import (
    ABLATION_DESCRIPTIONS,
    DEFAULT_ALIASES,
    DEFAULT_CLASSES,
    ROUTINGS,
    BenchmarkError,
    ablate,
    format_ablation_table,
    format_summary_table,
    format_wem_table,
    load_corpus,
    parse_voc,
    run_benchmark,
    write_jsonl,
)
from imaging import lab_stats, luma, read_raster, write_raster
from inference_client import InferenceError, RemoteInferenceClient
from ktt import TrackerParams
from pee import entropy_map, format_grid, render_heatmap
from pipeline import (
    ABLATIONS,
    TIMING_DISCIPLINES,
    AblationFlags,
    CadenetPipeline,
    SimulatedRunner,
    StageCosts,
    ThreadedRunner,
    format_latency_table,
    measure_latency,
    stage_operations,
    timing_discipline,
)
from sed import DEFAULT_PROMPTS, PseudoEmbedder, SceneDatabase, load_prompts
from synthetic import DEGRADATIONS, degrade, generate_corpus, render_scene, synthetic_sequence
from wem import CONDITIONS, WeatherEstimate, estimate, severity_for

logger = logging.getLogger(__name__)

RUN_CONFIG_ENV = 'CADENET_CONFIG'
DEFAULT_RUN_CONFIG_PATH = 'cadenet-config.json'
LOG_FILE = 'cadenet.log'

IMAGE_EXTENSIONS = ('.png', '.ppm', '.jpg', '.jpeg')

DEFAULT_RUN_CONFIG = {
    "filter_config": DEFAULT_CONFIG_PATH,
    "sed_path": None,
    "prompts": "prompts/weather_prompts.txt",
    "inference_url": None,
    "inference_token_file": None,
    "conf_thresh": 0.25,
    "match_iou": 0.5,
    "nms_iou": 0.45,
    "track_gate": 0.3,
    "spread_threshold": 0.15,
    "fps": 30.0,
    "seed": 0,
    "night_gate": None,
    "ablations": [],
    "classes": DEFAULT_CLASSES,
    "aliases": DEFAULT_ALIASES,
}

_UNIT_KEYS = ('conf_thresh', 'match_iou', 'nms_iou', 'track_gate', 'spread_threshold')


class RunConfigError(ValueError):
    """Raised for an invalid run configuration"""


@dataclass
class RunConfig:
    filter_config: str = DEFAULT_CONFIG_PATH
    sed_path: Optional[str] = None
    prompts: Optional[str] = "prompts/weather_prompts.txt"
    inference_url: Optional[str] = None
    inference_token_file: Optional[str] = None
    conf_thresh: float = 0.25
    match_iou: float = 0.5
    nms_iou: float = 0.45
    track_gate: float = 0.3
    spread_threshold: float = 0.15
    fps: float = 30.0
    seed: int = 0
    night_gate: Optional[float] = None
    ablations: List[str] = field(default_factory=list)
    classes: Dict[str, int] = field(default_factory=lambda: dict(DEFAULT_CLASSES))
    aliases: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_ALIASES))
    source: Optional[str] = None  # file the values came from

    def __post_init__(self):
        for key in _UNIT_KEYS:
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 < value < 1.0:
                raise RunConfigError(f"{key} must be in (0, 1), got {value!r}")
        if isinstance(self.fps, bool) or not isinstance(self.fps, (int, float)) or not self.fps > 0:
            raise RunConfigError(f"fps must be > 0, got {self.fps!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise RunConfigError(f"seed must be an integer, got {self.seed!r}")
        if self.night_gate is not None and not (isinstance(self.night_gate, (int, float)) and self.night_gate > 0):
            raise RunConfigError(f"night_gate must be a positive number or null, got {self.night_gate!r}")
        try:
            AblationFlags.from_ids(self.ablations)
        except ValueError as e:
            raise RunConfigError(str(e)) from e

    @property
    def t_cam_ms(self) -> float:
        return 1000.0 / self.fps

    def flags(self) -> AblationFlags:
        return AblationFlags.from_ids(self.ablations)


def run_config_from_dict(data: Dict, source: Optional[str] = None) -> RunConfig:
    """Merge a (possibly partial) dictionary over DEFAULT_RUN_CONFIG and validate it."""
    if not isinstance(data, dict):
        raise RunConfigError(f"run configuration must be a JSON object, got {type(data).__name__}")
    merged = copy.deepcopy(DEFAULT_RUN_CONFIG)
    for key, value in data.items():
        if key not in merged:
            raise RunConfigError(f"unknown run configuration key {key!r}")
        merged[key] = value
    return RunConfig(source=source, **merged)


def resolve_run_config_path(flag_path: Optional[str] = None) -> Optional[str]:
    """The --config flag, then CADENET_CONFIG, then ./cadenet-config.json if present."""
    if flag_path:
        return flag_path
    env_path = os.environ.get(RUN_CONFIG_ENV)
    if env_path:
        return env_path
    if os.path.exists(DEFAULT_RUN_CONFIG_PATH):
        return DEFAULT_RUN_CONFIG_PATH
    return None


def load_run_config(flag_path: Optional[str] = None) -> RunConfig:
    path = resolve_run_config_path(flag_path)
    if path is None:
        logger.debug("No run configuration file, using defaults")
        return RunConfig()
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise RunConfigError(f"run configuration {path} not found") from e
    except json.JSONDecodeError as e:
        raise RunConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    cfg = run_config_from_dict(data, source=path)
    logger.info(f"Loaded run configuration from {path}")
    return cfg


def load_filter_config(path: str) -> FilterConfig:
    """Filter configuration from a file; the bundled default path may be absent."""
    if not os.path.exists(path):
        if path == DEFAULT_CONFIG_PATH:
            logger.info(f"{path} not found, using built-in filter defaults")
            return FilterConfig()
        raise FilterConfigError(f"filter configuration {path} not found")
    return load_config(path)


def load_frames(directory: str, fps: float = 30.0,
                classes: Dict[str, int] = DEFAULT_CLASSES,
                aliases: Dict[str, str] = DEFAULT_ALIASES) -> List[Frame]:
    """
    Frames from the images of a directory in name order.

    A VOC XML file beside an image becomes the frame's ground-truth sidecar.
    """
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"frame directory {directory} not found")
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(IMAGE_EXTENSIONS))
    if not names:
        raise FileNotFoundError(f"no images in {directory}")
    t_cam = 1000.0 / fps
    frames = []
    for i, name in enumerate(names):
        path = os.path.join(directory, name)
        xml = os.path.splitext(path)[0] + '.xml'
        annotations = None
        if os.path.exists(xml):
            gt = parse_voc(xml, None, classes, aliases)
            annotations = gt.boxes if gt is not None else None
        frames.append(Frame(read_raster(path), i, i * t_cam, annotations))
    logger.info(f"Loaded {len(frames)} frames from {directory}")
    return frames


def _prompts(run_cfg: RunConfig):
    if run_cfg.prompts and os.path.exists(run_cfg.prompts):
        return load_prompts(run_cfg.prompts)
    return list(DEFAULT_PROMPTS)


def _open_sed(path: Optional[str]) -> Optional[SceneDatabase]:
    return SceneDatabase.load(path) if path else None


def _pipeline_factory(run_cfg: RunConfig, cfg: FilterConfig, s_kind: str, q_kind: str,
                      sed: Optional[SceneDatabase] = None):
    """Closure building a fresh CadenetPipeline per set of ablation flags."""
    prompts = _prompts(run_cfg)
    remote = None
    if run_cfg.inference_url:
        remote = RemoteInferenceClient(run_cfg.inference_url, run_cfg.inference_token_file)
    tracker = TrackerParams(iou_gate=run_cfg.track_gate)

    def make(flags: AblationFlags) -> CadenetPipeline:
        return CadenetPipeline(
            synthetic_detector(s_kind, source='S'),
            synthetic_detector(q_kind, source='Q'),
            cfg, flags,
            conf_thresh=run_cfg.conf_thresh,
            nms_iou=run_cfg.nms_iou,
            spread_threshold=run_cfg.spread_threshold,
            night_gate=run_cfg.night_gate,
            tracker_params=tracker,
            sed=sed,
            embedder=remote,
            classifier=remote,
            prompts=prompts,
        )
    return make


def _write_lines(path: Optional[str], lines: Sequence[str]) -> None:
    if path is None:
        for line in lines:
            print(line)
        return
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w') as f:
        for line in lines:
            f.write(line + '\n')


class CadenetArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that exits with status 1 and suggests close matches."""

    def _known_words(self) -> List[str]:
        words = []
        for action in self._actions:
            words.extend(action.option_strings)
            if isinstance(action, argparse._SubParsersAction):
                words.extend(action.choices.keys())
                for sub in action.choices.values():
                    words.extend(sub._known_words())
        return words

    def error(self, message):
        self.print_usage(sys.stderr)
        hint = ''
        match = re.search(r"unrecognized arguments: (\S+)|invalid choice: '([^']+)'", message)
        if match:
            token = match.group(1) or match.group(2)
            close = difflib.get_close_matches(token, self._known_words(), n=1)
            if close:
                hint = f" (did you mean {close[0]}?)"
        sys.stderr.write(f"{self.prog}: error: {message}{hint}\n")
        sys.exit(1)


def parse_arguments(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments"""
    parser = CadenetArgumentParser(
        prog='cadenet',
        description="Training-free adverse-weather perception pipeline and benchmark harness",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"""
Run configuration is read from --config, then ${RUN_CONFIG_ENV}, then ./{DEFAULT_RUN_CONFIG_PATH}.

EXAMPLES:
  cadenet enhance --condition fog --severity 0.5 in.png out.png
  cadenet wem frame.png
  cadenet synth --out corpus --n 50 --conditions fog
  cadenet benchmark --corpus corpus --routing gt_label --out results
  cadenet ablate --corpus corpus --ids A1,A4
  cadenet latency --mode gpu --op egnms
""")

    # Shared options
    parent_parser = argparse.ArgumentParser(add_help=False)
    parent_parser.add_argument('--debug', action='store_true', help='Enable debug logging')
    parent_parser.add_argument('--config', metavar='PATH',
                               help=f'Run configuration JSON (default: ${RUN_CONFIG_ENV} or ./{DEFAULT_RUN_CONFIG_PATH})')
    parent_parser.add_argument('--seed', type=int, default=None, help='Random seed (default: 0)')

    filter_parser = argparse.ArgumentParser(add_help=False)
    filter_parser.add_argument('--filter-config', metavar='PATH',
                               help=f'CAPE filter parameters JSON (default: {DEFAULT_CONFIG_PATH})')
    filter_parser.add_argument('--night-gate', type=float, default=None, metavar='THETA',
                               help='Use CLAHE instead of DCP for fog frames with mean L below THETA (default: off)')

    threshold_parser = argparse.ArgumentParser(add_help=False)
    threshold_parser.add_argument('--conf', type=float, default=None,
                                  help='Detection confidence threshold (default: 0.25)')
    threshold_parser.add_argument('--iou', type=float, default=None,
                                  help='Match IoU threshold (default: 0.5)')

    subparsers = parser.add_subparsers(dest='command', help='Command to execute')

    # enhance
    enhance_parser = subparsers.add_parser('enhance', parents=[parent_parser, filter_parser],
                                           help='Enhance one image')
    enhance_parser.add_argument('--condition', choices=list(CONDITIONS),
                                help='Weather condition (default: estimated by WEM)')
    enhance_parser.add_argument('--severity', type=float, default=None,
                                help='Severity in [0, 1] (default: estimated from the image)')
    enhance_parser.add_argument('input', help='Input image (PNG or PPM)')
    enhance_parser.add_argument('output', help='Output image')

    # wem
    wem_parser = subparsers.add_parser('wem', parents=[parent_parser], help='Estimate weather of one image')
    wem_parser.add_argument('image', help='Input image')

    # pee
    pee_parser = subparsers.add_parser('pee', parents=[parent_parser], help='Patch reliability map of one image')
    pee_parser.add_argument('image', help='Input image')
    pee_parser.add_argument('--out', metavar='PNG', help='Heat image output (default: <image>_reliability.png)')
    pee_parser.add_argument('--grid', metavar='TXT', help='Text grid output (default: print)')

    # sed
    sed_parser = subparsers.add_parser('sed', parents=[parent_parser], help='Scene database tools')
    sed_subparsers = sed_parser.add_subparsers(dest='sed_command', help='Scene database command')
    dump_parser = sed_subparsers.add_parser('dump', help='Print database entries')
    dump_parser.add_argument('path', help='Database file')

    # pipeline
    pipeline_parser = subparsers.add_parser('pipeline', parents=[parent_parser, filter_parser],
                                            help='Run the three-thread pipeline',
                                            formatter_class=argparse.RawDescriptionHelpFormatter,
                                            description="""
        Run Thread S, Thread Q and Thread E over a frame source.

        ABLATIONS:
""" + '\n'.join(f"        {k}  {v}" for k, v in ABLATION_DESCRIPTIONS.items()))
    pipeline_parser.add_argument('--source', default='synthetic',
                                 help="Frame directory or 'synthetic' (default: synthetic)")
    pipeline_parser.add_argument('--fps', type=float, default=None, help='Camera rate (default: 30)')
    pipeline_parser.add_argument('--ablation', default=None, metavar='IDS',
                                 help='Comma-separated ablation IDs A1..A7 (default: none)')
    pipeline_parser.add_argument('--mode', choices=['simulated', 'threaded'], default='simulated',
                                 help='Virtual clock with stage cost model, or real threads (default: simulated)')
    pipeline_parser.add_argument('--frames', type=int, default=300,
                                 help='Synthetic sequence length (default: 300)')
    pipeline_parser.add_argument('--condition', choices=list(DEGRADATIONS), default='fog',
                                 help='Synthetic sequence weather (default: fog)')
    pipeline_parser.add_argument('--severity', type=float, default=0.8,
                                 help='Synthetic sequence severity (default: 0.8)')
    pipeline_parser.add_argument('--s-detector', choices=['oracle', 'contrast'], default='oracle',
                                 help='Thread S detector (default: oracle)')
    pipeline_parser.add_argument('--q-detector', choices=['oracle', 'contrast'], default='oracle',
                                 help='Thread Q detector (default: oracle)')
    pipeline_parser.add_argument('--q-cost', type=float, default=None, metavar='MS',
                                 help='Simulated Thread Q cycle in ms, replacing the stage sum (default: stage sum)')
    pipeline_parser.add_argument('--sed', metavar='PATH', help='Scene database file (default: none)')
    pipeline_parser.add_argument('--out', metavar='LOG', help='Track log output (default: print)')

    # benchmark
    benchmark_parser = subparsers.add_parser('benchmark', parents=[parent_parser, filter_parser, threshold_parser],
                                             help='C1 / C2 benchmark on a VOC corpus')
    benchmark_parser.add_argument('--corpus', required=True, help='Corpus directory (images, VOC XML, labels.csv)')
    benchmark_parser.add_argument('--routing', choices=list(ROUTINGS), default='gt_label',
                                  help='Condition routing (default: gt_label)')
    benchmark_parser.add_argument('--detector', choices=['oracle', 'contrast'], default='contrast',
                                  help='Detector for both variants (default: contrast)')
    benchmark_parser.add_argument('--sed', metavar='PATH', help='Scene database for recommendations (default: none)')
    benchmark_parser.add_argument('--out', metavar='DIR', help='Directory for results.jsonl and summary.txt')

    # ablate
    ablate_parser = subparsers.add_parser('ablate', parents=[parent_parser, filter_parser],
                                          help='Run ablations A1..A7')
    ablate_parser.add_argument('--corpus', required=True, help='Corpus directory for A3 / A4')
    ablate_parser.add_argument('--ids', default=','.join(ABLATIONS),
                               help='Comma-separated ablation IDs (default: A1,...,A7)')
    ablate_parser.add_argument('--detector', choices=['oracle', 'contrast'], default='contrast',
                               help='Benchmark detector (default: contrast)')
    ablate_parser.add_argument('--frames', type=int, default=300,
                               help='Synthetic sequence length for pipeline ablations (default: 300)')

    # latency
    latency_parser = subparsers.add_parser('latency', parents=[parent_parser, filter_parser],
                                           help='Measure stage latencies')
    latency_parser.add_argument('--mode', choices=list(TIMING_DISCIPLINES), default='gpu',
                                help='gpu: 10 warmup + 50 timed, cpu: 5 warmup + 100 timed (default: gpu)')
    latency_parser.add_argument('--op', default='all', help='Stage to time, or all (default: all)')
    latency_parser.add_argument('--image', help='Frame to time on (default: synthetic fog scene)')
    latency_parser.add_argument('--sed', metavar='PATH', help='Scene database for the sed_knn stage')

    # synth
    synth_parser = subparsers.add_parser('synth', parents=[parent_parser], help='Write a synthetic VOC corpus')
    synth_parser.add_argument('--out', required=True, help='Output directory')
    synth_parser.add_argument('--n', type=int, default=50, help='Number of images (default: 50)')
    synth_parser.add_argument('--conditions', default='fog',
                              help='Comma-separated degradations, cycled (default: fog)')
    synth_parser.add_argument('--severity-min', type=float, default=0.6, help='Lowest severity (default: 0.6)')
    synth_parser.add_argument('--severity-max', type=float, default=1.0, help='Highest severity (default: 1.0)')

    if argv is not None and len(argv) == 0:
        parser.print_usage(sys.stderr)
        sys.exit(1)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        sys.exit(1)
    if args.command == 'sed' and args.sed_command is None:
        sed_parser.print_usage(sys.stderr)
        sys.exit(1)
    return args


def configure_logging(debug: bool = False) -> None:
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(LOG_FILE),
            logging.StreamHandler()
        ]
    )
    if debug:
        root = logging.getLogger()
        root.setLevel(logging.DEBUG)
        for handler in root.handlers:
            handler.setLevel(logging.DEBUG)
        logger.debug("Debug logging enabled")


def _effective(args: argparse.Namespace, run_cfg: RunConfig) -> RunConfig:
    """Apply command-line overrides to the run configuration."""
    overrides = {}
    if getattr(args, 'seed', None) is not None:
        overrides['seed'] = args.seed
    if getattr(args, 'night_gate', None) is not None:
        overrides['night_gate'] = args.night_gate
    if getattr(args, 'filter_config', None):
        overrides['filter_config'] = args.filter_config
    if getattr(args, 'fps', None) is not None:
        overrides['fps'] = args.fps
    if getattr(args, 'conf', None) is not None:
        overrides['conf_thresh'] = args.conf
    if getattr(args, 'iou', None) is not None:
        overrides['match_iou'] = args.iou
    if getattr(args, 'ablation', None):
        overrides['ablations'] = [a for a in args.ablation.split(',') if a.strip()]
    if not overrides:
        return run_cfg
    values = {k: getattr(run_cfg, k) for k in DEFAULT_RUN_CONFIG}
    values.update(overrides)
    return RunConfig(source=run_cfg.source, **values)


def cmd_enhance(args, run_cfg: RunConfig) -> int:
    cfg = load_filter_config(run_cfg.filter_config)
    frame = read_raster(args.input)
    if args.severity is not None and not 0.0 <= args.severity <= 1.0:
        raise ValueError(f"severity must be in [0, 1], got {args.severity}")
    if args.condition is None:
        est = estimate(frame)
        if args.severity is not None:
            est = WeatherEstimate(est.condition, args.severity, est.spread, est.source, est.scores)
    else:
        severity = args.severity
        if severity is None:
            severity = severity_for(args.condition, lab_stats(frame)) if frame.ndim == 3 else 0.0
        est = WeatherEstimate(args.condition, severity, source='label')
    out, report = enhance(frame, est, cfg, run_cfg.night_gate)
    write_raster(args.output, out)
    print(f"condition={est.condition} severity={est.severity:.3f}")
    if report.alpha is not None:
        print(f"alpha={report.alpha:.3f}")
    print(report.summary())
    print(f"Wrote {args.output}")
    return 0


def cmd_wem(args, run_cfg: RunConfig) -> int:
    frame = read_raster(args.image)
    stats = lab_stats(frame)
    est = estimate(frame)
    print(f"condition={est.condition} severity={est.severity:.3f} spread={est.spread:.3f}")
    print(f"mu_L={stats.mu_L:.2f} sigma_L={stats.sigma_L:.2f} mu_S={stats.mu_S:.2f} "
          f"rho_e={stats.rho_e:.4f} r_v={stats.r_v:.3f}")
    print(' '.join(f"{k}={v:.3f}" for k, v in est.scores.items()))
    return 0


def cmd_pee(args, run_cfg: RunConfig) -> int:
    frame = read_raster(args.image)
    rmap = entropy_map(luma(frame))
    out = args.out or os.path.splitext(args.image)[0] + '_reliability.png'
    write_raster(out, render_heatmap(rmap))
    grid = format_grid(rmap)
    if args.grid:
        with open(args.grid, 'w') as f:
            f.write(grid)
    else:
        print(grid, end='')
    print(f"Wrote {out}")
    return 0


def cmd_sed(args, run_cfg: RunConfig) -> int:
    if not os.path.exists(args.path):
        raise FileNotFoundError(f"scene database {args.path} not found")
    for line in SceneDatabase.load(args.path).dump():
        print(line)
    return 0


def cmd_pipeline(args, run_cfg: RunConfig) -> int:
    cfg = load_filter_config(run_cfg.filter_config)
    if args.source == 'synthetic':
        frames = synthetic_sequence(args.frames, args.condition, args.severity, seed=run_cfg.seed, fps=run_cfg.fps)
    else:
        frames = load_frames(args.source, run_cfg.fps, run_cfg.classes, run_cfg.aliases)
    sed = _open_sed(args.sed or run_cfg.sed_path)
    make = _pipeline_factory(run_cfg, cfg, args.s_detector, args.q_detector, sed)
    pipe = make(run_cfg.flags())

    if args.mode == 'threaded':
        result = ThreadedRunner(pipe, run_cfg.fps).run(frames)
    else:
        costs = StageCosts(q_override=args.q_cost) if args.q_cost is not None else StageCosts()
        result = SimulatedRunner(pipe, costs, run_cfg.fps).run(frames)

    _write_lines(args.out, result.track_log)
    periods = result.period_stats()
    print(f"Frames in: {result.frames_in}  dropped: {result.frames_dropped}  "
          f"quality cycles: {len(result.q_latencies)}  analytics cycles: {len(result.slot_versions)}")
    print(f"Thread S period: mean {periods['mean']:.2f} ms  p99 {periods['p99']:.2f} ms  max {periods['max']:.2f} ms")
    if result.k_values:
        print(f"Injection lag k: mean {np.mean(result.k_values):.2f}  max {max(result.k_values)}")
    print(f"Quality refinements dropped: {result.conflicts}")
    print(result.latency.format())
    if args.out:
        print(f"Wrote track log to {args.out}")
    return 0


def cmd_benchmark(args, run_cfg: RunConfig) -> int:
    cfg = load_filter_config(run_cfg.filter_config)
    corpus = load_corpus(args.corpus, run_cfg.classes, run_cfg.aliases)
    if not corpus:
        raise BenchmarkError(f"no annotated images in {args.corpus}")
    sed = _open_sed(args.sed or run_cfg.sed_path)
    embedder = None
    if sed is not None:
        embedder = (RemoteInferenceClient(run_cfg.inference_url, run_cfg.inference_token_file)
                    if run_cfg.inference_url else PseudoEmbedder(dim=sed.dim, seed=run_cfg.seed))
    report = run_benchmark(
        corpus, synthetic_detector(args.detector), routing=args.routing, cfg=cfg,
        flags=run_cfg.flags(), conf_thresh=run_cfg.conf_thresh, iou_thresh=run_cfg.match_iou,
        night_gate=run_cfg.night_gate, sed=sed, embedder=embedder,
    )
    summary = format_summary_table(report.summary)
    print(summary)
    if report.wem_rows:
        print()
        print(format_wem_table(report.wem_rows))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_jsonl(report.results, os.path.join(args.out, 'results.jsonl'))
        with open(os.path.join(args.out, 'summary.txt'), 'w') as f:
            f.write(summary + '\n')
            if report.wem_rows:
                f.write('\n' + format_wem_table(report.wem_rows) + '\n')
        print(f"Wrote results to {args.out}")
    return 0


def cmd_ablate(args, run_cfg: RunConfig) -> int:
    cfg = load_filter_config(run_cfg.filter_config)
    ids = [a.strip().upper() for a in args.ids.split(',') if a.strip()]
    AblationFlags.from_ids(ids)
    corpus = load_corpus(args.corpus, run_cfg.classes, run_cfg.aliases)
    frames = synthetic_sequence(args.frames, 'fog', 0.8, seed=run_cfg.seed, fps=run_cfg.fps)
    make = _pipeline_factory(run_cfg, cfg, 'oracle', 'oracle')
    rows = ablate(ids, corpus, synthetic_detector(args.detector), frames, make,
                  cfg=cfg, fps=run_cfg.fps)
    print(format_ablation_table(rows))
    return 0


def cmd_latency(args, run_cfg: RunConfig) -> int:
    cfg = load_filter_config(run_cfg.filter_config)
    if args.image:
        frame = read_raster(args.image)
    else:
        scene, _ = render_scene(np.random.default_rng(run_cfg.seed))
        frame = degrade(scene, 'fog', 0.8)
    sed = _open_sed(args.sed or run_cfg.sed_path)
    ops = stage_operations(frame, cfg, run_cfg.seed, sed=sed)
    if args.op != 'all' and args.op not in ops:
        close = difflib.get_close_matches(args.op, list(ops), n=1)
        hint = f" (did you mean {close[0]}?)" if close else ''
        raise ValueError(f"unknown stage {args.op!r}{hint}; available: {', '.join(ops)}")
    warmup, timed = timing_discipline(args.mode)
    names = list(ops) if args.op == 'all' else [args.op]
    stages = {}
    for name in names:
        stages[name] = measure_latency(ops[name], warmup, timed)
        logger.debug(f"{name}: {stages[name]}")
    if len(names) == 1:
        print(f"{names[0]}: {stages[names[0]]} ({warmup} warmup + {timed} timed, {args.mode})")
    else:
        print(format_latency_table(stages))
    return 0


def cmd_synth(args, run_cfg: RunConfig) -> int:
    conditions = [c.strip() for c in args.conditions.split(',') if c.strip()]
    names = generate_corpus(args.out, args.n, conditions, seed=run_cfg.seed,
                            severity_range=(args.severity_min, args.severity_max))
    print(f"Wrote {len(names)} images to {args.out}")
    return 0


COMMANDS = {
    'enhance': cmd_enhance,
    'wem': cmd_wem,
    'pee': cmd_pee,
    'sed': cmd_sed,
    'pipeline': cmd_pipeline,
    'benchmark': cmd_benchmark,
    'ablate': cmd_ablate,
    'latency': cmd_latency,
    'synth': cmd_synth,
}

# Failures in the input data rather than in the command line; every
# domain error of the package is a ValueError
DATA_ERRORS = (OSError, ValueError, InferenceError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main execution flow: parse, configure, dispatch"""
    try:
        args = parse_arguments(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1

    configure_logging(args.debug)

    try:
        run_cfg = _effective(args, load_run_config(args.config))
        return COMMANDS[args.command](args, run_cfg)
    except DATA_ERRORS as e:
        logger.error(f"{args.command}: {str(e)}")
        return 2


if __name__ == '__main__':
    sys.exit(main())
