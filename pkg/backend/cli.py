#!/usr/bin/env python3
"""
SceneForge command line.

Each subcommand runs one library operation over files; `synth` runs the
whole batch. Exit codes: 0 success, 1 validation or processing failure,
2 usage or configuration error.
"""

import argparse
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from blending import BlendRegion, GuidanceMode, poisson_blend
from coco import ANNOTATIONS_NAME, build_dataset, validate_output, write_dataset
from config import Config, load_config
from errors import ConfigError, JobFailed, SceneForgeError
from fileio import dump_canonical, read_mask, read_rgb, read_trimap, write_alpha, write_atomic, \
    write_rgb, write_trimap
from logging_setup import configure_logging
from matting import solve_alpha
from outline import (Point, default_jitter_radius, jittered_samples, mass_center, outline_to_polygon,
                     polygon_metrics, ray_distances)
from pool import Pool, matting_params, prepare_object
from raster import StructuringElement, make_trimap
from synth import run_batch, sample_jobs, write_timings

logger = logging.getLogger(__name__)

TIMINGS_NAME = 'timings.csv'


def _existing_file(path: str) -> str:
    if not os.path.isfile(path):
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return path


def _existing_dir(path: str) -> str:
    if not os.path.isdir(path):
        raise argparse.ArgumentTypeError(f"no such directory: {path}")
    return path


def _config_flag(parser: argparse.ArgumentParser, name: str, **kwargs) -> None:
    """Flag overriding Config.<name>; None means 'not given' so file and env values survive"""
    info = Config.model_fields[name]
    kwargs.setdefault('type', type(info.default) if info.default is not None else int)
    parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None,
                        help=f"{info.description} (default: {info.default})", **kwargs)


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    _config_flag(parser, 'solver_tol', type=float)
    _config_flag(parser, 'solver_max_iter', type=int)


def _add_trimap_flags(parser: argparse.ArgumentParser) -> None:
    _config_flag(parser, 'trimap_shape', type=str, choices=['square', 'disc'])
    _config_flag(parser, 'erode_radius', type=int)
    _config_flag(parser, 'dilate_radius', type=int)


def _add_matting_flags(parser: argparse.ArgumentParser) -> None:
    _config_flag(parser, 'window_radius', type=int)
    _config_flag(parser, 'epsilon', type=float)


def _blend_mode_flag(parser: argparse.ArgumentParser) -> None:
    _config_flag(parser, 'blend_mode', type=str, choices=[m.value for m in GuidanceMode])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='sceneforge', description='Synthesize labeled object-in-scene images')
    parser.add_argument('--config', type=_existing_file, default=None, help='JSON config file')
    parser.add_argument('--log-json', action='store_true', help='log one JSON object per line')
    parser.add_argument('--verbose', '-v', action='store_true', help='debug logging')
    commands = parser.add_subparsers(dest='command', required=True, metavar='command')

    p = commands.add_parser('ingest-objects', help='add object images with rough masks to the pool')
    p.add_argument('--pool', required=True, help='pool directory (created if missing)')
    p.add_argument('--object', nargs=3, action='append', default=[], metavar=('IMAGE', 'MASK', 'CATEGORY'),
                   help='one object; repeatable')
    p.add_argument('--list', type=_existing_file, default=None,
                   help='CSV with image,mask,category columns; paths relative to the CSV')
    _config_flag(p, 'k', type=int)
    _config_flag(p, 'incomplete_iou', type=float)
    _add_trimap_flags(p)
    _add_matting_flags(p)
    _add_solver_flags(p)
    _config_flag(p, 'workers', type=int)
    p.set_defaults(handler=cmd_ingest_objects)

    p = commands.add_parser('ingest-scenes', help='add scene images to the pool')
    p.add_argument('--pool', required=True, help='pool directory (created if missing)')
    p.add_argument('--label', default='scene', help='scene label for positional images (default: scene)')
    p.add_argument('--list', type=_existing_file, default=None,
                   help='CSV with image,label columns; paths relative to the CSV')
    p.add_argument('images', nargs='*', type=_existing_file, help='scene image files')
    p.set_defaults(handler=cmd_ingest_scenes)

    p = commands.add_parser('outline', help='polar outline of a mask')
    p.add_argument('--mask', required=True, type=_existing_file)
    p.add_argument('--anchor', nargs=2, type=float, default=None, metavar=('X', 'Y'),
                   help='anchor point (default: mask mass center)')
    p.add_argument('--jitter', type=int, default=0, help='also emit this many jittered-anchor outlines (default: 0)')
    p.add_argument('--out', required=True, help='output JSON')
    _config_flag(p, 'k', type=int)
    _config_flag(p, 'jitter_fraction', type=float)
    _config_flag(p, 'seed', type=int)
    p.set_defaults(handler=cmd_outline)

    p = commands.add_parser('trimap', help='trimap from a binary mask by erosion and dilation')
    p.add_argument('--mask', required=True, type=_existing_file)
    p.add_argument('--out', required=True, help='output trimap PNG')
    _add_trimap_flags(p)
    p.set_defaults(handler=cmd_trimap)

    p = commands.add_parser('matte', help='closed-form alpha matte from an image and a trimap')
    p.add_argument('--image', required=True, type=_existing_file)
    p.add_argument('--trimap', required=True, type=_existing_file)
    p.add_argument('--out', required=True, help='output 16-bit alpha PNG')
    _add_matting_flags(p)
    _add_solver_flags(p)
    p.set_defaults(handler=cmd_matte)

    p = commands.add_parser('blend', help='Poisson-blend a source into a target over a region')
    p.add_argument('--target', required=True, type=_existing_file)
    p.add_argument('--source', required=True, type=_existing_file)
    p.add_argument('--region', required=True, type=_existing_file, help='target-sized region mask PNG')
    p.add_argument('--offset', nargs=2, type=int, default=[0, 0], metavar=('DX', 'DY'),
                   help='source-to-target translation (default: 0 0)')
    p.add_argument('--out', required=True, help='output PNG')
    _blend_mode_flag(p)
    _add_solver_flags(p)
    p.set_defaults(handler=cmd_blend)

    p = commands.add_parser('synth', help='synthesize images and COCO annotations from a pool')
    p.add_argument('--pool', required=True, type=_existing_dir)
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--n', type=int, required=True, help='number of images')
    _config_flag(p, 'seed', type=int)
    _config_flag(p, 'objects_min', type=int)
    _config_flag(p, 'objects_max', type=int)
    _config_flag(p, 'scale_min', type=float)
    _config_flag(p, 'scale_max', type=float)
    _config_flag(p, 'margin', type=int)
    _config_flag(p, 'placement_retries', type=int)
    _blend_mode_flag(p)
    _config_flag(p, 'blend_alpha_threshold', type=float)
    _add_solver_flags(p)
    _config_flag(p, 'workers', type=int)
    p.set_defaults(handler=cmd_synth)

    p = commands.add_parser('validate', help="re-check an output directory's annotations against its images")
    p.add_argument('--out', required=True, type=_existing_dir, help='output directory of a synth run')
    p.set_defaults(handler=cmd_validate)

    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {name: getattr(args, name) for name in Config.model_fields if getattr(args, name, None) is not None}


def _read_list(path: str, columns: Sequence[str]) -> List[Tuple[str, ...]]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ConfigError(f"{path} lacks columns {missing}")
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    for record in frame[list(columns)].itertuples(index=False):
        values = list(record)
        for i, column in enumerate(columns):
            if column in ('image', 'mask'):
                values[i] = os.path.join(base, values[i])
        rows.append(tuple(values))
    logger.info(f"Read {len(rows)} entries from {path}")
    return rows


# Subcommands

def cmd_ingest_objects(args: argparse.Namespace, config: Config) -> int:
    entries = [tuple(o) for o in args.object]
    if args.list:
        entries += _read_list(args.list, ['image', 'mask', 'category'])
    if not entries:
        raise ConfigError('ingest-objects needs --object or --list')

    pool = Pool(args.pool)
    workers = min(config.worker_count(), len(entries))
    if workers <= 1:
        records = [prepare_object(pool.root, image, mask, category, config) for image, mask, category in entries]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(prepare_object, pool.root, image, mask, category, config)
                       for image, mask, category in entries]
            records = [f.result() for f in futures]

    # single writer: records join the manifest in input order
    for record in records:
        pool.add_object(record)
    pool.save()
    incomplete = sum(1 for r in records if r.mask_incomplete)
    logger.info(f"Ingested {len(records)} objects ({incomplete} with incomplete masks) into {args.pool}")
    return 0


def cmd_ingest_scenes(args: argparse.Namespace, config: Config) -> int:
    entries = [(image, args.label) for image in args.images]
    if args.list:
        entries += _read_list(args.list, ['image', 'label'])
    if not entries:
        raise ConfigError('ingest-scenes needs scene images or --list')

    pool = Pool(args.pool)
    for image, label in entries:
        pool.ingest_scene(image, label)
    pool.save()
    logger.info(f"Ingested {len(entries)} scenes into {args.pool}")
    return 0


def cmd_outline(args: argparse.Namespace, config: Config) -> int:
    mask = read_mask(args.mask)
    center = mass_center(mask)
    anchor = Point(*args.anchor) if args.anchor else center
    outline = ray_distances(mask, anchor, config.k)
    polygon = outline_to_polygon(outline)
    bbox, area = polygon_metrics(polygon)
    document = {
        'center': center.to_list(),
        'outline': outline.to_dict(),
        'polygon': polygon.flatten(),
        'bbox': bbox,
        'area': area,
    }
    if args.jitter > 0:
        rng = np.random.default_rng(config.seed)
        radius = default_jitter_radius(mask, config.jitter_fraction)
        samples = jittered_samples(mask, center, radius, args.jitter, rng, config.k)
        document['jittered'] = [s.to_dict() for s in samples]
    write_atomic(args.out, dump_canonical(document))
    logger.info(f"Wrote outline of {args.mask} (K={config.k}, area {area:.1f}) to {args.out}")
    return 0


def cmd_trimap(args: argparse.Namespace, config: Config) -> int:
    mask = read_mask(args.mask)
    trimap = make_trimap(mask,
                         StructuringElement(config.trimap_shape, config.erode_radius),
                         StructuringElement(config.trimap_shape, config.dilate_radius))
    write_trimap(trimap, args.out)
    logger.info(f"Wrote trimap to {args.out}: {int(trimap.fg.sum())} FG, {int(trimap.unknown.sum())} unknown")
    return 0


def cmd_matte(args: argparse.Namespace, config: Config) -> int:
    alpha = solve_alpha(read_rgb(args.image), read_trimap(args.trimap), matting_params(config))
    write_alpha(alpha, args.out)
    logger.info(f"Wrote alpha to {args.out}")
    return 0


def cmd_blend(args: argparse.Namespace, config: Config) -> int:
    region = BlendRegion(read_mask(args.region), tuple(args.offset))
    out = poisson_blend(read_rgb(args.target), read_rgb(args.source), region, GuidanceMode(config.blend_mode),
                        tol=config.solver_tol, max_iter=config.solver_max_iter)
    write_rgb(out, args.out)
    logger.info(f"Wrote blend to {args.out}")
    return 0


def cmd_synth(args: argparse.Namespace, config: Config) -> int:
    if args.n < 0:
        raise ConfigError(f"--n must be >= 0, got {args.n}")
    pool = Pool(args.pool)
    jobs = sample_jobs(pool.manifest, args.n, (config.objects_min, config.objects_max), config.seed, config)
    os.makedirs(os.path.join(args.out, 'images'), exist_ok=True)

    workers = config.worker_count()
    started = time.perf_counter()
    results = run_batch(jobs, pool.root, args.out, workers)
    elapsed = time.perf_counter() - started

    dataset = build_dataset(results, pool.manifest.categories())
    write_dataset(dataset, os.path.join(args.out, ANNOTATIONS_NAME))
    write_timings(results, os.path.join(args.out, TIMINGS_NAME))
    rate = len(results) / elapsed if elapsed > 0 else float('inf')
    logger.info(f"Synthesized {len(results)} images with {len(dataset.annotations)} instances "
                f"in {elapsed:.2f}s on {workers} workers ({rate:.2f} images/s)")
    return 0


def cmd_validate(args: argparse.Namespace, config: Config) -> int:
    problems = validate_output(args.out)
    for problem in problems:
        logger.error(problem)
    if problems:
        return 1
    logger.info(f"{args.out} is valid")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    configure_logging(verbose=args.verbose, json_lines=args.log_json)
    try:
        config = load_config(args.config, _overrides(args))
    except ConfigError as e:
        logger.error(str(e))
        return 2

    try:
        return args.handler(args, config)
    except ConfigError as e:
        logger.error(str(e))
        return 2
    except JobFailed as e:
        logger.error(f"Job {e.job_index} (scene {e.scene_id}) failed at stage '{e.stage}': {e.cause}")
        return 1
    except SceneForgeError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        return 1
    except OSError as e:
        logger.error(f"I/O error: {str(e)}")
        return 1


if __name__ == '__main__':
    raise SystemExit(main())
