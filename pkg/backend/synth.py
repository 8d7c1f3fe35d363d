"""
Synthesis orchestration: seeded scene/object pairing, placement sampling,
composition and per-instance annotation records.

All randomness is drawn up front in sample_jobs, one generator per job seeded
from (run seed, job index), so scheduling never changes the outputs.
"""

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from PIL import Image

from blending import GuidanceMode, blend_region_from_alpha, composite_over, poisson_blend
from config import Config
from errors import EmptyPool, JobFailed, PlacementInfeasible, SceneForgeError
from fileio import encode_png, write_atomic
from outline import Point, Polygon, clip_polygon, polygon_metrics, transform_polygon
from pool import Manifest, ObjectRecord, Pool, SceneRecord
from raster import AlphaMap, RgbImage

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
PROGRESS_EVERY = 100


def mix64(z: int) -> int:
    """splitmix64 finalizer"""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def job_seed(seed: int, index: int) -> int:
    """Sub-seed of job `index`: the index-th output of a splitmix64 stream started at `seed`"""
    return mix64((seed + (index + 1) * GOLDEN_GAMMA) & MASK64)


@dataclass(frozen=True)
class Placement:
    object_id: str
    scale: float
    position: Point  # top-left of the scaled object, integral

    def to_dict(self) -> Dict[str, Any]:
        return {'object_id': self.object_id, 'scale': self.scale, 'position': self.position.to_list()}


@dataclass(frozen=True)
class SynthParams:
    blend_mode: str = GuidanceMode.MIXED_GRADIENTS.value
    blend_alpha_threshold: float = 0.05
    solver_tol: float = 1e-6
    solver_max_iter: Optional[int] = None
    margin: int = 2

    @classmethod
    def from_config(cls, config: Config) -> 'SynthParams':
        return cls(blend_mode=config.blend_mode, blend_alpha_threshold=config.blend_alpha_threshold,
                   solver_tol=config.solver_tol, solver_max_iter=config.solver_max_iter, margin=config.margin)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'blend_mode': self.blend_mode,
            'blend_alpha_threshold': self.blend_alpha_threshold,
            'solver_tol': self.solver_tol,
            'solver_max_iter': self.solver_max_iter,
            'margin': self.margin,
        }


@dataclass(frozen=True)
class SynthJob:
    index: int
    scene_id: str
    placements: Tuple[Placement, ...]
    seed: int
    params: SynthParams = SynthParams()

    @property
    def file_name(self) -> str:
        return f"{self.seed}_{self.scene_id}.png"

    def to_dict(self) -> Dict[str, Any]:
        return {
            'index': self.index,
            'scene_id': self.scene_id,
            'placements': [p.to_dict() for p in self.placements],
            'seed': self.seed,
            'params': self.params.to_dict(),
        }


@dataclass
class InstanceAnnotation:
    object_id: str
    category: str
    polygon: Polygon
    bbox: List[float]
    area: float


@dataclass
class SynthResult:
    job_index: int
    image_path: str  # relative to the output directory
    width: int
    height: int
    annotations: List[InstanceAnnotation]
    timings: Dict[str, float] = field(default_factory=dict)


def scaled_size(width: int, height: int, scale: float) -> Tuple[int, int]:
    return max(1, int(math.floor(width * scale + 0.5))), max(1, int(math.floor(height * scale + 0.5)))


def _draw_placement(rng: np.random.Generator, scene: SceneRecord, obj: ObjectRecord,
                    taken: List[Tuple[int, int]], config: Config) -> Placement:
    ow, oh = obj.crop_size
    base = min(scene.width, scene.height) / max(ow, oh)
    for attempt in range(config.placement_retries + 1):
        scale = float(rng.uniform(config.scale_min, config.scale_max)) * base
        w, h = scaled_size(ow, oh, scale)
        free_x = scene.width - 2 * config.margin - w
        free_y = scene.height - 2 * config.margin - h
        if free_x < 0 or free_y < 0:
            continue
        x = config.margin + int(rng.integers(free_x + 1))
        y = config.margin + int(rng.integers(free_y + 1))
        if (x, y) in taken:
            continue
        taken.append((x, y))
        return Placement(obj.id, scale, Point(float(x), float(y)))
    raise PlacementInfeasible(f"Could not place object {obj.id} ({ow}x{oh}) in scene {scene.id} "
                              f"({scene.width}x{scene.height}) after {config.placement_retries + 1} attempts")


def sample_jobs(manifest: Manifest, n_images: int, objects_per_image: Tuple[int, int] = (1, 3), seed: int = 0,
                config: Optional[Config] = None) -> List[SynthJob]:
    """Draw scenes and objects uniformly with replacement, one seeded generator per job"""
    config = config or Config()
    if not manifest.scenes or not manifest.objects:
        raise EmptyPool(f"Need at least one scene and one object, pool has {len(manifest.scenes)} scenes "
                        f"and {len(manifest.objects)} objects")
    lo, hi = objects_per_image
    if lo < 1 or hi < lo:
        raise ValueError(f"objects_per_image must satisfy 1 <= min <= max, got {objects_per_image}")

    params = SynthParams.from_config(config)
    jobs = []
    for index in range(n_images):
        sub_seed = job_seed(seed, index)
        rng = np.random.default_rng(sub_seed)
        scene = manifest.scenes[int(rng.integers(len(manifest.scenes)))]
        count = int(rng.integers(lo, hi + 1))
        taken: List[Tuple[int, int]] = []
        placements = []
        for _ in range(count):
            obj = manifest.objects[int(rng.integers(len(manifest.objects)))]
            placements.append(_draw_placement(rng, scene, obj, taken, config))
        jobs.append(SynthJob(index, scene.id, tuple(placements), sub_seed, params))
    logger.info(f"Sampled {len(jobs)} jobs from {len(manifest.scenes)} scenes and "
                f"{len(manifest.objects)} objects (seed {seed})")
    return jobs


def _resize_object(image: RgbImage, alpha: AlphaMap, scale: float,
                   size: Tuple[int, int]) -> Tuple[RgbImage, AlphaMap]:
    """Bilinear resample that sends source pixel center u to u * scale, the map the outline polygon follows.

    The source box is padded by edge replication so it may start left of pixel 0 and end past the last one.
    """
    if size == (image.width, image.height) and scale == 1.0:
        return image, alpha
    pad = int(math.ceil(0.5 / scale)) + 1
    origin = pad + 0.5 - 0.5 / scale
    box = (origin, origin, origin + size[0] / scale, origin + size[1] / scale)
    rgb = Image.fromarray(np.pad(image.data, ((pad, pad), (pad, pad), (0, 0)), mode='edge'))
    a = Image.fromarray(np.pad(alpha.data, pad, mode='edge').astype(np.float32))
    rgb = rgb.resize(size, Image.BILINEAR, box=box)
    a = a.resize(size, Image.BILINEAR, box=box)
    return RgbImage(np.asarray(rgb)), AlphaMap(np.clip(np.asarray(a, dtype=np.float64), 0.0, 1.0))


class _Stages:
    """Tracks the current stage name and its wall-clock cost"""

    def __init__(self):
        self.current = 'load'
        self.timings: Dict[str, float] = {}
        self._started = time.perf_counter()

    def enter(self, name: str) -> None:
        now = time.perf_counter()
        self.timings[self.current] = self.timings.get(self.current, 0.0) + now - self._started
        self.current = name
        self._started = now

    def close(self) -> Dict[str, float]:
        self.enter('done')
        self.timings.pop('done', None)
        return self.timings


def run_job(job: SynthJob, pool: Pool, out_dir: str) -> SynthResult:
    stages = _Stages()
    try:
        canvas = pool.load_scene(job.scene_id)
        annotations = []
        mode = GuidanceMode(job.params.blend_mode)
        margin = job.params.margin

        for placement in job.placements:
            stages.enter('load')
            record = pool.manifest.object(placement.object_id)
            image, alpha, polygon = pool.load_object(placement.object_id)

            stages.enter('scale')
            size = scaled_size(image.width, image.height, placement.scale)
            x, y = int(placement.position.x), int(placement.position.y)
            if (x < margin or y < margin or x + size[0] > canvas.width - margin
                    or y + size[1] > canvas.height - margin):
                raise PlacementInfeasible(f"Object {record.id} scaled to {size[0]}x{size[1]} at ({x}, {y}) "
                                          f"breaks the {margin}-px margin of a {canvas.width}x{canvas.height} scene")
            scaled_image, scaled_alpha = _resize_object(image, alpha, placement.scale, size)

            stages.enter('composite')
            composite = composite_over(canvas, scaled_image, scaled_alpha, (x, y))

            stages.enter('blend')
            if (scaled_alpha.data > job.params.blend_alpha_threshold).any():
                region = blend_region_from_alpha(scaled_alpha, (x, y), canvas.height, canvas.width,
                                                 job.params.blend_alpha_threshold)
                canvas = poisson_blend(canvas, composite, region, mode,
                                       tol=job.params.solver_tol, max_iter=job.params.solver_max_iter)
            else:
                canvas = composite

            stages.enter('annotate')
            placed = transform_polygon(polygon, placement.scale, (0.0, 0.0), (x, y))
            placed = clip_polygon(placed, canvas.width, canvas.height)
            bbox, area = polygon_metrics(placed)
            annotations.append(InstanceAnnotation(record.id, record.category, placed, bbox, area))

        stages.enter('write')
        rel_path = f"images/{job.file_name}"
        write_atomic(os.path.join(out_dir, rel_path), encode_png(np.ascontiguousarray(canvas.data)))
    except SceneForgeError as e:
        raise JobFailed(job.index, job.scene_id, stages.current, e) from e
    except (OSError, KeyError, ValueError) as e:
        raise JobFailed(job.index, job.scene_id, stages.current, e) from e

    return SynthResult(job.index, rel_path, canvas.width, canvas.height, annotations, stages.close())


_worker_pool: Optional[Pool] = None


def _init_worker(pool_root: str) -> None:
    global _worker_pool
    _worker_pool = Pool(pool_root)


def _run_in_worker(args: Tuple[SynthJob, str]) -> SynthResult:
    job, out_dir = args
    return run_job(job, _worker_pool, out_dir)


def run_batch(jobs: Sequence[SynthJob], pool_root: str, out_dir: str, workers: int = 1) -> List[SynthResult]:
    """Run jobs on `workers` processes; results come back in job order"""
    results: List[SynthResult] = []

    def collect(stream: Iterator[SynthResult]) -> None:
        for result in stream:
            results.append(result)
            if len(results) % PROGRESS_EVERY == 0:
                logger.info(f"Finished {len(results)}/{len(jobs)} jobs")

    if workers <= 1 or len(jobs) <= 1:
        pool = Pool(pool_root)
        collect(run_job(job, pool, out_dir) for job in jobs)
    else:
        chunk = max(1, len(jobs) // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(pool_root,)) as executor:
            collect(executor.map(_run_in_worker, [(job, out_dir) for job in jobs], chunksize=chunk))
    return results


def timing_table(results: Sequence[SynthResult]) -> pd.DataFrame:
    rows = []
    for result in results:
        row = {'job': result.job_index, 'image': result.image_path, 'instances': len(result.annotations)}
        row.update(result.timings)
        rows.append(row)
    frame = pd.DataFrame(rows)
    stage_cols = [c for c in frame.columns if c not in ('job', 'image', 'instances')]
    if stage_cols:
        frame['total'] = frame[stage_cols].sum(axis=1)
    return frame


def write_timings(results: Sequence[SynthResult], path: str) -> pd.DataFrame:
    frame = timing_table(results)
    frame.to_csv(path, index=False)
    if not frame.empty:
        logger.info(f"Mean seconds per stage: {frame.drop(columns=['job', 'image']).mean().round(4).to_dict()}")
    return frame
