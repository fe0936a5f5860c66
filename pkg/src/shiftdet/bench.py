"""Inference throughput measurement.

Clips are synthesized up front so the timed region contains nothing but
model inference; warmup iterations run first and are excluded. FPS is
frames over wall time: num_frames · clips / elapsed.
"""

from __future__ import annotations

import resource
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import ConfigError

STAGES = ("backbone", "rpn", "roi_head", "postprocess")


@dataclass(frozen=True)
class BenchReport:
    clips: int
    warmup: int
    num_frames: int
    elapsed_seconds: float
    fps: float
    params: int  # live parameter elements
    params_config: int  # closed-form count from the model config
    stage_seconds: dict  # per-stage totals over the timed clips
    peak_rss_bytes: int


def _peak_rss_bytes() -> int:
    unit = 1 if sys.platform == "darwin" else 1024  # ru_maxrss is KiB on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * unit


def run_bench(detector: model.Detector, clips: int = 20, warmup: int = 3,
              seed: int = 0) -> BenchReport:
    if clips < 1 or warmup < 0:
        raise ConfigError("bench needs clips >= 1 and warmup >= 0")
    cfg = detector.cfg
    rng = np.random.default_rng([seed, 0xBE7C])
    shape = (cfg.num_frames, 3, cfg.image_height, cfg.image_width)
    batch = [rng.random(shape, dtype=np.float32) for _ in range(warmup + clips)]

    for clip in batch[:warmup]:
        detector.detect(clip)

    stage_seconds = {}
    start = time.perf_counter()
    for clip in batch[warmup:]:
        detector.detect(clip, timings=stage_seconds)
    elapsed = time.perf_counter() - start

    return BenchReport(
        clips=clips,
        warmup=warmup,
        num_frames=cfg.num_frames,
        elapsed_seconds=elapsed,
        fps=cfg.num_frames * clips / elapsed,
        params=detector.store.num_elements(),
        params_config=model.count_params(cfg),
        stage_seconds={name: stage_seconds.get(name, 0.0) for name in STAGES},
        peak_rss_bytes=_peak_rss_bytes(),
    )


def report_rows(report: BenchReport) -> list:
    """Flatten to (key, value) rows for the machine-readable report."""
    rows = [
        ("clips", report.clips),
        ("warmup", report.warmup),
        ("num_frames", report.num_frames),
        ("elapsed_seconds", report.elapsed_seconds),
        ("fps", report.fps),
        ("params", report.params),
        ("params_config", report.params_config),
        ("peak_rss_bytes", report.peak_rss_bytes),
    ]
    rows.extend((f"stage.{name}", report.stage_seconds[name])
                for name in STAGES)
    return rows
