"""Synthetic sample generators: grid composition with optional blended
scene pairs, plus the copy-paste / mixup / mosaic baselines and the
probabilistic augmentation pipeline.

Every generator's randomness derives from (seed, sample_index, stream),
so outputs replay byte-identically and are independent of worker count.
Stream tags keep the draws of nested generators from colliding.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    Box2D,
    ImageBuffer,
    Instance,
    SampleAnnotation,
    affine_remap_box,
    clip_box,
)
from .errors import DimensionMismatchError
from .imageops import average_blend, flip_horizontal, paste, resize_bilinear
from .pool import ObjectPatch, ObjectPool, draw_patches
from .seeding import rng_for

_STREAM_GRID = 0
_STREAM_CSS = 1
_STREAM_PARTNER = 2
_STREAM_COPYPASTE = 3
_STREAM_MOSAIC = 4
_STREAM_PIPELINE = 5

DEFAULT_RESOLUTIONS = ((4, 4), (4, 8), (8, 4), (8, 8))


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry and blending policy for the synthesizer.

    resolutions are (rows, cols) pairs; the canvas must divide evenly into
    every listed grid. fill_value is the gray level of the blank canvas.
    """

    resolutions: Tuple[Tuple[int, int], ...] = DEFAULT_RESOLUTIONS
    canvas_w: int = 640
    canvas_h: int = 640
    css_probability: float = 0.5
    fill_value: int = 114

    def __post_init__(self):
        res = tuple(sorted((int(m), int(n)) for m, n in self.resolutions))
        if not res:
            raise ValueError("resolutions must be non-empty")
        object.__setattr__(self, "resolutions", res)
        if self.canvas_w < 1 or self.canvas_h < 1:
            raise ValueError(f"canvas must be positive, got {self.canvas_w}x{self.canvas_h}")
        for m, n in res:
            if m < 1 or n < 1:
                raise ValueError(f"grid resolution must be >= 1x1, got ({m}, {n})")
            if self.canvas_h % m or self.canvas_w % n:
                raise ValueError(
                    f"canvas {self.canvas_w}x{self.canvas_h} does not divide into a {m}x{n} grid"
                )
        if not 0.0 <= self.css_probability <= 1.0:
            raise ValueError(f"css_probability must be in [0, 1], got {self.css_probability}")
        if not 0 <= self.fill_value <= 255:
            raise ValueError(f"fill_value must be an 8-bit value, got {self.fill_value}")


@dataclass(frozen=True)
class SynthConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    flip_probability: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(f"flip_probability must be in [0, 1], got {self.flip_probability}")


def preprocess_patch(
    patch: ObjectPatch, cell_w: int, cell_h: int, flip: bool
) -> Tuple[ImageBuffer, Box2D]:
    """Optionally mirror a patch, then resize it to exactly cell_w x cell_h.

    The returned box is the tight box mapped through the same flip + scale
    transform.
    """
    pixels = patch.pixels.pixels
    box = patch.tight_box
    pw, ph = patch.pixels.width, patch.pixels.height
    if flip:
        pixels = flip_horizontal(pixels)
        box = Box2D(pw - box.x2, box.y1, pw - box.x1, box.y2)
    resized = resize_bilinear(pixels, cell_w, cell_h)
    box = affine_remap_box(box, cell_w / pw, cell_h / ph, 0.0, 0.0)
    return ImageBuffer(resized, _copy=False), box


def _synthesize_grid(pool: ObjectPool, cfg: SynthConfig, rng, image_id: int) -> SampleAnnotation:
    """One grid composite driven by an already-seeded generator.

    Draw order is fixed: grid resolution, then patch indices, then flips.
    """
    spec = cfg.grid
    m, n = spec.resolutions[rng.integers(0, len(spec.resolutions))]
    cell_w = spec.canvas_w // n
    cell_h = spec.canvas_h // m
    count = m * n
    patches = draw_patches(pool, count, rng)
    flips = rng.random(count) < cfg.flip_probability

    canvas = np.full((spec.canvas_h, spec.canvas_w, 3), spec.fill_value, dtype=np.uint8)
    instances: List[Instance] = []
    labels: Dict[int, str] = {}
    for k, patch in enumerate(patches):
        cell, box = preprocess_patch(patch, cell_w, cell_h, bool(flips[k]))
        ox = (k % n) * cell_w
        oy = (k // n) * cell_h
        paste(canvas, cell.pixels, ox, oy)
        instances.append(
            Instance(
                box=affine_remap_box(box, 1.0, 1.0, ox, oy),
                category_id=patch.category_id,
                image_id=image_id,
            )
        )
        labels[patch.category_id] = pool.label_for(patch.category_id)
    return SampleAnnotation(
        image=ImageBuffer(canvas, _copy=False),
        instances=tuple(instances),
        text_labels=labels,
    )


def grid_synthesize(pool: ObjectPool, cfg: SynthConfig, sample_index: int) -> SampleAnnotation:
    """One grid composite: a uniformly drawn (rows, cols) resolution, with
    rows x cols pool patches embedded one per cell at the cell origin.

    Blending with a partner sample is NOT applied here; see
    synthesize_sample for the full generator.
    """
    rng = rng_for(cfg.rng_seed, sample_index, _STREAM_GRID)
    return _synthesize_grid(pool, cfg, rng, image_id=int(sample_index))


def css_blend(a: SampleAnnotation, b: SampleAnnotation) -> SampleAnnotation:
    """Blend two composites pixel-wise (0.5/0.5, round-half-up) and union
    their annotations."""
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatchError(
            f"blend requires equal canvases, got {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    pixels = average_blend(a.image.pixels, b.image.pixels)
    labels = dict(a.text_labels)
    labels.update(b.text_labels)
    return SampleAnnotation(
        image=ImageBuffer(pixels, _copy=False),
        instances=a.instances + b.instances,
        text_labels=labels,
    )


def mixup(a: SampleAnnotation, b: SampleAnnotation) -> SampleAnnotation:
    """Detection-style mixup: equal-weight pixel blend, union of instance
    lists, no label reweighting. Shares the blend kernel with css_blend."""
    return css_blend(a, b)


def _synthesize_with_css(
    pool: ObjectPool, cfg: SynthConfig, sample_index: int
) -> Tuple[SampleAnnotation, bool]:
    sample = grid_synthesize(pool, cfg, sample_index)
    u = rng_for(cfg.rng_seed, sample_index, _STREAM_CSS).random()
    if u < cfg.grid.css_probability:
        partner_rng = rng_for(cfg.rng_seed, sample_index, _STREAM_PARTNER)
        partner = _synthesize_grid(pool, cfg, partner_rng, image_id=int(sample_index))
        return css_blend(sample, partner), True
    return sample, False


def synthesize_sample(pool: ObjectPool, cfg: SynthConfig, sample_index: int) -> SampleAnnotation:
    """Full generator for one sample: grid composite, then with probability
    cfg.grid.css_probability a blend with an independently synthesized
    partner (instance count doubles)."""
    sample, _ = _synthesize_with_css(pool, cfg, sample_index)
    return sample


def copy_paste(
    base: SampleAnnotation,
    pool: ObjectPool,
    k: int,
    rng_seed: int,
    sample_index: int,
) -> SampleAnnotation:
    """Paste k pool patches at uniform random positions fully inside the
    canvas. Patches keep native size (downscaled only when larger than the
    canvas); overlap between pasted objects is not avoided."""
    if k == 0:
        return base
    W, H = base.width, base.height
    rng = rng_for(rng_seed, sample_index, _STREAM_COPYPASTE)
    patches = draw_patches(pool, k, rng)
    canvas = base.image.pixels.copy()
    instances = list(base.instances)
    labels = dict(base.text_labels)
    for patch in patches:
        pixels = patch.pixels.pixels
        box = patch.tight_box
        pw, ph = patch.pixels.width, patch.pixels.height
        if pw > W or ph > H:
            s = min(W / pw, H / ph)
            nw = max(1, int(pw * s))
            nh = max(1, int(ph * s))
            pixels = resize_bilinear(pixels, nw, nh)
            box = affine_remap_box(box, nw / pw, nh / ph, 0.0, 0.0)
            pw, ph = nw, nh
        x0 = int(rng.integers(0, W - pw + 1))
        y0 = int(rng.integers(0, H - ph + 1))
        paste(canvas, pixels, x0, y0)
        instances.append(
            Instance(
                box=affine_remap_box(box, 1.0, 1.0, x0, y0),
                category_id=patch.category_id,
                image_id=int(sample_index),
            )
        )
        labels[patch.category_id] = pool.label_for(patch.category_id)
    return SampleAnnotation(
        image=ImageBuffer(canvas, _copy=False),
        instances=tuple(instances),
        text_labels=labels,
    )


def mosaic(
    samples: Sequence[SampleAnnotation],
    canvas_w: int,
    canvas_h: int,
    rng_seed: int,
    sample_index: int,
    center: Optional[Tuple[int, int]] = None,
    min_visible: float = 0.25,
) -> SampleAnnotation:
    """Four-quadrant composition around a random interior center point.

    Each input is scaled to cover its quadrant (aspect preserved, anchored
    at the center point) and the overflow is cropped. Boxes are remapped
    and clipped to their quadrant; instances keeping less than min_visible
    of their remapped area are dropped.
    """
    if len(samples) != 4:
        raise ValueError(f"mosaic needs exactly 4 inputs, got {len(samples)}")
    rng = rng_for(rng_seed, sample_index, _STREAM_MOSAIC)
    if center is None:
        cx = int(rng.integers(canvas_w // 4, 3 * canvas_w // 4 + 1))
        cy = int(rng.integers(canvas_h // 4, 3 * canvas_h // 4 + 1))
    else:
        cx, cy = center
        if not (0 < cx < canvas_w and 0 < cy < canvas_h):
            raise ValueError(f"center ({cx}, {cy}) not interior to {canvas_w}x{canvas_h}")

    # quadrant rectangles and, per quadrant, which corner of the scaled
    # image sits at the canvas corner away from the center
    quads = (
        (0, 0, cx, cy),
        (cx, 0, canvas_w, cy),
        (0, cy, cx, canvas_h),
        (cx, cy, canvas_w, canvas_h),
    )
    canvas = np.full((canvas_h, canvas_w, 3), 114, dtype=np.uint8)
    instances: List[Instance] = []
    labels: Dict[int, str] = {}
    for sample, (qx1, qy1, qx2, qy2) in zip(samples, quads):
        qw, qh = qx2 - qx1, qy2 - qy1
        sw_, sh_ = sample.width, sample.height
        s = max(qw / sw_, qh / sh_)
        sw = max(qw, int(round(sw_ * s)))
        sh = max(qh, int(round(sh_ * s)))
        scaled = resize_bilinear(sample.image.pixels, sw, sh)
        # anchor at the center point: the quadrant shows the corner of the
        # scaled image adjacent to (cx, cy)
        dx = qx1 if qx1 == cx else qx2 - sw
        dy = qy1 if qy1 == cy else qy2 - sh
        visible = scaled[qy1 - dy:qy1 - dy + qh, qx1 - dx:qx1 - dx + qw]
        canvas[qy1:qy2, qx1:qx2] = visible
        labels.update(sample.text_labels)
        for inst in sample.instances:
            remapped = affine_remap_box(inst.box, sw / sw_, sh / sh_, dx, dy)
            clipped = Box2D(
                min(max(remapped.x1, qx1), qx2),
                min(max(remapped.y1, qy1), qy2),
                min(max(remapped.x2, qx1), qx2),
                min(max(remapped.y2, qy1), qy2),
            )
            if remapped.area <= 0 or clipped.area < min_visible * remapped.area:
                continue
            instances.append(
                Instance(box=clipped, category_id=inst.category_id, image_id=int(sample_index))
            )
    return SampleAnnotation(
        image=ImageBuffer(canvas, _copy=False),
        instances=tuple(instances),
        text_labels=labels,
    )


def scale_sample(sample: SampleAnnotation, width: int, height: int) -> SampleAnnotation:
    """Resize a whole sample to the target canvas, remapping every box."""
    if (sample.width, sample.height) == (width, height):
        return sample
    sx, sy = width / sample.width, height / sample.height
    pixels = resize_bilinear(sample.image.pixels, width, height)
    instances = tuple(
        Instance(
            box=clip_box(affine_remap_box(i.box, sx, sy, 0.0, 0.0), width, height),
            category_id=i.category_id,
            image_id=i.image_id,
        )
        for i in sample.instances
    )
    return SampleAnnotation(
        image=ImageBuffer(pixels, _copy=False),
        instances=instances,
        text_labels=dict(sample.text_labels),
    )


# ---------------------------------------------------------------------------
# Augmentation pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentationPolicy:
    """Per-sample activation probabilities.

    Mosaic is an independent coin; the grid synthesizer and mixup are a
    single categorical draw (mutually exclusive within one sample). The
    blend probability for grid samples lives on GridSpec.
    """

    mosaic_probability: float = 0.75
    grid_probability: float = 0.125
    mixup_probability: float = 0.125

    def __post_init__(self):
        for name in ("mosaic_probability", "grid_probability", "mixup_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.grid_probability + self.mixup_probability > 1.0 + 1e-12:
            raise ValueError("grid_probability + mixup_probability must be <= 1")


@dataclass(frozen=True)
class AppliedAugs:
    """Which augmentations fired for one pipeline sample."""

    mosaic: bool = False
    grid: bool = False
    mixup: bool = False
    css: bool = False


def pipeline_step(
    bases: Sequence[SampleAnnotation],
    pool: Optional[ObjectPool],
    policy: AugmentationPolicy,
    cfg: SynthConfig,
    index: int,
) -> Tuple[SampleAnnotation, AppliedAugs]:
    """Produce pipeline output `index` and report which augmentations fired.

    Fixed draw order per sample: mosaic coin, mosaic partner indices,
    grid-or-mixup categorical, mixup partner index. Everything is a pure
    function of (cfg.rng_seed, index, config, pool, bases).
    """
    if not bases:
        raise ValueError("pipeline needs at least one base sample")
    W, H = cfg.grid.canvas_w, cfg.grid.canvas_h
    rng = rng_for(cfg.rng_seed, index, _STREAM_PIPELINE)
    base = bases[index % len(bases)]

    mosaic_on = bool(rng.random() < policy.mosaic_probability)
    if mosaic_on:
        partners = rng.integers(0, len(bases), size=3)
        inputs = [base] + [bases[int(i)] for i in partners]
        current = mosaic(inputs, W, H, cfg.rng_seed, index)
    else:
        current = scale_sample(base, W, H)

    grid_on = mixup_on = css_on = False
    u = rng.random()
    if u < policy.grid_probability:
        if pool is None:
            raise ValueError("grid_probability > 0 requires an object pool")
        grid_on = True
        current, css_on = _synthesize_with_css(pool, cfg, index)
    elif u < policy.grid_probability + policy.mixup_probability:
        mixup_on = True
        partner = scale_sample(bases[int(rng.integers(0, len(bases)))], W, H)
        current = mixup(current, partner)

    return current, AppliedAugs(mosaic=mosaic_on, grid=grid_on, mixup=mixup_on, css=css_on)


def pipeline_apply(
    bases: Sequence[SampleAnnotation],
    pool: Optional[ObjectPool],
    policy: AugmentationPolicy,
    cfg: SynthConfig,
    count: int,
    start_index: int = 0,
) -> Iterator[SampleAnnotation]:
    """Stream `count` augmented samples; see pipeline_step for semantics."""
    for i in range(start_index, start_index + count):
        sample, _ = pipeline_step(bases, pool, policy, cfg, i)
        yield sample


def sample_digest(sample: SampleAnnotation) -> str:
    """Canonical content hash of pixels + annotations, for replay checks."""
    h = hashlib.sha256()
    h.update(struct.pack("<II", sample.width, sample.height))
    h.update(sample.image.tobytes())
    for inst in sample.instances:
        h.update(struct.pack("<qq4d", inst.category_id, inst.image_id, *inst.box.as_tuple()))
    h.update(json.dumps(sorted(sample.text_labels.items())).encode())
    return h.hexdigest()


def corpus_digest(samples: Iterable[SampleAnnotation]) -> str:
    """Order-sensitive digest of a sample stream."""
    h = hashlib.sha256()
    for s in samples:
        h.update(bytes.fromhex(sample_digest(s)))
    return h.hexdigest()
