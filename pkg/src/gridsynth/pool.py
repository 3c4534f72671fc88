"""Object pool construction: context-expanded object crops from an
annotated dataset, indexed by category.

Patches own their pixels (no views into source images), so a built pool
is immutable, shareable and independent of source decoding.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from .core import Box2D, ImageBuffer, SampleAnnotation
from .errors import EmptyPoolError, ParseError
from .imageops import crop
from .seeding import rng_for


@dataclass(frozen=True)
class ObjectPatch:
    """Context-expanded object crop.

    tight_box is in patch-local coordinates; (crop_x0, crop_y0) is the
    integer origin of the crop in the source image, kept so the original
    instance box can be recovered.
    """

    pixels: ImageBuffer
    tight_box: Box2D
    category_id: int
    source_image_id: int
    crop_x0: int = 0
    crop_y0: int = 0

    def __post_init__(self):
        b = self.tight_box
        if b.x1 < 0 or b.y1 < 0 or b.x2 > self.pixels.width or b.y2 > self.pixels.height:
            raise ValueError(
                f"tight box {b.as_tuple()} outside patch {self.pixels.width}x{self.pixels.height}"
            )


@dataclass(frozen=True)
class ObjectPool:
    """Immutable patch corpus with a per-category index and text bindings."""

    patches: Tuple[ObjectPatch, ...]
    by_category: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    category_names: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        index: Dict[int, List[int]] = {}
        for i, p in enumerate(self.patches):
            index.setdefault(p.category_id, []).append(i)
        object.__setattr__(
            self, "by_category", {c: tuple(ix) for c, ix in sorted(index.items())}
        )

    def __len__(self) -> int:
        return len(self.patches)

    def label_for(self, category_id: int) -> str:
        return self.category_names.get(category_id, f"category-{category_id}")


def expand_box(tight: Box2D, context_ratio: float, image_w: float, image_h: float) -> Box2D:
    """Grow a tight box by context_ratio * side / 2 on each side, clipped to
    the image. ratio 0 is the identity."""
    if context_ratio < 0:
        raise ValueError(f"context_ratio must be >= 0, got {context_ratio}")
    pad_x = context_ratio * tight.width / 2.0
    pad_y = context_ratio * tight.height / 2.0
    return Box2D(
        max(tight.x1 - pad_x, 0.0),
        max(tight.y1 - pad_y, 0.0),
        min(tight.x2 + pad_x, image_w),
        min(tight.y2 + pad_y, image_h),
    )


def build_pool(
    dataset: Sequence[SampleAnnotation],
    context_ratio: float = 0.2,
    min_side: int = 2,
) -> ObjectPool:
    """Extract one context-expanded patch per instance whose tight box has
    both sides >= min_side.

    Ordering is deterministic: dataset order, then instance order. Raises
    EmptyPoolError when nothing survives the size filter.
    """
    if min_side < 1:
        raise ValueError(f"min_side must be >= 1, got {min_side}")
    patches: List[ObjectPatch] = []
    names: Dict[int, str] = {}
    for sample in dataset:
        names.update(sample.text_labels)
        w, h = sample.width, sample.height
        for inst in sample.instances:
            tight = inst.box
            if tight.width < min_side or tight.height < min_side:
                continue
            expanded = expand_box(tight, context_ratio, w, h)
            # integer crop window covering the expanded region
            cx0 = int(math.floor(expanded.x1))
            cy0 = int(math.floor(expanded.y1))
            cx1 = min(int(math.ceil(expanded.x2)), w)
            cy1 = min(int(math.ceil(expanded.y2)), h)
            pixels = crop(sample.image.pixels, cx0, cy0, cx1, cy1)
            local = Box2D(tight.x1 - cx0, tight.y1 - cy0, tight.x2 - cx0, tight.y2 - cy0)
            patches.append(
                ObjectPatch(
                    pixels=ImageBuffer(pixels, _copy=False),
                    tight_box=local,
                    category_id=inst.category_id,
                    source_image_id=inst.image_id,
                    crop_x0=cx0,
                    crop_y0=cy0,
                )
            )
    if not patches:
        raise EmptyPoolError(
            f"no instance with both sides >= {min_side} px in a dataset of {len(dataset)} samples"
        )
    return ObjectPool(patches=tuple(patches), category_names=names)


def sample_patches(
    pool: ObjectPool,
    count: int,
    rng_seed: int,
    balanced: bool = False,
) -> List[ObjectPatch]:
    """Draw `count` patches uniformly with replacement, seeded.

    With balanced=True the draw is uniform over categories first, then
    uniform within the chosen category (rare-category oversampling).
    """
    rng = rng_for(rng_seed)
    return draw_patches(pool, count, rng, balanced=balanced)


def draw_patches(pool, count, rng, balanced: bool = False) -> List[ObjectPatch]:
    """Sampling kernel shared with the synthesizers; consumes the given rng."""
    if len(pool) == 0:
        raise EmptyPoolError("cannot sample from an empty pool")
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if not balanced:
        idx = rng.integers(0, len(pool), size=count)
        return [pool.patches[i] for i in idx]
    categories = sorted(pool.by_category)
    cat_idx = rng.integers(0, len(categories), size=count)
    out = []
    for ci in cat_idx:
        bucket = pool.by_category[categories[ci]]
        out.append(pool.patches[bucket[rng.integers(0, len(bucket))]])
    return out


# ---------------------------------------------------------------------------
# Serialization: directory of PNG patches plus a JSON manifest
# ---------------------------------------------------------------------------

_MANIFEST = "manifest.json"


def save_pool(pool: ObjectPool, directory: str) -> None:
    from .dataio import write_image  # local import, dataio depends on core only

    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, p in enumerate(pool.patches):
        name = f"patch_{i:06d}.png"
        write_image(p.pixels, os.path.join(directory, name))
        entries.append(
            {
                "file": name,
                "tight_box": list(p.tight_box.as_tuple()),
                "category_id": p.category_id,
                "source_image_id": p.source_image_id,
                "crop_origin": [p.crop_x0, p.crop_y0],
            }
        )
    manifest = {
        "patches": entries,
        "categories": {str(c): n for c, n in sorted(pool.category_names.items())},
    }
    tmp = os.path.join(directory, _MANIFEST + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, os.path.join(directory, _MANIFEST))


def load_pool(directory: str) -> ObjectPool:
    from .dataio import read_image

    path = os.path.join(directory, _MANIFEST)
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise EmptyPoolError(f"no pool manifest at {path}")
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}")
    patches = []
    for k, entry in enumerate(manifest.get("patches", [])):
        try:
            pixels = read_image(os.path.join(directory, entry["file"]))
            origin = entry.get("crop_origin", [0, 0])
            patches.append(
                ObjectPatch(
                    pixels=pixels,
                    tight_box=Box2D(*entry["tight_box"]),
                    category_id=int(entry["category_id"]),
                    source_image_id=int(entry["source_image_id"]),
                    crop_x0=int(origin[0]),
                    crop_y0=int(origin[1]),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{path}: patches[{k}]: {e}")
    if not patches:
        raise EmptyPoolError(f"pool at {directory} has no patches")
    names = {int(c): str(n) for c, n in manifest.get("categories", {}).items()}
    return ObjectPool(patches=tuple(patches), category_names=names)
