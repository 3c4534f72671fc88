import numpy as np
import pytest

from gridsynth.core import Box2D, ImageBuffer, Instance, SampleAnnotation
from gridsynth.pool import build_pool
from gridsynth.seeding import rng_for


def make_image(width, height, seed=0):
    rng = rng_for(seed)
    return ImageBuffer(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))


def solid_image(width, height, color):
    arr = np.zeros((height, width, 3), dtype=np.uint8)
    arr[:] = color
    return ImageBuffer(arr)


def make_dataset(n_images=3, width=128, height=96, seed=42, categories=(0, 1, 2)):
    """Images with random pixels and a few well-separated instances each."""
    rng = rng_for(seed)
    samples = []
    labels = {c: f"thing-{c}" for c in categories}
    for img_id in range(n_images):
        image = make_image(width, height, seed=seed + img_id)
        instances = []
        for k in range(3):
            w = int(rng.integers(12, 36))
            h = int(rng.integers(12, 30))
            x1 = int(rng.integers(0, width - w))
            y1 = int(rng.integers(0, height - h))
            instances.append(
                Instance(
                    box=Box2D(x1, y1, x1 + w, y1 + h),
                    category_id=int(categories[k % len(categories)]),
                    image_id=img_id,
                )
            )
        samples.append(
            SampleAnnotation(image=image, instances=tuple(instances), text_labels=labels)
        )
    return samples


def make_color_pool_dataset(categories=(0, 1, 2, 3), patch=24, seed=0):
    """One image per category holding a single solid-color instance; the
    color encodes the category so patch identity survives compositing."""
    samples = []
    for c in categories:
        color = (c * 40 + 20, c * 40 + 20, c * 40 + 20)
        arr = np.full((64, 64, 3), 200, dtype=np.uint8)
        arr[10:10 + patch, 10:10 + patch] = color
        samples.append(
            SampleAnnotation(
                image=ImageBuffer(arr),
                instances=(
                    Instance(box=Box2D(10, 10, 10 + patch, 10 + patch),
                             category_id=c, image_id=c),
                ),
                text_labels={c: f"color-{c}"},
            )
        )
    return samples


@pytest.fixture
def dataset():
    return make_dataset()


@pytest.fixture
def small_pool(dataset):
    return build_pool(dataset, context_ratio=0.2, min_side=2)


@pytest.fixture
def color_pool():
    # context_ratio 0 keeps each patch a pure solid color
    return build_pool(make_color_pool_dataset(), context_ratio=0.0, min_side=2)
