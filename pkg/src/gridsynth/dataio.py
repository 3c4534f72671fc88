"""File-format boundary: COCO-style annotation JSON with optional
category frequency tags, PNG/PPM image codecs, the binary embedding
format, detection result files, and the run configuration schema.

Saves are atomic (write temp, rename); loads never mutate inputs.
Annotation saves use sorted keys and sequential id assignment so a
load -> save round trip of a canonically formatted file is byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import (
    Box2D,
    ImageBuffer,
    Instance,
    SampleAnnotation,
    box_from_xywh,
    box_to_xywh,
    clip_box,
)
from .detmetrics import CategoryInfo, Detection, EvalConfig
from .errors import (
    BadMagicError,
    DanglingReferenceError,
    DecodeError,
    ParseError,
    TruncatedPayloadError,
)
from .seeding import rng_for
from .synth import GridSpec, SynthConfig
from .vlalign import AlignmentHeadParams, EmbeddingMatrix, LossWeights, QueryBudget

_FREQ_TO_TAG = {"r": "rare", "c": "common", "f": "frequent"}
_TAG_TO_FREQ = {v: k for k, v in _FREQ_TO_TAG.items()}


@dataclass(frozen=True)
class SampleRecord:
    """Annotation-file metadata for one image; pixels load lazily."""

    image_id: int
    file_name: str
    width: int
    height: int
    instances: Tuple[Instance, ...]


def atomic_write_bytes(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------

def _require(obj: dict, key: str, context: str):
    if not isinstance(obj, dict):
        raise ParseError(f"{context}: expected an object")
    if key not in obj:
        raise ParseError(f"{context}: missing field '{key}'")
    return obj[key]


def _require_int(obj: dict, key: str, context: str) -> int:
    value = _require(obj, key, context)
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ParseError(f"{context}: field '{key}' must be an integer, got {value!r}")


def load_annotations(path: str) -> Tuple[List[SampleRecord], Dict[int, CategoryInfo]]:
    """Parse an annotation file into per-image records plus the category
    table. Boxes are converted from [x, y, w, h] to corner form; images are
    not decoded here."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}")
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")

    categories: Dict[int, CategoryInfo] = {}
    for k, cat in enumerate(doc.get("categories", [])):
        ctx = f"{path}: categories[{k}]"
        cid = _require_int(cat, "id", ctx)
        if cid in categories:
            raise ParseError(f"{ctx}: duplicate category id {cid}")
        freq = cat.get("frequency")
        if freq is not None:
            if freq not in _FREQ_TO_TAG:
                raise ParseError(f"{ctx}: frequency must be one of r/c/f, got {freq!r}")
            freq = _FREQ_TO_TAG[freq]
        categories[cid] = CategoryInfo(id=cid, name=str(_require(cat, "name", ctx)), frequency=freq)

    images: Dict[int, SampleRecord] = {}
    order: List[int] = []
    for k, img in enumerate(doc.get("images", [])):
        ctx = f"{path}: images[{k}]"
        iid = _require_int(img, "id", ctx)
        if iid in images:
            raise ParseError(f"{ctx}: duplicate image id {iid}")
        w = _require_int(img, "width", ctx)
        h = _require_int(img, "height", ctx)
        if w < 1 or h < 1:
            raise ParseError(f"{ctx}: non-positive size {w}x{h}")
        images[iid] = SampleRecord(
            image_id=iid, file_name=str(_require(img, "file_name", ctx)),
            width=w, height=h, instances=(),
        )
        order.append(iid)

    per_image: Dict[int, List[Instance]] = {iid: [] for iid in order}
    for k, ann in enumerate(doc.get("annotations", [])):
        ctx = f"{path}: annotations[{k}]"
        iid = _require_int(ann, "image_id", ctx)
        cid = _require_int(ann, "category_id", ctx)
        if iid not in images:
            raise DanglingReferenceError(f"{ctx}: unknown image id {iid}")
        if cid not in categories:
            raise DanglingReferenceError(f"{ctx}: unknown category id {cid}")
        bbox = _require(ann, "bbox", ctx)
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise ParseError(f"{ctx}: bbox must be [x, y, w, h]")
        try:
            box = box_from_xywh(bbox)
        except ValueError as e:
            raise ParseError(f"{ctx}: {e}")
        per_image[iid].append(Instance(box=box, category_id=cid, image_id=iid))

    records = [dataclasses.replace(images[iid], instances=tuple(per_image[iid]))
               for iid in order]
    return records, categories


def save_annotations(
    samples: Sequence[Union[SampleAnnotation, SampleRecord]],
    path: str,
    file_names: Optional[Sequence[str]] = None,
    categories: Optional[Mapping[int, CategoryInfo]] = None,
) -> None:
    """Write an annotation file with deterministic formatting: sorted keys,
    2-space indent, image and annotation ids assigned sequentially in
    output order."""
    images, annotations = [], []
    seen: Dict[int, CategoryInfo] = dict(categories or {})
    ann_id = 1
    for idx, s in enumerate(samples):
        img_id = idx + 1
        if isinstance(s, SampleRecord):
            name, w, h, insts = s.file_name, s.width, s.height, s.instances
        else:
            name = file_names[idx] if file_names else f"sample_{idx:06d}.png"
            w, h, insts = s.width, s.height, s.instances
            if categories is None:
                for cid, label in s.text_labels.items():
                    seen.setdefault(cid, CategoryInfo(id=cid, name=label))
        images.append({"id": img_id, "file_name": name, "width": w, "height": h})
        for inst in insts:
            if categories is None and inst.category_id not in seen:
                seen[inst.category_id] = CategoryInfo(
                    id=inst.category_id, name=f"category-{inst.category_id}"
                )
            annotations.append({
                "id": ann_id,
                "image_id": img_id,
                "category_id": inst.category_id,
                "bbox": [round(v, 6) for v in box_to_xywh(inst.box)],
            })
            ann_id += 1
    cats = []
    for cid in sorted(seen):
        entry = {"id": cid, "name": seen[cid].name}
        if seen[cid].frequency is not None:
            entry["frequency"] = _TAG_TO_FREQ[seen[cid].frequency]
        cats.append(entry)
    doc = {"images": images, "annotations": annotations, "categories": cats}
    payload = (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")
    atomic_write_bytes(path, payload)


def load_sample(
    record: SampleRecord,
    images_dir: str,
    categories: Mapping[int, CategoryInfo],
) -> SampleAnnotation:
    """Materialize a record: decode its image and bind category names.

    Boxes are clipped to the image bounds so the in-memory containment
    invariant holds even for slightly loose annotations.
    """
    image = read_image(os.path.join(images_dir, record.file_name))
    if (image.width, image.height) != (record.width, record.height):
        raise ParseError(
            f"{record.file_name}: size {image.width}x{image.height} does not match "
            f"declared {record.width}x{record.height}"
        )
    instances = tuple(
        dataclasses.replace(i, box=clip_box(i.box, record.width, record.height))
        for i in record.instances
    )
    labels = {cid: info.name for cid, info in categories.items()}
    return SampleAnnotation(image=image, instances=instances, text_labels=labels)


# ---------------------------------------------------------------------------
# Detection result files (COCO results style)
# ---------------------------------------------------------------------------

def load_detections(path: str) -> List[Detection]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}")
    if not isinstance(doc, list):
        raise ParseError(f"{path}: top level must be an array of detections")
    out = []
    for k, d in enumerate(doc):
        ctx = f"{path}: [{k}]"
        bbox = _require(d, "bbox", ctx)
        try:
            out.append(Detection(
                image_id=_require_int(d, "image_id", ctx),
                category_id=_require_int(d, "category_id", ctx),
                box=box_from_xywh(bbox),
                score=float(_require(d, "score", ctx)),
                origin=d.get("origin", "decoder"),
            ))
        except (TypeError, ValueError) as e:
            raise ParseError(f"{ctx}: {e}")
    return out


def save_detections(dets: Sequence[Detection], path: str) -> None:
    doc = [
        {
            "image_id": d.image_id,
            "category_id": d.category_id,
            "bbox": [round(v, 6) for v in box_to_xywh(d.box)],
            "score": d.score,
            "origin": d.origin,
        }
        for d in dets
    ]
    atomic_write_bytes(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


# ---------------------------------------------------------------------------
# Images: PNG (library codec) and PPM P6 (dependency-free)
# ---------------------------------------------------------------------------

def read_image(path: str) -> ImageBuffer:
    if path.lower().endswith(".ppm"):
        return _read_ppm(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise DecodeError(f"{path}: {e}")
    return ImageBuffer(arr)


def write_image(buffer: ImageBuffer, path: str) -> None:
    if path.lower().endswith(".ppm"):
        header = f"P6\n{buffer.width} {buffer.height}\n255\n".encode("ascii")
        atomic_write_bytes(path, header + buffer.tobytes())
        return
    tmp = path + ".tmp"
    Image.fromarray(buffer.pixels).save(tmp, format="PNG")
    os.replace(tmp, path)


def _read_ppm(path: str) -> ImageBuffer:
    with open(path, "rb") as f:
        data = f.read()
    try:
        tokens: List[bytes] = []
        pos = 0
        while len(tokens) < 4:
            while pos < len(data) and data[pos:pos + 1].isspace():
                pos += 1
            if pos < len(data) and data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos] != 0x0A:
                    pos += 1
                continue
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            if start == pos:
                raise DecodeError(f"{path}: truncated header")
            tokens.append(data[start:pos])
        if tokens[0] != b"P6":
            raise DecodeError(f"{path}: not a P6 ppm (magic {tokens[0]!r})")
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        if maxval != 255:
            raise DecodeError(f"{path}: only maxval 255 supported, got {maxval}")
        pos += 1  # single whitespace byte after maxval
        need = w * h * 3
        raw = data[pos:pos + need]
        if len(raw) < need:
            raise DecodeError(f"{path}: payload short by {need - len(raw)} bytes")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    except (ValueError, IndexError) as e:
        raise DecodeError(f"{path}: {e}")
    return ImageBuffer(arr)


# ---------------------------------------------------------------------------
# Embedding files: little-endian magic + rows + dim header, float32 payload
# ---------------------------------------------------------------------------

EMBEDDING_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")


def save_embeddings(matrix: EmbeddingMatrix, path: str) -> None:
    payload = matrix.values.astype("<f4").tobytes(order="C")
    header = _HEADER.pack(EMBEDDING_MAGIC, matrix.rows, matrix.dim)
    atomic_write_bytes(path, header + payload)


def load_embeddings(path: str) -> EmbeddingMatrix:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than header")
    magic, rows, dim = _HEADER.unpack_from(data)
    if magic != EMBEDDING_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}")
    need = rows * dim * 4
    payload = data[_HEADER.size:]
    if len(payload) < need:
        raise TruncatedPayloadError(f"{path}: payload short by {need - len(payload)} bytes")
    values = np.frombuffer(payload[:need], dtype="<f4").reshape(rows, dim)
    try:
        return EmbeddingMatrix(values=values)
    except ValueError as e:
        raise ParseError(f"{path}: {e}")


def pseudo_embeddings(rows: int, dim: int, seed: int) -> EmbeddingMatrix:
    """Deterministic unit-norm rows for tests and dry runs; stands in for
    a text/vision encoder."""
    if rows < 1 or dim < 1:
        raise ValueError(f"rows and dim must be positive, got {rows}x{dim}")
    rng = rng_for(seed)
    values = rng.standard_normal((rows, dim))
    values /= np.linalg.norm(values, axis=1)[:, None]
    return EmbeddingMatrix(values=values.astype(np.float32))


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Single serializable configuration for reproducible runs."""

    synth: SynthConfig = field(default_factory=SynthConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    alignment: AlignmentHeadParams = field(default_factory=AlignmentHeadParams)
    budget: QueryBudget = field(default_factory=QueryBudget)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: Dict[str, str] = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


def _build_strict(cls, data: dict, context: str):
    """Construct a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ParseError(f"{context}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ParseError(f"{context}: unknown key(s) {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ParseError(f"{context}: {e}")


def synth_config_from_dict(data: dict, context: str = "synth") -> SynthConfig:
    data = dict(data)
    if "grid" in data:
        grid = dict(data["grid"]) if isinstance(data["grid"], dict) else data["grid"]
        if isinstance(grid, dict) and "resolutions" in grid:
            grid["resolutions"] = tuple(tuple(r) for r in grid["resolutions"])
        data["grid"] = _build_strict(GridSpec, grid, f"{context}.grid")
    return _build_strict(SynthConfig, data, context)


def run_config_from_dict(data: dict, context: str = "config") -> RunConfig:
    if not isinstance(data, dict):
        raise ParseError(f"{context}: expected an object")
    known = {"synth", "loss", "alignment", "budget", "eval", "paths", "workers"}
    unknown = set(data) - known
    if unknown:
        raise ParseError(f"{context}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    if "synth" in data:
        kwargs["synth"] = synth_config_from_dict(data["synth"], f"{context}.synth")
    if "loss" in data:
        kwargs["loss"] = _build_strict(LossWeights, data["loss"], f"{context}.loss")
    if "alignment" in data:
        kwargs["alignment"] = _build_strict(
            AlignmentHeadParams, data["alignment"], f"{context}.alignment")
    if "budget" in data:
        kwargs["budget"] = _build_strict(QueryBudget, data["budget"], f"{context}.budget")
    if "eval" in data:
        ev = dict(data["eval"])
        if "iou_thresholds" in ev:
            ev["iou_thresholds"] = tuple(ev["iou_thresholds"])
        kwargs["eval"] = _build_strict(EvalConfig, ev, f"{context}.eval")
    if "paths" in data:
        paths = data["paths"]
        if not isinstance(paths, dict):
            raise ParseError(f"{context}.paths: expected an object")
        kwargs["paths"] = {str(k): str(v) for k, v in paths.items()}
    if "workers" in data:
        kwargs["workers"] = int(data["workers"])
    return RunConfig(**kwargs)


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}")
    return run_config_from_dict(doc, context=path)
