"""Embedding bundles: the on-disk stand-in for "model + dataset".

A bundle directory holds ``manifest.json`` and raw little-endian blobs::

    text_features.f32   float32 [T][C][D]
    samples.f32         float32 [N][V][D]
    labels.u32          uint32  [N]
    flags.u8            uint8   [N]   0=clean, 1=ood, 2=adversarial
    stream_order.u32    uint32  [N]   stream position of each sample (iff has_stream_order)

Sample ids are not stored; sample ``i`` of a bundle named ``name`` is ``"{name}-{i:06d}"``.
"""
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional

import numpy as np

from .errors import BundleFormatError, ValidationError
from .scoring import ScoringRule, l2_normalize, normalize_rows, score

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
TEXT_BLOB = "text_features.f32"
SAMPLES_BLOB = "samples.f32"
LABELS_BLOB = "labels.u32"
FLAGS_BLOB = "flags.u8"
STREAM_BLOB = "stream_order.u32"

F32 = np.dtype("<f4")
U32 = np.dtype("<u4")
U8 = np.dtype("u1")

GENERATED_NORM_TOLERANCE = 1e-5
LOAD_NORM_TOLERANCE = 1e-3

DEFAULT_TEMPLATES = (
    "a photo of a {}.",
    "a bad photo of a {}.",
    "a photo of the large {}.",
    "a photo of the small {}.",
    "a rendering of a {}.",
    "a cropped photo of a {}.",
    "itap of a {}.",
)


class SampleFlag(IntEnum):
    clean = 0
    ood = 1
    adversarial = 2


def sample_id(dataset_name, index):
    return "{}-{:06d}".format(dataset_name, index)


@dataclass(eq=False)
class SampleRecord:
    id: str
    label: int
    views: np.ndarray
    flag: SampleFlag = SampleFlag.clean
    stream_position: int = 0

    @property
    def weak_view(self):
        return self.views[0]

    @property
    def num_views(self):
        return self.views.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.flag == other.flag
            and self.stream_position == other.stream_position
            and self.views.shape == other.views.shape
            and np.array_equal(self.views, other.views)
        )


@dataclass(eq=False)
class EmbeddingBundle:
    dim: int
    class_names: List[str]
    templates: List[str]
    text_features: np.ndarray
    samples: List[SampleRecord]
    scoring: ScoringRule = field(default_factory=ScoringRule)
    dataset_name: str = "bundle"
    format_version: int = FORMAT_VERSION
    has_stream_order: bool = True

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def num_samples(self):
        return len(self.samples)

    @property
    def num_templates(self):
        return len(self.templates)

    @property
    def views_per_sample(self):
        return self.samples[0].num_views if self.samples else 1

    def text_bank(self, template_index=0):
        return self.text_features[template_index].astype(np.float64)

    def stream(self):
        """Samples in stream order (storage order when the bundle carries no stream order)."""
        if not self.has_stream_order:
            return list(self.samples)
        return sorted(self.samples, key=lambda sample: sample.stream_position)

    def validate(self, norm_tolerance=GENERATED_NORM_TOLERANCE):
        C, T = len(self.class_names), len(self.templates)
        if self.format_version != FORMAT_VERSION:
            raise BundleFormatError("unknown format_version {}".format(self.format_version))
        if self.dim < 1:
            raise BundleFormatError("dim must be positive, got {}".format(self.dim))
        if self.text_features.shape != (T, C, self.dim):
            raise BundleFormatError(
                "text features have shape {}, expected {}".format(self.text_features.shape, (T, C, self.dim))
            )
        _check_unit_rows(self.text_features.reshape(-1, self.dim), norm_tolerance, TEXT_BLOB)

        if not self.samples:
            return self
        V = self.samples[0].num_views
        if V < 1:
            raise BundleFormatError("samples must carry at least one view")
        positions = []
        for i, sample in enumerate(self.samples):
            if sample.views.shape != (V, self.dim):
                raise BundleFormatError(
                    "sample {} has views of shape {}, expected {}".format(sample.id, sample.views.shape, (V, self.dim))
                )
            if sample.flag != SampleFlag.ood and not 0 <= sample.label < C:
                raise BundleFormatError("sample {} label {} outside [0, {})".format(sample.id, sample.label, C))
            positions.append(sample.stream_position)
        if sorted(positions) != list(range(len(self.samples))):
            raise BundleFormatError("stream positions are not a permutation of 0..N-1")
        views = np.stack([sample.views for sample in self.samples]).reshape(-1, self.dim)
        _check_unit_rows(views, norm_tolerance, SAMPLES_BLOB)
        return self

    def __eq__(self, other):
        if not isinstance(other, EmbeddingBundle):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.class_names == other.class_names
            and self.templates == other.templates
            and self.scoring == other.scoring
            and self.dataset_name == other.dataset_name
            and self.format_version == other.format_version
            and self.has_stream_order == other.has_stream_order
            and self.text_features.shape == other.text_features.shape
            and np.array_equal(self.text_features, other.text_features)
            and self.samples == other.samples
        )


def _check_unit_rows(rows, tolerance, blob_name):
    if rows.size == 0:
        return
    deviation = np.abs(np.linalg.norm(rows.astype(np.float64), axis=1) - 1.0)
    worst = int(np.argmax(deviation))
    if deviation[worst] > tolerance:
        raise BundleFormatError(
            "row {} of {} has norm {:.6f}, outside 1 +/- {:g}".format(
                worst, blob_name, 1.0 + deviation[worst], tolerance
            ),
            blob=blob_name,
            row=worst,
        )


def _manifest(bundle):
    return {
        "format_version": bundle.format_version,
        "dataset_name": bundle.dataset_name,
        "dim": bundle.dim,
        "num_classes": bundle.num_classes,
        "num_samples": bundle.num_samples,
        "views_per_sample": bundle.views_per_sample,
        "num_templates": bundle.num_templates,
        "scoring": bundle.scoring.to_dict(),
        "class_names": list(bundle.class_names),
        "templates": list(bundle.templates),
        "has_stream_order": bool(bundle.has_stream_order),
    }


def save_bundle(bundle, path):
    start_time = time.perf_counter()
    N, V, D = bundle.num_samples, bundle.views_per_sample, bundle.dim
    if bundle.samples:
        views = np.stack([sample.views for sample in bundle.samples]).astype(F32)
    else:
        views = np.zeros((0, V, D), dtype=F32)
    blobs = {
        TEXT_BLOB: np.ascontiguousarray(bundle.text_features, dtype=F32),
        SAMPLES_BLOB: views,
        LABELS_BLOB: np.array([sample.label for sample in bundle.samples], dtype=U32),
        FLAGS_BLOB: np.array([int(sample.flag) for sample in bundle.samples], dtype=U8),
    }
    if bundle.has_stream_order:
        blobs[STREAM_BLOB] = np.array([sample.stream_position for sample in bundle.samples], dtype=U32)

    try:
        os.makedirs(path, exist_ok=True)
        with open(os.path.join(path, MANIFEST), "w", encoding="utf-8") as f:
            json.dump(_manifest(bundle), f, indent=2, ensure_ascii=False)
            f.write("\n")
        for name, array in blobs.items():
            with open(os.path.join(path, name), "wb") as f:
                f.write(array.tobytes())
        stale = os.path.join(path, STREAM_BLOB)
        if not bundle.has_stream_order and os.path.exists(stale):
            os.remove(stale)
    except OSError as e:
        raise BundleFormatError("cannot write bundle to {}: {}".format(path, e), path=str(path)) from e

    logger.log(
        logging.INFO,
        "Saved bundle {dataset_name} ({num_samples} samples) to {path} in {save_time}",
        extra={
            "dataset_name": bundle.dataset_name,
            "num_samples": N,
            "path": str(path),
            "save_time": time.perf_counter() - start_time,
        },
    )


def _read_blob(path, name, dtype, shape):
    blob_path = os.path.join(path, name)
    if not os.path.exists(blob_path):
        raise BundleFormatError("missing blob {} in {}".format(name, path), blob=name)
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = os.path.getsize(blob_path)
    if actual != expected:
        raise BundleFormatError(
            "size mismatch for blob {}: {} bytes on disk, manifest implies {}".format(name, actual, expected),
            blob=name,
        )
    with open(blob_path, "rb") as f:
        return np.frombuffer(f.read(), dtype=dtype).reshape(shape)


def read_manifest(path):
    manifest_path = os.path.join(path, MANIFEST)
    if not os.path.exists(manifest_path):
        raise BundleFormatError("missing {} in {}".format(MANIFEST, path), blob=MANIFEST)
    try:
        with open(manifest_path, encoding="utf-8") as f:
            manifest = json.load(f)
    except ValueError as e:
        raise BundleFormatError("{} is not valid JSON: {}".format(manifest_path, e)) from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise BundleFormatError("unknown format_version {}".format(manifest.get("format_version")))
    return manifest


def load_bundle(path):
    start_time = time.perf_counter()
    manifest = read_manifest(path)
    version = manifest["format_version"]

    try:
        D = int(manifest["dim"])
        C = int(manifest["num_classes"])
        N = int(manifest["num_samples"])
        V = int(manifest["views_per_sample"])
        T = int(manifest["num_templates"])
        has_stream_order = bool(manifest["has_stream_order"])
        scoring = ScoringRule.from_dict(manifest["scoring"])
        dataset_name = manifest["dataset_name"]
        class_names = list(manifest["class_names"])
        templates = list(manifest["templates"])
    except (KeyError, TypeError, ValueError) as e:
        raise BundleFormatError("malformed manifest in {}: {!r}".format(path, e)) from e
    if len(class_names) != C or len(templates) != T:
        raise BundleFormatError("manifest class/template lists disagree with num_classes/num_templates")

    text_features = _read_blob(path, TEXT_BLOB, F32, (T, C, D))
    views = _read_blob(path, SAMPLES_BLOB, F32, (N, V, D))
    labels = _read_blob(path, LABELS_BLOB, U32, (N,))
    flags = _read_blob(path, FLAGS_BLOB, U8, (N,))
    positions = _read_blob(path, STREAM_BLOB, U32, (N,)) if has_stream_order else np.arange(N)

    try:
        samples = [
            SampleRecord(
                id=sample_id(dataset_name, i),
                label=int(labels[i]),
                views=views[i],
                flag=SampleFlag(int(flags[i])),
                stream_position=int(positions[i]),
            )
            for i in range(N)
        ]
    except ValueError as e:
        raise BundleFormatError("invalid sample flag in {}: {}".format(FLAGS_BLOB, e)) from e

    bundle = EmbeddingBundle(
        dim=D,
        class_names=class_names,
        templates=templates,
        text_features=text_features,
        samples=samples,
        scoring=scoring,
        dataset_name=dataset_name,
        format_version=version,
        has_stream_order=has_stream_order,
    ).validate(norm_tolerance=LOAD_NORM_TOLERANCE)

    logger.log(
        logging.INFO,
        "Loaded bundle {dataset_name} from {path} in {load_time}",
        extra={"dataset_name": dataset_name, "path": str(path), "load_time": time.perf_counter() - start_time},
    )
    return bundle


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    C: int = 10
    D: int = 64
    N: int = 500
    V: int = 64
    class_separation: float = 1.0
    view_noise_sigma: float = 0.9
    weak_noise_sigma: float = 0.7
    view_correlation: float = 0.5
    ood_class_fraction: float = 0.0
    adversarial_fraction: float = 0.0
    num_templates: int = 1
    template_noise_sigma: float = 0.1
    scoring: ScoringRule = field(default_factory=ScoringRule)
    dataset_name: Optional[str] = None

    def __post_init__(self):
        for name in ("C", "D", "N", "V", "num_templates"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValidationError("{} must be a positive integer, got {!r}".format(name, value), field=name)
        if not self.class_separation > 0:
            raise ValidationError("class_separation must be positive", field="class_separation")
        for name in ("view_noise_sigma", "weak_noise_sigma", "template_noise_sigma"):
            if not getattr(self, name) >= 0:
                raise ValidationError("{} must be non-negative".format(name), field=name)
        if not 0.0 <= self.view_correlation < 1.0:
            raise ValidationError("view_correlation must lie in [0, 1)", field="view_correlation")
        for name in ("ood_class_fraction", "adversarial_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError("{} must lie in [0, 1]".format(name), field=name)
        if self.num_templates > len(DEFAULT_TEMPLATES):
            raise ValidationError(
                "num_templates must be at most {}".format(len(DEFAULT_TEMPLATES)), field="num_templates"
            )

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(
                "unknown synth spec fields: {}".format(", ".join(sorted(unknown))), field=min(unknown)
            )
        if "scoring" in data:
            data["scoring"] = ScoringRule.from_dict(data["scoring"])
        return cls(**data)


def class_prototypes(rng, C, D, separation):
    """Unit prototypes ``normalize(anchor + separation * q_k)``.

    ``anchor`` is a shared seeded unit vector and the ``q_k`` are orthonormal seeded directions (plain
    seeded unit directions once C exceeds D), so pairwise cosines sit near ``1 / (1 + separation^2)``.
    """
    anchor = l2_normalize(rng.standard_normal(D))
    if C <= D:
        q, r = np.linalg.qr(rng.standard_normal((D, C)))
        directions = (q * np.sign(np.diag(r))).T
    else:
        directions = normalize_rows(rng.standard_normal((C, D)))
    return normalize_rows(anchor + separation * directions)


def _sample_views(rng, prototype, spec):
    """Weak view plus ``V - 1`` augmented views of one sample.

    Augmented views reuse the weak view's noise with weight ``view_correlation``, the way crops of one image
    share its content; a correlation of 0 makes every view independent.
    """
    weak_noise = rng.standard_normal((1, prototype.shape[0]))
    view_noise = rng.standard_normal((spec.V - 1, prototype.shape[0]))
    c = spec.view_correlation
    shared = c * weak_noise + math.sqrt(1.0 - c * c) * view_noise
    return np.concatenate([
        normalize_rows(prototype + spec.weak_noise_sigma * weak_noise),
        normalize_rows(prototype + spec.view_noise_sigma * shared),
    ])


def push_toward_class(views, target_bank_row, text_bank, rule, target, step=0.05):
    """Interpolate every view toward ``target_bank_row`` until the weak view scores as ``target``."""
    views = np.asarray(views, dtype=np.float64)
    for i in range(1, int(math.ceil(1.0 / step)) + 1):
        weight = min(1.0, i * step)
        moved = normalize_rows((1.0 - weight) * views + weight * target_bank_row)
        _, probs = score(moved[0], text_bank, rule)
        if int(np.argmax(probs)) == target:
            return moved
    return moved


def generate_synthetic(spec):
    """Deterministic synthetic bundle; the same :class:`SynthSpec` always yields bit-identical blobs."""
    start_time = time.perf_counter()
    rng = np.random.default_rng(spec.seed)
    C, D, N, V = spec.C, spec.D, spec.N, spec.V
    dataset_name = spec.dataset_name or "synthetic-s{}".format(spec.seed)

    prototypes = class_prototypes(rng, C, D, spec.class_separation)
    text = [prototypes]
    for _ in range(1, spec.num_templates):
        text.append(normalize_rows(prototypes + spec.template_noise_sigma * rng.standard_normal((C, D))))
    text_features = np.stack(text).astype(F32)

    n_ood_classes = int(math.floor(spec.ood_class_fraction * C))
    ood_classes = set(int(k) for k in rng.choice(C, size=n_ood_classes, replace=False))
    labels = rng.integers(0, C, size=N)
    positions = rng.permutation(N)

    samples = []
    for i in range(N):
        label = int(labels[i])
        views = _sample_views(rng, prototypes[label], spec)
        samples.append(SampleRecord(
            id=sample_id(dataset_name, i),
            label=label,
            views=views,
            flag=SampleFlag.ood if label in ood_classes else SampleFlag.clean,
            stream_position=int(positions[i]),
        ))

    candidates = [i for i, sample in enumerate(samples) if sample.flag == SampleFlag.clean]
    n_adversarial = min(len(candidates), int(math.floor(spec.adversarial_fraction * N)))
    if C > 1 and n_adversarial:
        bank = text_features[0].astype(np.float64)
        for i in sorted(int(j) for j in rng.choice(candidates, size=n_adversarial, replace=False)):
            sample = samples[i]
            wrong = int(rng.choice([k for k in range(C) if k != sample.label]))
            sample.views = push_toward_class(sample.views, bank[wrong], bank, spec.scoring, wrong)
            sample.flag = SampleFlag.adversarial

    for sample in samples:
        sample.views = sample.views.astype(F32)

    bundle = EmbeddingBundle(
        dim=D,
        class_names=["class_{:03d}".format(k) for k in range(C)],
        templates=list(DEFAULT_TEMPLATES[:spec.num_templates]),
        text_features=text_features,
        samples=samples,
        scoring=spec.scoring,
        dataset_name=dataset_name,
        has_stream_order=True,
    ).validate()

    logger.log(
        logging.INFO,
        "Generated synthetic bundle {dataset_name} in {generate_time}",
        extra={"dataset_name": dataset_name, "seed": spec.seed, "generate_time": time.perf_counter() - start_time},
    )
    return bundle
