"""Experiment orchestration: episodic and online runners, mixed streams and the OOD-detection protocol."""
import hashlib
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum, unique
from typing import Any, List, Optional

import numpy as np
import pandas as pd

from .bundle import SampleFlag, load_bundle, push_toward_class, sample_id
from .config import config_hash, resolve_method_config, resolved_config_document
from .episodic import EPISODIC_METHODS
from .errors import ModeMismatch, NoConfidenceError, ValidationError
from .metrics import auroc, build_report, ood_split
from .online import run_stream
from .scoring import ensemble_templates
from .tags import MethodTag, Mode, parse_method_tag

logger = logging.getLogger(__name__)

DEFAULT_MIX_RATIO = 0.5
LOG_COLUMNS = ["step", "sample_id", "flag", "label", "hard_label", "confidence", "probs_digest"]


@unique
class TemplateMode(Enum):
    single = "single"
    ensemble = "ensemble"


@dataclass(frozen=True)
class ContaminationSpec:
    ratio: float = DEFAULT_MIX_RATIO
    kind: SampleFlag = SampleFlag.adversarial
    contaminant_bundle_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", _parse_flag(self.kind))
        if not self.ratio >= 0:
            raise ValidationError("contamination ratio must be non-negative", field="ratio")
        if self.kind == SampleFlag.ood and self.contaminant_bundle_path is None:
            raise ValidationError("OOD contamination needs a contaminant bundle", field="contaminant_bundle_path")


@dataclass(frozen=True)
class OODDetectionSpec:
    fraction: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class ExperimentSpec:
    bundle_path: str
    method_tag: MethodTag
    mode: Mode
    config: Any = None
    seed: int = 0
    template_mode: TemplateMode = TemplateMode.single
    contamination: Optional[ContaminationSpec] = None
    ood_detection: Optional[OODDetectionSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "method_tag", parse_method_tag(self.method_tag))
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
            object.__setattr__(self, "template_mode", TemplateMode(self.template_mode))
        except ValueError as e:
            raise ValidationError(str(e)) from e
        if not self.method_tag.accepts_mode(self.mode):
            raise ModeMismatch(
                "method '{}' runs in {} mode only, not {}".format(
                    self.method_tag.value,
                    " or ".join(sorted(mode.value for mode in self.method_tag.modes)),
                    self.mode.value,
                ),
                method_tag=self.method_tag.value,
            )
        if self.config is None or isinstance(self.config, dict):
            object.__setattr__(self, "config", resolve_method_config(self.method_tag, self.config))
        if self.contamination is not None and self.mode is not Mode.online:
            raise ModeMismatch("stream contamination only applies to online runs")

    def config_hash(self, rule):
        return config_hash(self.method_tag, self.mode, self.template_mode, rule, self.config)

    def resolved_config(self, rule):
        document = resolved_config_document(self.method_tag, self.mode, self.template_mode, rule, self.config)
        document.update(seed=self.seed, bundle_path=str(self.bundle_path))
        if self.contamination is not None:
            document["contamination"] = {
                "ratio": self.contamination.ratio,
                "kind": self.contamination.kind.name,
                "contaminant_bundle_path": self.contamination.contaminant_bundle_path,
            }
        if self.ood_detection is not None:
            document["ood_detection"] = {"fraction": self.ood_detection.fraction, "seed": self.ood_detection.seed}
        return document


def _parse_flag(kind):
    if isinstance(kind, SampleFlag):
        return kind
    try:
        return SampleFlag[kind]
    except KeyError:
        raise ValidationError(
            "contamination kind must be 'ood' or 'adversarial', got {!r}".format(kind), field="kind"
        ) from None


def probs_digest(probs):
    if probs is None:
        return ""
    return hashlib.sha256(np.ascontiguousarray(probs, dtype="<f8").tobytes()).hexdigest()[:16]


@dataclass
class PredictionLog:
    rows: List[dict] = field(default_factory=list)

    @classmethod
    def from_predictions(cls, samples, predictions):
        return cls([
            {
                "step": step,
                "sample_id": sample.id,
                "flag": sample.flag.name,
                "label": int(sample.label),
                "hard_label": prediction.hard_label,
                "confidence": prediction.confidence,
                "probs_digest": probs_digest(prediction.probs),
            }
            for step, (sample, prediction) in enumerate(zip(samples, predictions))
        ])

    def __len__(self):
        return len(self.rows)

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=LOG_COLUMNS)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def read_csv(cls, path):
        frame = pd.read_csv(path, dtype={"sample_id": str, "flag": str, "probs_digest": str})
        frame["probs_digest"] = frame["probs_digest"].fillna("")
        rows = frame.to_dict("records")
        for row in rows:
            if pd.isna(row["confidence"]):
                row["confidence"] = None
        return cls(rows)


def sample_seed(global_seed, sample_identifier):
    """Per-sample seed: the first 8 bytes of ``sha256("{global_seed}:{sample_id}")``."""
    digest = hashlib.sha256("{}:{}".format(global_seed, sample_identifier).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def text_bank_for(bundle, template_mode):
    if TemplateMode(template_mode) is TemplateMode.ensemble:
        return ensemble_templates(bundle.text_features)
    return bundle.text_bank(0)


def synthesize_adversarial(bundle, seed=0, step=0.05):
    """Copy of ``bundle`` whose clean samples are pushed toward a seeded wrong class and flagged adversarial."""
    rng = np.random.default_rng(seed)
    bank = bundle.text_bank(0)
    C = bundle.num_classes
    if C < 2:
        raise ValidationError("adversarial contaminants need at least two classes")
    samples = []
    for sample in bundle.samples:
        if sample.flag != SampleFlag.clean:
            continue
        wrong = int(rng.choice([k for k in range(C) if k != sample.label]))
        views = push_toward_class(sample.views, bank[wrong], bank, bundle.scoring, wrong, step=step)
        samples.append(replace(sample, views=views.astype(np.float32), flag=SampleFlag.adversarial))
    for position, sample in enumerate(samples):
        sample.stream_position = position
    return replace(bundle, samples=samples, dataset_name="{}-adv".format(bundle.dataset_name))


def build_mixed_stream(clean_bundle, contaminant_bundle, ratio, kind, seed=0):
    """Interleave ``floor(ratio * N)`` contaminants into the clean stream at seeded random positions.

    Clean samples keep their storage index, id and relative stream order; contaminants are stored after
    them and take ids continuing the clean bundle's numbering.
    """
    kind = _parse_flag(kind)
    if kind == SampleFlag.clean:
        raise ValidationError("contamination kind must be 'ood' or 'adversarial'", field="kind")
    if not ratio >= 0:
        raise ValidationError("ratio must be non-negative", field="ratio")
    if contaminant_bundle.dim != clean_bundle.dim:
        raise ValidationError(
            "contaminant dimension {} does not match {}".format(contaminant_bundle.dim, clean_bundle.dim)
        )
    if contaminant_bundle.samples and clean_bundle.samples and \
            contaminant_bundle.views_per_sample != clean_bundle.views_per_sample:
        raise ValidationError("contaminant bundles must carry the same number of views per sample")
    if kind == SampleFlag.adversarial and contaminant_bundle.class_names != clean_bundle.class_names:
        raise ValidationError("adversarial contaminants must share the clean bundle's class space")

    N = clean_bundle.num_samples
    count = int(math.floor(ratio * N + 1e-9))
    if count > contaminant_bundle.num_samples:
        raise ValidationError(
            "ratio {} needs {} contaminants, bundle has {}".format(ratio, count, contaminant_bundle.num_samples),
            field="ratio",
        )
    rng = np.random.default_rng(seed)
    stream = contaminant_bundle.stream()
    chosen = [stream[int(i)] for i in rng.choice(contaminant_bundle.num_samples, count, replace=False)]
    contaminant_slots = sorted(int(i) for i in rng.choice(N + count, count, replace=False))

    taken = set(contaminant_slots)
    clean_positions = [s for s in range(N + count) if s not in taken]
    position_of = {sample.id: clean_positions[rank] for rank, sample in enumerate(clean_bundle.stream())}
    samples = [replace(sample, stream_position=position_of[sample.id]) for sample in clean_bundle.samples]
    for j, (slot, contaminant) in enumerate(zip(contaminant_slots, chosen)):
        samples.append(replace(
            contaminant,
            id=sample_id(clean_bundle.dataset_name, N + j),
            flag=kind,
            stream_position=slot,
        ))

    logger.log(
        logging.INFO,
        "Mixed {count} {kind} contaminants into {dataset_name}",
        extra={"count": count, "kind": kind.name, "dataset_name": clean_bundle.dataset_name, "seed": seed},
    )
    return replace(clean_bundle, samples=samples, has_stream_order=True)


class BenchHarness(object):
    """Runs experiment specs; ``workers`` controls episodic fan-out only."""

    _WORKERS = 1

    def __init__(self, workers=None, bundle_loader=load_bundle):
        self._workers = workers or self._WORKERS
        self._load_bundle = bundle_loader

    def init_config(self, config):
        self._workers = int(config["TTABENCH_WORKERS"])

    @property
    def workers(self):
        return self._workers

    def _prepare(self, spec):
        bundle = self._load_bundle(spec.bundle_path)
        if spec.contamination is not None:
            contamination = spec.contamination
            if contamination.contaminant_bundle_path is None:
                contaminant = synthesize_adversarial(bundle, seed=spec.seed)
            else:
                contaminant = self._load_bundle(contamination.contaminant_bundle_path)
            bundle = build_mixed_stream(bundle, contaminant, contamination.ratio, contamination.kind, seed=spec.seed)
        return bundle

    def _predict(self, spec, bundle):
        """Predictions in processing order: storage order for episodic runs, stream order for online ones."""
        bank = text_bank_for(bundle, spec.template_mode)
        rule = bundle.scoring
        if spec.mode is Mode.online:
            if not bundle.has_stream_order:
                raise ValidationError("bundle {} has no stream order; online runs need one".format(bundle.dataset_name))
            pairs = list(run_stream(spec.method_tag, bundle.stream(), bank, rule, spec.config, seed=spec.seed))
            return [sample for sample, _ in pairs], [prediction for _, prediction in pairs]

        method = EPISODIC_METHODS[spec.method_tag]

        def predict(sample):
            rng = np.random.default_rng(sample_seed(spec.seed, sample.id))
            return method(sample, bank, rule, spec.config, rng)

        samples = list(bundle.samples)
        if self._workers > 1:
            with ThreadPoolExecutor(max_workers=self._workers) as executor:
                predictions = list(executor.map(predict, samples))
        else:
            predictions = [predict(sample) for sample in samples]
        return samples, predictions

    def _report(self, spec, bundle, samples, predictions, auroc_value=None):
        evaluated = [i for i, sample in enumerate(samples) if sample.flag == SampleFlag.clean]
        attacked = [i for i, sample in enumerate(samples) if sample.flag == SampleFlag.adversarial]
        return build_report(
            [predictions[i] for i in evaluated],
            [samples[i].label for i in evaluated],
            [samples[i].id for i in evaluated],
            bundle.num_classes,
            spec.method_tag.value,
            bundle.dataset_name,
            spec.config_hash(bundle.scoring),
            spec.seed,
            auroc_value=auroc_value,
            adversarial=([predictions[i] for i in attacked], [samples[i].label for i in attacked]),
        )

    def _run(self, spec, expected_mode):
        if spec.mode is not expected_mode:
            raise ModeMismatch("{} spec passed to the {} runner".format(spec.mode.value, expected_mode.value))
        start_time = time.perf_counter()
        bundle = self._prepare(spec)
        samples, predictions = self._predict(spec, bundle)
        report = self._report(spec, bundle, samples, predictions)
        logger.log(
            logging.INFO,
            "Ran {method_tag} ({mode}) on {dataset_name}: accuracy {accuracy} in {run_time}",
            extra={
                "method_tag": spec.method_tag.value,
                "mode": spec.mode.value,
                "dataset_name": bundle.dataset_name,
                "accuracy": report.accuracy,
                "n_evaluated": report.n_evaluated,
                "adversarial_accuracy": report.adversarial_accuracy,
                "run_time": time.perf_counter() - start_time,
            },
        )
        return report, PredictionLog.from_predictions(samples, predictions)

    def run_episodic(self, spec):
        return self._run(spec, Mode.episodic)

    def run_online(self, spec):
        return self._run(spec, Mode.online)

    def run_ood_detection(self, spec):
        start_time = time.perf_counter()
        if not spec.method_tag.has_confidence:
            raise NoConfidenceError(
                "{} provides hard predictions only and cannot score OOD samples".format(spec.method_tag.value)
            )
        detection = spec.ood_detection or OODDetectionSpec()
        bundle = self._prepare(spec)
        split = ood_split(bundle, detection.fraction, detection.seed)
        if len(split.id_classes) == bundle.num_classes:
            raise ValidationError("OOD fraction {} discards no class; AUROC is undefined".format(detection.fraction))

        samples, predictions = self._predict(spec, split.bundle)
        id_scores = [p.confidence for s, p in zip(samples, predictions) if s.flag == SampleFlag.clean]
        ood_scores = [p.confidence for s, p in zip(samples, predictions) if s.flag == SampleFlag.ood]
        report = self._report(spec, split.bundle, samples, predictions, auroc_value=auroc(id_scores, ood_scores))
        logger.log(
            logging.INFO,
            "OOD detection with {method_tag} on {dataset_name}: AUROC {auroc} in {run_time}",
            extra={
                "method_tag": spec.method_tag.value,
                "dataset_name": bundle.dataset_name,
                "auroc": report.auroc,
                "run_time": time.perf_counter() - start_time,
            },
        )
        return report, PredictionLog.from_predictions(samples, predictions)

    def run(self, spec):
        if spec.ood_detection is not None:
            return self.run_ood_detection(spec)
        if spec.mode is Mode.online:
            return self.run_online(spec)
        return self.run_episodic(spec)


def run_episodic(spec, workers=1):
    return BenchHarness(workers=workers).run_episodic(spec)


def run_online(spec):
    return BenchHarness().run_online(spec)


def run_ood_detection(spec, workers=1):
    report, _ = BenchHarness(workers=workers).run_ood_detection(spec)
    return report
