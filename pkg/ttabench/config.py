"""Method hyper-parameter defaults, override resolution and application settings."""
import dataclasses
import hashlib
import json
import os
from collections.abc import Mapping
from enum import Enum

import flask
import numpy as np

from .episodic import EpisodicConfig, MTAConfig, RLCFConfig, RTPTConfig
from .errors import ValidationError
from .exceptions import ImproperlyConfigured
from .online import (
    BoostAdapterConfig,
    DMNConfig,
    DPEConfig,
    DynaPromptConfig,
    ECALPConfig,
    OnZetaConfig,
    TDAConfig,
)
from .shift import LossKind, LossSpec, OptimConfig
from .tags import MethodTag

CONFIG_HASH_LENGTH = 12
OUTPUT_FORMATS = ("csv", "markdown")

DEFAULT_SETTINGS = {
    "TTABENCH_WORKERS": 1,
    "TTABENCH_LOG_LEVEL": "WARNING",
    "TTABENCH_OUTPUT_FORMAT": "csv",
}

# Keys accepted in override files under a more familiar name.
_ALIASES = {"lambda": "dispersion_weight"}
_NULLABLE = frozenset({"window", "reward_bank"})
# Marginal-entropy gradients of the most confident views are about 1e-4 per coordinate at scale 100.
ENTROPY_SHIFT_LEARNING_RATE = 300.0

DEFAULT_CONFIGS = {
    MethodTag.zero_shot: EpisodicConfig(optim=OptimConfig(steps=0)),
    MethodTag.tpt: EpisodicConfig(
        optim=OptimConfig(steps=1, learning_rate=ENTROPY_SHIFT_LEARNING_RATE),
        loss=LossSpec(kind=LossKind.marginal_entropy),
    ),
    MethodTag.ctpt: EpisodicConfig(
        optim=OptimConfig(steps=1, learning_rate=5e-3),
        loss=LossSpec(kind=LossKind.marginal_entropy_plus_dispersion, dispersion_weight=1.0),
    ),
    MethodTag.rlcf: EpisodicConfig(
        optim=OptimConfig(steps=3, learning_rate=5e-3),
        loss=LossSpec(kind=LossKind.reinforce_reward),
        rlcf=RLCFConfig(samples_per_step=3),
    ),
    MethodTag.mta: EpisodicConfig(mta=MTAConfig(iterations=5, bandwidth_mode="median")),
    MethodTag.zero: EpisodicConfig(zero_selection="msp"),
    MethodTag.ttl: EpisodicConfig(
        optim=OptimConfig(steps=1, learning_rate=5e-3),
        loss=LossSpec(kind=LossKind.weighted_entropy, epsilon=0.0),
    ),
    MethodTag.tps: EpisodicConfig(
        optim=OptimConfig(steps=1, learning_rate=ENTROPY_SHIFT_LEARNING_RATE),
        loss=LossSpec(kind=LossKind.marginal_entropy),
    ),
    MethodTag.rtpt: EpisodicConfig(
        optim=OptimConfig(steps=1, learning_rate=5e-3),
        loss=LossSpec(kind=LossKind.pointwise_entropy),
        rtpt=RTPTConfig(ensemble=True),
    ),
    MethodTag.tda: TDAConfig(),
    MethodTag.dmn: DMNConfig(use_aug=True),
    MethodTag.dmn_w: DMNConfig(use_aug=False),
    MethodTag.onzeta: OnZetaConfig(),
    MethodTag.boostadapter: BoostAdapterConfig(),
    MethodTag.dpe: DPEConfig(),
    MethodTag.ecalp: ECALPConfig(),
    MethodTag.dynaprompt: DynaPromptConfig(optim=OptimConfig(steps=1, learning_rate=5e-3)),
}


def default_config(method_tag):
    return DEFAULT_CONFIGS[MethodTag(method_tag)]


def _coerce(current, value, path):
    if value is None and path.rsplit(".", 1)[-1] in _NULLABLE:
        return None
    try:
        if isinstance(current, Enum):
            return type(current)(value)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError("expected true or false")
            return value
        if isinstance(current, int):
            if isinstance(value, bool) or not float(value).is_integer():
                raise TypeError("expected an integer")
            return int(value)
        if isinstance(current, float):
            if isinstance(value, bool):
                raise TypeError("expected a number")
            return float(value)
        if isinstance(current, tuple):
            return tuple(float(v) for v in value)
        if path.endswith("reward_bank"):
            return None if value is None else np.asarray(value, dtype=np.float64)
        if isinstance(current, str):
            return str(value)
        return value
    except (TypeError, ValueError) as e:
        raise ImproperlyConfigured("Invalid value {!r} for {}: {}".format(value, path, e)) from e


def _merge(instance, overrides, path):
    if not isinstance(overrides, Mapping):
        raise ImproperlyConfigured("Expected an object for {}, got {!r}".format(path or "config", overrides))
    fields = {f.name for f in dataclasses.fields(instance)}
    changes = {}
    for key, value in overrides.items():
        name = _ALIASES.get(key, key)
        if name not in fields:
            raise ImproperlyConfigured(
                "Unknown config key '{}{}'; expected one of {}".format(path, key, ", ".join(sorted(fields)))
            )
        current = getattr(instance, name)
        if dataclasses.is_dataclass(current):
            changes[name] = _merge(current, value, "{}{}.".format(path, name))
        else:
            changes[name] = _coerce(current, value, path + name)
    return dataclasses.replace(instance, **changes)


def resolve_method_config(method_tag, overrides=None):
    """Per-method defaults with ``overrides`` (a nested mapping, e.g. parsed JSON) merged in."""
    config = default_config(method_tag)
    if not overrides:
        return config
    try:
        return _merge(config, overrides, "")
    except ValidationError as e:
        raise ImproperlyConfigured("Invalid {} config: {}".format(MethodTag(method_tag).value, e.message)) from e


def config_to_dict(config):
    if dataclasses.is_dataclass(config):
        return {f.name: config_to_dict(getattr(config, f.name)) for f in dataclasses.fields(config)}
    if isinstance(config, Enum):
        return config.value
    if isinstance(config, np.ndarray):
        return config.tolist()
    if isinstance(config, (tuple, list)):
        return [config_to_dict(value) for value in config]
    return config


def resolved_config_document(method_tag, mode, template_mode, rule, config):
    return {
        "method_tag": MethodTag(method_tag).value,
        "mode": getattr(mode, "value", mode),
        "template_mode": getattr(template_mode, "value", template_mode),
        "scoring": rule.to_dict(),
        "config": config_to_dict(config),
    }


def config_hash(method_tag, mode, template_mode, rule, config):
    canonical = json.dumps(
        resolved_config_document(method_tag, mode, template_mode, rule, config),
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:CONFIG_HASH_LENGTH]


def load_settings(path=None, root_path=None):
    """Settings from defaults, an optional JSON file, then ``TTABENCH_*`` environment variables."""
    settings = flask.Config(root_path or os.getcwd(), defaults=DEFAULT_SETTINGS)
    if path:
        try:
            settings.from_file(os.path.abspath(path), load=json.load)
        except (OSError, ValueError) as e:
            raise ImproperlyConfigured("Cannot load settings file {}: {}".format(path, e)) from e
    environment = flask.Config(settings.root_path)
    environment.from_prefixed_env("TTABENCH")
    settings.update({"TTABENCH_" + key: value for key, value in environment.items()})

    workers = settings["TTABENCH_WORKERS"]
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ImproperlyConfigured("TTABENCH_WORKERS must be a positive integer, got {!r}".format(workers))
    if settings["TTABENCH_OUTPUT_FORMAT"] not in OUTPUT_FORMATS:
        raise ImproperlyConfigured(
            "TTABENCH_OUTPUT_FORMAT must be one of {}".format(", ".join(OUTPUT_FORMATS))
        )
    return settings
