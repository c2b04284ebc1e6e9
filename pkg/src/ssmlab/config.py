"""Strict JSON experiment configs: unknown keys are errors, never ignored."""

import dataclasses
import json

from .errors import ConfigError
from .models import ModelSpec
from .tasks import CurriculumSchedule
from .training import DistributionSettings, TrainConfig, TrainSettings


def _from_dict(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, f in fields.items():
        here = f"{path}.{name}" if path else name
        if name in data:
            kwargs[name] = data[name]
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"{here}: required key missing")
    return cls(**kwargs)


_NESTED = {
    "model": ModelSpec,
    "distribution": DistributionSettings,
    "train": TrainSettings,
    "curriculum": CurriculumSchedule,
}


def train_config_from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    unknown = set(doc) - {"model", "distribution", "train", "k_train"}
    if unknown:
        raise ConfigError(f"config: unknown key(s) {sorted(unknown)}")
    for key in ("model", "distribution", "train"):
        if key not in doc:
            raise ConfigError(f"config: required section {key!r} missing")
    model = _from_dict(ModelSpec, doc["model"], "model")
    dist = _from_dict(DistributionSettings, doc["distribution"], "distribution")
    train_doc = dict(doc["train"])
    curriculum = train_doc.pop("curriculum", None)
    train = _from_dict(TrainSettings, train_doc, "train")
    if curriculum is not None:
        train.curriculum = _from_dict(CurriculumSchedule, curriculum, "train.curriculum")
    cfg = TrainConfig(
        model=model,
        distribution=dist,
        train=train,
        k_train=doc.get("k_train", 10),
    )
    return cfg.validate()


def load_train_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    return train_config_from_dict(doc), doc


def train_config_to_dict(cfg):
    return {
        "model": dataclasses.asdict(cfg.model),
        "distribution": dataclasses.asdict(cfg.distribution),
        "train": dataclasses.asdict(cfg.train),
        "k_train": cfg.k_train,
    }
