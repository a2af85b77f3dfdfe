"""JSON checkpoints for every model kind.

A checkpoint is ``{"format_version", "kind", "model"}`` serialised with
sorted keys and fixed indentation, so save -> load -> save is byte-identical
(Python's float repr round-trips exactly).
"""

from __future__ import annotations

import json
from pathlib import Path

from .binary import BinaryDyBM
from .errors import DomainError, MalformedInputError
from .functional import FunctionalDyBM
from .gaussian import GaussianDyBM
from .hidden import HiddenDyBM
from .rtrbm import Rtrbm

FORMAT_VERSION = 1

MODEL_CLASSES = {
    "dybm-binary": BinaryDyBM,
    "dybm-gaussian": GaussianDyBM,
    "dybm-gaussian-natural": GaussianDyBM,
    "dybm-esn": GaussianDyBM,
    "dybm-functional": FunctionalDyBM,
    "dybm-hidden": HiddenDyBM,
    "rtrbm": Rtrbm,
}
MODEL_KINDS = tuple(MODEL_CLASSES)


def dumps(model) -> str:
    payload = {"format_version": FORMAT_VERSION, "kind": model.kind, "model": model.to_dict()}
    return json.dumps(payload, sort_keys=True, indent=1, allow_nan=False) + "\n"


def loads(text: str, expected_kind: str | None = None):
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedInputError(f"checkpoint is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or not {"format_version", "kind", "model"} <= set(payload):
        raise MalformedInputError("checkpoint must hold format_version, kind and model")
    if payload["format_version"] != FORMAT_VERSION:
        raise MalformedInputError(f"unsupported checkpoint format {payload['format_version']!r}")
    kind = payload["kind"]
    if kind not in MODEL_CLASSES:
        raise MalformedInputError(f"unknown model kind {kind!r} in checkpoint")
    if expected_kind is not None and kind != expected_kind:
        raise DomainError(f"checkpoint holds a {kind} model, not {expected_kind}")
    try:
        model = MODEL_CLASSES[kind].from_dict(payload["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInputError(f"corrupt {kind} checkpoint: {exc}") from exc
    if model.kind != kind:
        raise MalformedInputError(f"checkpoint kind {kind} does not match its contents ({model.kind})")
    return model


def save(model, path) -> None:
    Path(path).write_text(dumps(model))


def load(path, expected_kind: str | None = None):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedInputError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(text, expected_kind)
