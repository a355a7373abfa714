"""Single-sample trainable classifiers and the shared dataset text encoding.

Models are immutable: ``update`` returns a new model. Dot products use
``math.fsum`` so every result is correctly rounded and independent of
summation order; replaying the same samples always reproduces the same bits.

Canonical model encoding (format version 1)::

    <kind>\\n<learning_rate>\\n<bias>\\n<w1>,<w2>,...,<wd>\\n

Numbers are written with Python's shortest round-trip ``repr``.

Dataset encoding: one sample per line, ``label,f1,f2,...,fd\\n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

BINARY_CLASSES = (0, 1)


class ModelError(ValueError):
    pass


class DimensionMismatch(ModelError):
    pass


class DecodeError(ModelError):
    pass


@dataclass(frozen=True)
class Sample:
    features: tuple[float, ...]
    label: int

    def __post_init__(self):
        feats = tuple(float(v) for v in self.features)
        if not all(math.isfinite(v) for v in feats):
            raise ModelError("sample features must be finite")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", int(self.label))

    @property
    def dim(self) -> int:
        return len(self.features)


def _fmt(x: float) -> str:
    return repr(float(x))


def _check_features(features: Sequence[float], dim: int) -> tuple[float, ...]:
    if len(features) != dim:
        raise DimensionMismatch(f"expected {dim} features, got {len(features)}")
    x = tuple(float(v) for v in features)
    if not all(math.isfinite(v) for v in x):
        raise ModelError("features must be finite")
    return x


def _check_sample(sample: Sample, dim: int) -> tuple[float, ...]:
    # Sample already holds finite floats
    if sample.label not in BINARY_CLASSES:
        raise ModelError(f"label {sample.label} not in {BINARY_CLASSES}")
    if len(sample.features) != dim:
        raise DimensionMismatch(f"expected {dim} features, got {len(sample.features)}")
    return sample.features


def _score(weights: tuple[float, ...], bias: float, x: tuple[float, ...]) -> float:
    return math.fsum([w * v for w, v in zip(weights, x)] + [bias])


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@dataclass(frozen=True)
class _Linear:
    weights: tuple[float, ...]
    bias: float = 0.0
    learning_rate: float = 1.0

    kind = "linear"
    classes = BINARY_CLASSES

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if not w:
            raise ModelError("model needs at least one feature")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "learning_rate", float(self.learning_rate))
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ModelError("learning rate must be positive and finite")
        if not all(math.isfinite(v) for v in w + (self.bias,)):
            raise ModelError("model parameters must be finite")

    @classmethod
    def zeros(cls, dim: int, learning_rate: float = 1.0):
        return cls((0.0,) * dim, 0.0, learning_rate)

    @property
    def dim(self) -> int:
        return len(self.weights)

    def score(self, features: Sequence[float]) -> float:
        return _score(self.weights, self.bias, _check_features(features, self.dim))

    def serialize(self) -> bytes:
        lines = [
            self.kind,
            _fmt(self.learning_rate),
            _fmt(self.bias),
            ",".join(_fmt(w) for w in self.weights),
        ]
        return ("\n".join(lines) + "\n").encode("ascii")

    def _replace(self, weights, bias):
        return type(self)(tuple(weights), bias, self.learning_rate)


class Perceptron(_Linear):
    """Rosenblatt perceptron on labels {0, 1}.

    A score of exactly zero predicts class 0.
    """

    kind = "perceptron"

    def predict(self, features: Sequence[float]) -> int:
        return 1 if self.score(features) > 0 else 0

    def update(self, sample: Sample) -> Perceptron:
        x = _check_sample(sample, self.dim)
        y = 1.0 if sample.label == 1 else -1.0
        if y * _score(self.weights, self.bias, x) > 0:
            return self
        step = self.learning_rate * y
        return self._replace(
            [w + step * v for w, v in zip(self.weights, x)], self.bias + step
        )


class LogisticRegression(_Linear):
    """Binary logistic regression trained by one SGD step on log-loss per sample.

    Probability 0.5 predicts class 1.
    """

    kind = "logistic"

    def predict_proba(self, features: Sequence[float]) -> float:
        return sigmoid(self.score(features))

    def predict(self, features: Sequence[float]) -> int:
        return 1 if self.predict_proba(features) >= 0.5 else 0

    def update(self, sample: Sample) -> LogisticRegression:
        x = _check_sample(sample, self.dim)
        err = sigmoid(_score(self.weights, self.bias, x)) - sample.label
        step = self.learning_rate * err
        return self._replace(
            [w - step * v for w, v in zip(self.weights, x)], self.bias - step
        )


MODEL_KINDS: dict[str, type[_Linear]] = {
    Perceptron.kind: Perceptron,
    LogisticRegression.kind: LogisticRegression,
}

OnlineModel = _Linear


def make_model(kind: str, dim: int, learning_rate: float = 1.0) -> OnlineModel:
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ModelError(f"unknown model kind {kind!r}") from None
    return cls.zeros(dim, learning_rate)


def deserialize(data: bytes) -> OnlineModel:
    try:
        text = bytes(data).decode("ascii")
    except UnicodeDecodeError as exc:
        raise DecodeError("model encoding is not ASCII") from exc
    parts = text.split("\n")
    if len(parts) != 5 or parts[4] != "":
        raise DecodeError("model encoding must have exactly four lines")
    kind, lr, bias, weights = parts[:4]
    if kind not in MODEL_KINDS:
        raise DecodeError(f"unknown model kind {kind!r}")
    try:
        w = tuple(float(v) for v in weights.split(","))
        model = MODEL_KINDS[kind](w, float(bias), float(lr))
    except ValueError as exc:
        raise DecodeError(f"malformed model encoding: {exc}") from exc
    if model.serialize() != bytes(data):
        raise DecodeError("model encoding is not canonical")
    return model


def fold(model: OnlineModel, samples: Iterable[Sample]) -> OnlineModel:
    for s in samples:
        model = model.update(s)
    return model


def predict_many(model: OnlineModel, samples: Sequence[Sample]) -> list[int]:
    """Same answers as ``model.predict`` on each sample, computed in bulk.

    Scores come from a BLAS product; any score too close to zero for its
    sign to be certain is recomputed exactly.
    """
    for s in samples:
        if s.dim != model.dim:
            raise DimensionMismatch(f"expected {model.dim} features, got {s.dim}")
    X = np.array([s.features for s in samples], dtype=float).reshape(len(samples), model.dim)
    w = np.array(model.weights)
    scores = X @ w + model.bias
    bound = 1e-10 * (np.abs(X) @ np.abs(w) + abs(model.bias)) + 1e-12
    preds = (scores > 0).astype(int) if isinstance(model, Perceptron) else (scores >= 0).astype(int)
    for i in np.flatnonzero(np.abs(scores) <= bound):
        preds[i] = model.predict(samples[i].features)
    return preds.tolist()


def evaluate(model: OnlineModel, samples: Sequence[Sample]) -> float:
    if not samples:
        raise ModelError("cannot evaluate on an empty dataset")
    preds = predict_many(model, samples)
    correct = sum(1 for p, s in zip(preds, samples) if p == s.label)
    return correct / len(samples)


def encode_dataset(samples: Iterable[Sample]) -> bytes:
    lines = []
    for s in samples:
        lines.append(",".join([str(s.label)] + [_fmt(v) for v in s.features]) + "\n")
    return "".join(lines).encode("ascii")


def decode_dataset(
    payload: bytes, dim: int | None = None, classes: Sequence[int] | None = None
) -> list[Sample]:
    try:
        text = bytes(payload).decode("ascii")
    except UnicodeDecodeError as exc:
        raise DecodeError("dataset is not ASCII text") from exc
    if text and not text.endswith("\n"):
        raise DecodeError("dataset must end with a newline")
    samples = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split(",")
        try:
            label = int(fields[0])
            s = Sample(tuple(float(v) for v in fields[1:]), label)
        except (ValueError, ModelError) as exc:
            raise DecodeError(f"line {lineno}: {exc}") from exc
        if dim is not None and s.dim != dim:
            raise DecodeError(f"line {lineno}: expected {dim} features, got {s.dim}")
        if classes is not None and label not in classes:
            raise DecodeError(f"line {lineno}: label {label} not in {list(classes)}")
        samples.append(s)
    return samples
