"""Small numpy MLP, local SGD, and the synthetic drifting dataset.

Parameter layout in ``ModelParams.values``: every weight matrix in layer
order (each ``(fan_in, fan_out)``, row-major), followed by every bias vector
in layer order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    def __init__(self, layer: int, what: str) -> None:
        super().__init__(f"non-finite {what} in layer {layer}")
        self.layer = layer


@dataclass(frozen=True, eq=False)
class ModelParams:
    layer_sizes: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        expected = param_count(self.layer_sizes)
        if self.values.shape != (expected,):
            raise ValueError(f"expected {expected} values for {list(self.layer_sizes)}, got {self.values.shape}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.layer_sizes == other.layer_sizes and np.array_equal(self.values, other.values)

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(self.layer_sizes, values)

    def unpack(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Views of the weight matrices and bias vectors."""
        sizes = self.layer_sizes
        weights, biases = [], []
        pos = 0
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            weights.append(self.values[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out))
            pos += fan_in * fan_out
        for fan_out in sizes[1:]:
            biases.append(self.values[pos : pos + fan_out])
            pos += fan_out
        return weights, biases


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes, layer_sizes[1:]))


def init_model(layer_sizes: Sequence[int], seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
    chunks.append(np.zeros(sum(sizes[1:])))
    return ModelParams(tuple(sizes), np.concatenate(chunks))


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or len(x) != len(y):
            raise ValueError(f"features {x.shape} and labels {y.shape} do not line up")
        if len(y) < 1:
            raise ValueError("dataset must have at least one row")
        if y.min() < 0:
            raise ValueError("labels must be non-negative class indices")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def m(self) -> int:
        return len(self.labels)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.features, other.features) and np.array_equal(self.labels, other.labels)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(params: ModelParams, x: np.ndarray) -> None:
    if x.shape[-1] != params.layer_sizes[0]:
        raise ValueError(f"input has {x.shape[-1]} features, model expects {params.layer_sizes[0]}")


def logits(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_input(params, x)
    weights, biases = params.unpack()
    h = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i < len(weights) - 1:
            h = np.maximum(h, 0.0)
    return h


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector or a batch of rows."""
    return _softmax(logits(params, x))


def loss_and_grad(params: ModelParams, batch: Dataset) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over ``batch`` and its gradient w.r.t. ``params.values``.

    Overflow is reported as :class:`NonFiniteError` naming the layer, not as a
    numpy warning.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _loss_and_grad(params, batch)


def _loss_and_grad(params: ModelParams, batch: Dataset) -> tuple[float, np.ndarray]:
    x, y = batch.features, batch.labels
    _check_input(params, x)
    weights, biases = params.unpack()
    n_out = params.layer_sizes[-1]
    if y.max() >= n_out:
        raise ValueError(f"label {y.max()} out of range for {n_out} classes")

    acts = [x]
    pre = []
    h = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(i, "pre-activation")
        pre.append(z)
        h = np.maximum(z, 0.0) if i < len(weights) - 1 else z
        acts.append(h)

    z_out = pre[-1]
    shifted = z_out - z_out.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(y))
    loss = float(np.mean(log_norm - shifted[rows, y]))

    m = len(y)
    delta = np.exp(shifted - log_norm[:, None])
    delta[rows, y] -= 1.0
    delta /= m

    grad_w: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    for i in range(len(weights) - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if not (np.all(np.isfinite(grad_w[i])) and np.all(np.isfinite(grad_b[i]))):
            raise NonFiniteError(i, "gradient")
        if i > 0:
            delta = (delta @ weights[i].T) * (pre[i - 1] > 0)
    grad = np.concatenate([g.ravel() for g in grad_w] + grad_b)
    return loss, grad


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    local_epochs: int = 1
    batch_size: int | None = None  # None trains on the full local dataset
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def local_train(global_params: ModelParams, data: Dataset, cfg: TrainConfig) -> ModelParams:
    """Mini-batch SGD starting from ``global_params``.

    A full batch with one epoch is exactly ``w - lr * grad(w)``; rows are only
    shuffled when there is more than one batch per epoch.
    """
    m = data.m
    bs = m if cfg.batch_size is None else cfg.batch_size
    if bs > m:
        raise ValueError(f"batch_size {bs} exceeds dataset size {m}")
    rng = np.random.default_rng(cfg.seed)
    w = global_params.values.copy()
    for _ in range(cfg.local_epochs):
        if bs >= m:
            _, g = loss_and_grad(global_params.with_values(w), data)
            w = w - cfg.learning_rate * g
            continue
        order = rng.permutation(m)
        for start in range(0, m, bs):
            _, g = loss_and_grad(global_params.with_values(w), data.subset(order[start : start + bs]))
            w = w - cfg.learning_rate * g
    return global_params.with_values(w)


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(forward(params, x), axis=-1)


def evaluate(params: ModelParams, data: Dataset) -> float:
    """Accuracy of argmax predictions on ``data``."""
    return float(np.mean(predict(params, data.features) == data.labels))


@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    """Gaussian classes whose means translate a little every round.

    ``means`` and ``directions`` are ``(n_classes, d_in)``; directions are unit
    vectors. Features for class ``c`` at round ``r`` are drawn from
    ``N(means[c] + r * drift_rate * directions[c], noise_scale**2 * I)``.
    """

    means: np.ndarray
    directions: np.ndarray
    noise_scale: float = 1.0
    drift_rate: float = 0.0
    class_mix: tuple[float, ...] = ()
    samples: int = 200

    def __post_init__(self) -> None:
        means = np.asarray(self.means, dtype=np.float64)
        dirs = np.asarray(self.directions, dtype=np.float64)
        if means.ndim != 2 or dirs.shape != means.shape:
            raise ValueError("means and directions must both be (n_classes, d_in)")
        mix = tuple(float(p) for p in self.class_mix) or (1.0 / len(means),) * len(means)
        if len(mix) != len(means):
            raise ValueError(f"class_mix has {len(mix)} entries for {len(means)} classes")
        if min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError("class_mix must be non-negative and sum to 1")
        if self.drift_rate < 0:
            raise ValueError("drift_rate must be >= 0")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "class_mix", mix)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def d_in(self) -> int:
        return self.means.shape[1]

    def replace_mix(self, class_mix: Sequence[float], samples: int | None = None) -> "SyntheticSpec":
        return SyntheticSpec(
            self.means,
            self.directions,
            self.noise_scale,
            self.drift_rate,
            tuple(class_mix),
            self.samples if samples is None else samples,
        )


def make_class_geometry(n_classes: int, d_in: int, separation: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random class means (norm ``separation``) and unit drift directions."""
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(n_classes, d_in))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    dirs = rng.normal(size=(n_classes, d_in))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return means, dirs


def generate_synthetic(spec: SyntheticSpec, round: int, seed: int) -> Dataset:
    """Draw ``spec.samples`` rows for ``round``; deterministic per (seed, round).

    The same seed yields the same underlying draw at every round, translated by
    the round's drift, so ``drift_rate == 0`` gives identical datasets.
    """
    if round < 0:
        raise ValueError("round must be >= 0")
    rng = np.random.default_rng(seed)
    labels = rng.choice(spec.n_classes, size=spec.samples, p=np.asarray(spec.class_mix))
    centers = spec.means + round * spec.drift_rate * spec.directions
    noise = rng.normal(size=(spec.samples, spec.d_in)) * spec.noise_scale
    return Dataset(centers[labels] + noise, labels)
