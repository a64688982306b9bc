"""Feedforward networks trained from scratch, with exact Jacobians.

The networks here are deliberately small: fully connected layers with tanh
activations, optional batch normalization and dropout on the hidden layers,
and a linear output layer. Training runs Adam on the mean squared error with
a step-decay learning-rate schedule. Everything is driven by a single seeded
generator so that weight initialization, shuffling and dropout masks are
reproducible bit for bit.

Inference (``mlp_forward``, ``mlp_jacobian``) always runs the deterministic
path: batch norm uses the running statistics frozen at the end of training
and dropout is disabled. Batch statistics and dropout masks only exist
inside ``mlp_train``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import IO, Sequence

import numpy as np

from .linalg import Matrix, NdkfError, Vector

ACTIVATIONS = ("tanh",)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

PARAMS_MAGIC = "NDKF-MLP v1"


class DimensionMismatch(NdkfError):
    """Input or layer shapes do not chain consistently."""


class EmptyDataset(NdkfError):
    """Training requires at least one sample."""


class DivergedLoss(NdkfError):
    """Training loss became non-finite."""


class MalformedFile(NdkfError):
    """Parameter file is truncated, corrupt, or not ours."""


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one feedforward network."""

    input_dim: int
    hidden_layers: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"
    use_batch_norm: bool = False
    dropout_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError("hidden layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, self.output_dim)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float = 1e-3
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 1000
    batch_size: int = 0  # 0 means full batch
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ValueError("lr_decay_factor must be in (0, 1]")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0")


@dataclass(frozen=True)
class Dataset:
    """Paired training inputs and targets, stored row-wise."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.atleast_2d(np.asarray(self.inputs, dtype=float)))
        object.__setattr__(self, "targets", np.atleast_2d(np.asarray(self.targets, dtype=float)))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must have equal lengths")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class MlpParams:
    """All weights, biases and normalization state of one network.

    ``weights[i]`` has shape (fan_out, fan_in); batch-norm lists are empty
    unless the spec enables batch norm, in which case they hold one entry
    per hidden layer. ``mode`` is "train" only while ``mlp_train`` owns the
    object; everything handed out is in "eval" mode and treated as
    immutable from then on.
    """

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bn_mean: list[np.ndarray] = field(default_factory=list)
    bn_var: list[np.ndarray] = field(default_factory=list)
    bn_scale: list[np.ndarray] = field(default_factory=list)
    bn_shift: list[np.ndarray] = field(default_factory=list)
    mode: str = "eval"

    def validate(self) -> None:
        dims = self.spec.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise DimensionMismatch("wrong number of layers")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise DimensionMismatch(
                    f"layer {i}: expected {(dims[i + 1], dims[i])}, got {w.shape}"
                )
        n_bn = len(self.spec.hidden_layers) if self.spec.use_batch_norm else 0
        for name, lst in (
            ("bn_mean", self.bn_mean),
            ("bn_var", self.bn_var),
            ("bn_scale", self.bn_scale),
            ("bn_shift", self.bn_shift),
        ):
            if len(lst) != n_bn:
                raise DimensionMismatch(f"{name}: expected {n_bn} entries, got {len(lst)}")
        for v in self.bn_var:
            if np.any(v <= 0.0):
                raise DimensionMismatch("running variances must be > 0")


def init_params(spec: MlpSpec, seed: int = 0) -> MlpParams:
    """Fresh parameters: Glorot-uniform weights, zero biases, unit BN state."""
    gen = np.random.Generator(np.random.PCG64(seed))
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(gen.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    params = MlpParams(spec=spec, weights=weights, biases=biases)
    if spec.use_batch_norm:
        for h in spec.hidden_layers:
            params.bn_mean.append(np.zeros(h))
            params.bn_var.append(np.ones(h))
            params.bn_scale.append(np.ones(h))
            params.bn_shift.append(np.zeros(h))
    params.validate()
    return params


def _forward_eval_batch(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass over a batch (rows are samples)."""
    a = x
    n_hidden = len(params.spec.hidden_layers)
    for i in range(n_hidden):
        z = a @ params.weights[i].T + params.biases[i]
        if params.spec.use_batch_norm:
            z = (z - params.bn_mean[i]) / np.sqrt(params.bn_var[i] + BN_EPS)
            z = params.bn_scale[i] * z + params.bn_shift[i]
        a = np.tanh(z)
    return a @ params.weights[-1].T + params.biases[-1]


def mlp_forward(params: MlpParams, input: Vector) -> Vector:
    """Evaluate the network on one input vector (inference path)."""
    x = np.asarray(input, dtype=float).reshape(-1)
    if x.shape[0] != params.spec.input_dim:
        raise DimensionMismatch(
            f"input dim {x.shape[0]} != expected {params.spec.input_dim}"
        )
    return _forward_eval_batch(params, x[None, :])[0]


def mlp_jacobian(params: MlpParams, input: Vector, method: str = "analytic") -> Matrix:
    """Jacobian of the network output w.r.t. its input.

    ``analytic`` multiplies out the layer chain exactly; ``finite_diff``
    uses central differences with step 1e-5 per coordinate (two forward
    passes per input dimension). Requires eval mode.
    """
    if params.mode != "eval":
        raise ValueError("jacobian requires params in eval mode")
    x = np.asarray(input, dtype=float).reshape(-1)
    if x.shape[0] != params.spec.input_dim:
        raise DimensionMismatch(
            f"input dim {x.shape[0]} != expected {params.spec.input_dim}"
        )
    if method == "finite_diff":
        h = 1e-5
        cols = []
        for i in range(x.shape[0]):
            step = np.zeros_like(x)
            step[i] = h
            cols.append((mlp_forward(params, x + step) - mlp_forward(params, x - step)) / (2 * h))
        return np.column_stack(cols)
    if method != "analytic":
        raise ValueError(f"unknown jacobian method {method!r}")

    spec = params.spec
    a = x
    jac = np.eye(spec.input_dim)
    for i in range(len(spec.hidden_layers)):
        z = params.weights[i] @ a + params.biases[i]
        scale = 1.0
        if spec.use_batch_norm:
            scale = params.bn_scale[i] / np.sqrt(params.bn_var[i] + BN_EPS)
            z = scale * (z - params.bn_mean[i]) + params.bn_shift[i]
        t = np.tanh(z)
        diag = (1.0 - t * t) * scale
        jac = diag[:, None] * (params.weights[i] @ jac)
        a = t
    return params.weights[-1] @ jac


class AdamState:
    """Adam moment accumulators over a list of parameter arrays."""

    def __init__(self, shapes: Sequence[tuple[int, ...]]):
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> None:
        """Update ``arrays`` in place by one Adam step."""
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for arr, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def _trainable_arrays(params: MlpParams) -> list[np.ndarray]:
    arrays: list[np.ndarray] = []
    for w, b in zip(params.weights, params.biases):
        arrays.extend((w, b))
    for g, s in zip(params.bn_scale, params.bn_shift):
        arrays.extend((g, s))
    return arrays


def _forward_train(params: MlpParams, x: np.ndarray, gen: np.random.Generator):
    """Training forward pass with batch statistics and dropout; returns caches."""
    spec = params.spec
    a = x
    caches = []
    for i in range(len(spec.hidden_layers)):
        z = a @ params.weights[i].T + params.biases[i]
        cache: dict = {"a_prev": a}
        if spec.use_batch_norm:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            z_hat = (z - mu) * inv_std
            z = params.bn_scale[i] * z_hat + params.bn_shift[i]
            params.bn_mean[i] = (1.0 - BN_MOMENTUM) * params.bn_mean[i] + BN_MOMENTUM * mu
            params.bn_var[i] = (1.0 - BN_MOMENTUM) * params.bn_var[i] + BN_MOMENTUM * var
            cache["z_hat"] = z_hat
            cache["inv_std"] = inv_std
        act = np.tanh(z)
        cache["act"] = act
        if spec.dropout_rate > 0.0:
            keep = 1.0 - spec.dropout_rate
            mask = (gen.random(act.shape) < keep) / keep
            act = act * mask
            cache["mask"] = mask
        caches.append(cache)
        a = act
    y = a @ params.weights[-1].T + params.biases[-1]
    return y, a, caches


def _backward_train(params: MlpParams, x, y_err, a_last, caches):
    """Gradients matching the layout of ``_trainable_arrays``."""
    spec = params.spec
    n_hidden = len(spec.hidden_layers)
    grads_w = [None] * (n_hidden + 1)
    grads_b = [None] * (n_hidden + 1)
    grads_g = [None] * n_hidden
    grads_s = [None] * n_hidden

    grads_w[-1] = y_err.T @ a_last
    grads_b[-1] = y_err.sum(axis=0)
    da = y_err @ params.weights[-1]

    for i in reversed(range(n_hidden)):
        cache = caches[i]
        if "mask" in cache:
            da = da * cache["mask"]
        act = cache["act"]
        dz = da * (1.0 - act * act)
        if spec.use_batch_norm:
            z_hat, inv_std = cache["z_hat"], cache["inv_std"]
            grads_g[i] = (dz * z_hat).sum(axis=0)
            grads_s[i] = dz.sum(axis=0)
            dz = (params.bn_scale[i] * inv_std) * (
                dz - dz.mean(axis=0) - z_hat * (dz * z_hat).mean(axis=0)
            )
        a_prev = cache["a_prev"]
        grads_w[i] = dz.T @ a_prev
        grads_b[i] = dz.sum(axis=0)
        da = dz @ params.weights[i]

    grads: list[np.ndarray] = []
    for gw, gb in zip(grads_w, grads_b):
        grads.extend((gw, gb))
    for gg, gs in zip(grads_g, grads_s):
        grads.extend((gg, gs))
    return grads


def mean_squared_loss(params: MlpParams, data: Dataset) -> float:
    """Mean squared error of the inference-path predictions over a dataset."""
    pred = _forward_eval_batch(params, data.inputs)
    return float(np.mean((pred - data.targets) ** 2))


def mlp_train(
    spec: MlpSpec,
    data: Dataset,
    cfg: TrainConfig,
    loss_history: list[float] | None = None,
) -> MlpParams:
    """Fit a network to ``data`` and return it in eval mode.

    Deterministic given ``cfg.seed``: initialization, shuffling and dropout
    masks all come from one seeded generator. When ``loss_history`` is given,
    the per-epoch training loss is appended to it.
    """
    if len(data) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if data.inputs.shape[1] != spec.input_dim or data.targets.shape[1] != spec.output_dim:
        raise DimensionMismatch(
            f"dataset shapes {data.inputs.shape[1]}->{data.targets.shape[1]} do not "
            f"match spec {spec.input_dim}->{spec.output_dim}"
        )

    gen = np.random.Generator(np.random.PCG64(cfg.seed))
    params = init_params(spec, seed=int(gen.integers(2**63)))
    params.mode = "train"
    adam = AdamState([a.shape for a in _trainable_arrays(params)])

    n = len(data)
    batch = cfg.batch_size if 0 < cfg.batch_size < n else n
    lr = cfg.learning_rate

    for epoch in range(1, cfg.epochs + 1):
        order = gen.permutation(n) if batch < n else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            xb, tb = data.inputs[idx], data.targets[idx]
            y, a_last, caches = _forward_train(params, xb, gen)
            err = y - tb
            batch_loss = float(np.mean(err**2))
            if not math.isfinite(batch_loss):
                raise DivergedLoss(f"loss became non-finite at epoch {epoch}")
            epoch_loss += batch_loss * len(idx)
            y_err = 2.0 * err / err.size
            grads = _backward_train(params, xb, y_err, a_last, caches)
            adam.step(_trainable_arrays(params), grads, lr)
        if loss_history is not None:
            loss_history.append(epoch_loss / n)
        if epoch % cfg.lr_decay_every == 0:
            lr *= cfg.lr_decay_factor

    params.mode = "eval"
    params.validate()
    return params


def _format(v: float) -> str:
    return f"{v:.17g}"


def _write_block(fh: IO[str], values: np.ndarray) -> None:
    for row in np.atleast_2d(values):
        fh.write(" ".join(_format(v) for v in row) + "\n")


def save_params(params: MlpParams, sink) -> None:
    """Serialize parameters to a text file or writable file object.

    Format: magic header, one ``spec`` line, then per-layer blocks
    ``layer <i> <rows> <cols>`` holding the weight rows followed by one
    bias row, and ``bn <i> <dim>`` blocks holding running mean, running
    variance, scale and shift rows. Values carry 17 significant digits so
    the round trip is exact.
    """
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        with open(sink, "w", encoding="ascii") as fh:
            save_params(params, fh)
        return
    fh = sink
    spec = params.spec
    fh.write(PARAMS_MAGIC + "\n")
    hidden = " ".join(str(h) for h in spec.hidden_layers)
    fh.write(
        f"spec {spec.input_dim} {spec.output_dim} {len(spec.hidden_layers)}"
        f"{' ' + hidden if hidden else ''} {spec.activation} "
        f"{int(spec.use_batch_norm)} {_format(spec.dropout_rate)}\n"
    )
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        fh.write(f"layer {i} {w.shape[0]} {w.shape[1]}\n")
        _write_block(fh, w)
        _write_block(fh, b)
    for i in range(len(params.bn_mean)):
        fh.write(f"bn {i} {params.bn_mean[i].shape[0]}\n")
        for arr in (params.bn_mean[i], params.bn_var[i], params.bn_scale[i], params.bn_shift[i]):
            _write_block(fh, arr)
    fh.write("end\n")


def _read_row(lines, n: int, what: str) -> np.ndarray:
    try:
        line = next(lines)
    except StopIteration:
        raise MalformedFile(f"file truncated while reading {what}") from None
    try:
        row = np.array([float(tok) for tok in line.split()])
    except ValueError as exc:
        raise MalformedFile(f"bad number in {what}: {exc}") from exc
    if row.shape[0] != n:
        raise MalformedFile(f"{what}: expected {n} values, got {row.shape[0]}")
    if not np.all(np.isfinite(row)):
        raise MalformedFile(f"{what}: non-finite value")
    return row


def load_params(source) -> MlpParams:
    """Inverse of ``save_params``. Raises ``MalformedFile`` on bad input."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="ascii") as fh:
            return load_params(fh)
    lines = iter(source.read().splitlines())
    try:
        magic = next(lines)
    except StopIteration:
        raise MalformedFile("empty file") from None
    if magic != PARAMS_MAGIC:
        raise MalformedFile(f"bad magic {magic!r}")
    try:
        spec_line = next(lines)
    except StopIteration:
        raise MalformedFile("missing spec line") from None
    tok = spec_line.split()
    if len(tok) < 4 or tok[0] != "spec":
        raise MalformedFile("bad spec line")
    try:
        input_dim, output_dim, n_hidden = int(tok[1]), int(tok[2]), int(tok[3])
        hidden = tuple(int(t) for t in tok[4 : 4 + n_hidden])
        activation = tok[4 + n_hidden]
        use_bn = bool(int(tok[5 + n_hidden]))
        dropout = float(tok[6 + n_hidden])
        spec = MlpSpec(input_dim, hidden, output_dim, activation, use_bn, dropout)
    except (IndexError, ValueError) as exc:
        raise MalformedFile(f"bad spec line: {exc}") from exc

    params = MlpParams(spec=spec, weights=[], biases=[])
    n_layers = len(spec.layer_dims) - 1
    for i in range(n_layers):
        header = _read_row_header(lines, f"layer {i}")
        if header[:2] != ("layer", str(i)):
            raise MalformedFile(f"expected 'layer {i}' block, got {' '.join(header)!r}")
        rows, cols = int(header[2]), int(header[3])
        w = np.vstack([_read_row(lines, cols, f"layer {i} weights") for _ in range(rows)])
        b = _read_row(lines, rows, f"layer {i} bias")
        params.weights.append(w)
        params.biases.append(b)
    if spec.use_batch_norm:
        for i in range(len(spec.hidden_layers)):
            header = _read_row_header(lines, f"bn {i}")
            if header[:2] != ("bn", str(i)):
                raise MalformedFile(f"expected 'bn {i}' block, got {' '.join(header)!r}")
            dim = int(header[2])
            params.bn_mean.append(_read_row(lines, dim, f"bn {i} mean"))
            params.bn_var.append(_read_row(lines, dim, f"bn {i} var"))
            params.bn_scale.append(_read_row(lines, dim, f"bn {i} scale"))
            params.bn_shift.append(_read_row(lines, dim, f"bn {i} shift"))
    try:
        if next(lines) != "end":
            raise MalformedFile("missing end marker")
    except StopIteration:
        raise MalformedFile("file truncated before end marker") from None
    try:
        params.validate()
    except DimensionMismatch as exc:
        raise MalformedFile(str(exc)) from exc
    return params


def _read_row_header(lines, what: str) -> tuple[str, ...]:
    try:
        return tuple(next(lines).split())
    except StopIteration:
        raise MalformedFile(f"file truncated before {what} header") from None
