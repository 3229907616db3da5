"""Dense numerical substrate: MLPs with hand-written backprop, Adam, seeded RNG.

Everything works on float64 numpy arrays. A weight matrix is stored
``(out, in)`` and a layer computes ``x @ W.T + b`` on row-major batches.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateVectorError, InvalidArgumentError, NumericError

ACTIVATIONS = ("relu", "tanh")
DEGENERATE_NORM = 1e-12


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed on ``seed`` and optional stream ids.

    Distinct ``stream`` tuples give independent streams, so callers never
    share generator state.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple[int, ...]
    hidden_activation: str = "relu"
    # apply the hidden activation after the last layer too (encoders feeding heads)
    activate_output: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise InvalidArgumentError(f"layer_dims needs >= 2 positive entries, got {dims}")
        if self.hidden_activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {self.hidden_activation!r}")
        object.__setattr__(self, "layer_dims", dims)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return MlpParams(self.spec, list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.spec.layer_dims),
            "hidden_activation": self.spec.hidden_activation,
            "activate_output": self.spec.activate_output,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        spec = MlpSpec(tuple(d["layer_dims"]), d["hidden_activation"], d["activate_output"])
        weights = [np.asarray(w, dtype=np.float64).reshape(o, i)
                   for w, i, o in zip(d["weights"], spec.layer_dims[:-1], spec.layer_dims[1:])]
        biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
        for b, o in zip(biases, spec.layer_dims[1:]):
            if b.shape != (o,):
                raise InvalidArgumentError(f"bias shape {b.shape} does not match layer width {o}")
        return cls(spec, weights, biases)


@dataclass
class MlpGradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class MlpCache:
    inputs: list[np.ndarray]       # input to each layer
    preacts: list[np.ndarray]      # pre-activation output of each layer


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec, weights, biases)


def zeros_mlp(spec: MlpSpec) -> MlpParams:
    return MlpParams(
        spec,
        [np.zeros((o, i)) for i, o in zip(spec.layer_dims[:-1], spec.layer_dims[1:])],
        [np.zeros(o) for o in spec.layer_dims[1:]],
    )


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def _is_activated(spec: MlpSpec, layer: int) -> bool:
    return layer < spec.n_layers - 1 or spec.activate_output


def mlp_forward(params: MlpParams, inputs: np.ndarray) -> tuple[MlpCache, np.ndarray]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.layer_dims[0]:
        raise InvalidArgumentError(
            f"expected inputs of shape (n, {params.spec.layer_dims[0]}), got {x.shape}")
    cache = MlpCache([], [])
    act = params.spec.hidden_activation
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(x)
        z = x @ w.T + b
        cache.preacts.append(z)
        x = _act(act, z) if _is_activated(params.spec, k) else z
    return cache, x


def mlp_backward(params: MlpParams, cache: MlpCache, output_gradient: np.ndarray) -> MlpGradients:
    g = np.asarray(output_gradient, dtype=np.float64)
    if len(cache.preacts) != params.spec.n_layers or g.shape != cache.preacts[-1].shape:
        raise InvalidArgumentError(
            f"output gradient shape {g.shape} does not match forward output")
    act = params.spec.hidden_activation
    gw: list[np.ndarray] = [None] * params.spec.n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * params.spec.n_layers  # type: ignore[list-item]
    for k in reversed(range(params.spec.n_layers)):
        if _is_activated(params.spec, k):
            g = g * _act_grad(act, cache.preacts[k])
        gw[k] = g.T @ cache.inputs[k]
        gb[k] = g.sum(axis=0)
        g = g @ params.weights[k]
    return MlpGradients(gw, gb, g)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(arrays: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                     0, lr, beta1, beta2, eps)


def adam_step(arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns new arrays and a new state; inputs are untouched."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise InvalidArgumentError("params, grads and optimizer state differ in length")
    for a, g in zip(arrays, grads):
        if a.shape != g.shape:
            raise InvalidArgumentError(f"gradient shape {g.shape} != parameter shape {a.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_arrays, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_arrays.append(a - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_arrays, replace(state, m=new_m, v=new_v, step=t)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.sqrt(np.sum(v * v)))
    if not n >= DEGENERATE_NORM:
        raise DegenerateVectorError(f"cannot normalize vector with norm {n:.3g}")
    return v / n


def l2_normalize_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise version of :func:`l2_normalize`; also returns the row norms."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.sqrt(np.sum(m * m, axis=1))
    if np.any(~(norms >= DEGENERATE_NORM)):
        raise DegenerateVectorError("cannot normalize a row with (near-)zero norm")
    return m / norms[:, None], norms


def logsumexp(values: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgumentError("logsumexp of an empty input")
    mx = np.max(v, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(v - mx), axis=axis, keepdims=True)) + mx
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def gradient_check(loss_fn: Callable[[list[np.ndarray]], tuple[float, list[np.ndarray]]],
                   params: Sequence[np.ndarray], h: float = 1e-5, n_probes: int = 100,
                   rng: np.random.Generator | None = None, floor: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn(params) -> (loss, grads)``. Probed coordinates are drawn uniformly
    over all parameter entries. The error is ``|analytic - numeric| / max(|numeric|, floor)``.
    """
    rng = rng if rng is not None else make_rng(0)
    params = [np.array(p, dtype=np.float64) for p in params]
    _, grads = loss_fn(params)
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in rng.choice(total, size=min(n_probes, total), replace=False):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(int(flat - offsets[k]), params[k].shape)
        orig = params[k][idx]
        params[k][idx] = orig + h
        up, _ = loss_fn(params)
        params[k][idx] = orig - h
        down, _ = loss_fn(params)
        params[k][idx] = orig
        numeric = (up - down) / (2.0 * h)
        analytic = float(grads[k][idx])
        worst = max(worst, abs(analytic - numeric) / max(abs(numeric), floor))
    return worst
