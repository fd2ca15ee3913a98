"""Small dense numeric kernel shared by the two neural feature models."""

import json
import struct
from dataclasses import dataclass

import numpy as np

INIT_SCALE = 0.05
MAGIC = b"NNGEC-PARAMS\x01\n"


@dataclass
class SGDConfig:
    learning_rate: float = 0.1
    mini_batch_size: int = 100
    epochs: int = 1
    average_gradient: bool = True

    def __post_init__(self):
        if self.learning_rate < 0 or self.mini_batch_size < 1 or self.epochs < 0:
            raise ValueError(f"invalid SGD settings: {self}")


class DivergenceError(RuntimeError):
    pass


def affine(W, x, b):
    W, x, b = np.asarray(W), np.asarray(x), np.asarray(b)
    if W.ndim != 2 or W.shape[1] != x.shape[-1] or W.shape[0] != b.shape[-1]:
        raise ValueError(f"shape mismatch: W {W.shape}, x {x.shape}, b {b.shape}")
    return x @ W.T + b


def sigmoid(v):
    v = np.asarray(v, dtype=np.float64)
    # exp of a non-positive argument only, so nothing overflows
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_sigmoid(v):
    v = np.asarray(v, dtype=np.float64)
    return np.minimum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))


def relu(v):
    return np.maximum(np.asarray(v, dtype=np.float64), 0.0)


ACTIVATIONS = {"sigmoid": sigmoid, "tanh": np.tanh, "relu": relu}


def activate(kind, v):
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation: {kind}") from None
    return fn(np.asarray(v, dtype=np.float64))


def init_uniform(rng, shape, scale=INIT_SCALE):
    return rng.uniform(-scale, scale, size=shape)


def grad_check(loss_and_grad, params, epsilon=1e-6, samples=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad(params)`` returns ``(loss, grads)`` with ``grads`` keyed
    like ``params``.  Arrays in ``params`` are perturbed in place and
    restored.  With ``samples`` set, that many coordinates per array are
    checked; otherwise every coordinate is.
    """
    loss, grads = loss_and_grad(params)
    if not np.isfinite(loss):
        raise DivergenceError("loss is not finite at the given parameters")
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        g = np.asarray(grads[name]).reshape(-1)
        if samples is None or samples >= flat.size:
            coords = range(flat.size)
        else:
            coords = rng.choice(flat.size, size=samples, replace=False)
        for c in coords:
            old = flat[c]
            flat[c] = old + epsilon
            up = loss_and_grad(params)[0]
            flat[c] = old - epsilon
            down = loss_and_grad(params)[0]
            flat[c] = old
            numeric = (up - down) / (2 * epsilon)
            err = abs(g[c] - numeric) / max(abs(g[c]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def save_params(path, params, metadata=None):
    """Write named float64 arrays behind a JSON header.

    Layout: magic line, 8-byte little-endian header length, UTF-8 JSON header
    (metadata plus name/shape of each array in order), then each array's
    little-endian float64 payload in row-major order.
    """
    names = list(params)
    header = {
        "metadata": metadata or {},
        "arrays": [{"name": n, "shape": list(np.shape(params[n]))} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_params(path):
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a parameter file")
        (size,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(size).decode("utf-8"))
        params = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * count), dtype="<f8").astype(np.float64)
            params[spec["name"]] = data.reshape(shape)
    return params, header["metadata"]
