"""Fixed-architecture feed-forward network with hand-derived gradients.

Layout per hidden layer: affine -> batch norm -> ReLU -> inverted dropout;
the head is either a single linear unit (risk/ranking scores) or a linear
layer followed by a row softmax (event-time pmfs).  Reverse-mode gradients
are exact for the composite loss + l2 * sum ||W||^2, with the l2 penalty on
weight matrices only (not biases or batch-norm parameters).

There is no autodiff here: `backward` consumes d(loss)/d(outputs) supplied
by one of the loss functions and walks the cached forward pass.

Checkpoint format (version 1, little-endian): the 8-byte magic
b"CENSRANK", a uint32 format version, a uint32 header length, a UTF-8 JSON
header {"config": {...}, "arrays": [{"name", "shape"}, ...]}, then each
array's raw float64 data in the listed order.
"""

import copy
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import TrainingDivergedError

__all__ = ["NetworkConfig", "Network", "Adam", "save_checkpoint", "load_checkpoint"]

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1  # fraction of the new batch statistic mixed into the running one
_MAGIC = b"CENSRANK"
_FORMAT_VERSION = 1


@dataclass
class NetworkConfig:
    input_dim: int
    hidden_dims: tuple = (100, 100, 100)
    head: str = "scalar_linear"  # or "softmax"
    num_outputs: int = 1  # softmax support size; must be 1 for the scalar head
    dropout_rate: float = 0.0
    l2_coefficient: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if not self.hidden_dims:
            raise ValueError("at least one hidden layer is required")
        if self.head not in ("scalar_linear", "softmax"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "softmax" and self.num_outputs < 1:
            raise ValueError("a softmax head needs num_outputs >= 1")
        if self.head == "scalar_linear" and self.num_outputs != 1:
            raise ValueError("the scalar head has exactly one output")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.l2_coefficient < 0:
            raise ValueError("l2_coefficient must be >= 0")


def _he_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Network:
    """Mutable parameter container plus forward/backward for the fixed MLP."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self._rng = np.random.default_rng(config.seed)
        self.params = {}
        self.running = {}
        fan_in = config.input_dim
        for i, width in enumerate(config.hidden_dims):
            self.params[f"W{i}"] = _he_uniform(self._rng, fan_in, width)
            self.params[f"b{i}"] = np.zeros(width)
            self.params[f"gamma{i}"] = np.ones(width)
            self.params[f"beta{i}"] = np.zeros(width)
            self.running[f"mean{i}"] = np.zeros(width)
            self.running[f"var{i}"] = np.ones(width)
            fan_in = width
        self.params["W_out"] = _he_uniform(self._rng, fan_in, config.num_outputs)
        self.params["b_out"] = np.zeros(config.num_outputs)
        self._cache = None

    # -- forward -----------------------------------------------------------

    def forward(self, batch, train, cache_for_backward=None):
        """Run the network on `batch` (rows = records).

        Train mode uses batch statistics for batch norm (batch size >= 2
        required), draws fresh dropout masks, and updates the running
        statistics.  Eval mode uses the running statistics, applies no
        dropout, and mutates nothing.  The scalar head returns shape (n,),
        the softmax head (n, num_outputs) rows summing to 1.
        """
        X = np.asarray(batch, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.config.input_dim:
            raise ValueError(
                f"batch must be (n, {self.config.input_dim}), got {X.shape}"
            )
        if train and X.shape[0] < 2:
            raise ValueError("train-mode forward needs a batch of at least 2 rows")
        if cache_for_backward is None:
            cache_for_backward = train
        p = self.params
        layers = []
        a = X
        for i in range(len(self.config.hidden_dims)):
            z = a @ p[f"W{i}"] + p[f"b{i}"]
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)  # population variance, matching the running stats
                self.running[f"mean{i}"] *= 1.0 - _BN_MOMENTUM
                self.running[f"mean{i}"] += _BN_MOMENTUM * mu
                self.running[f"var{i}"] *= 1.0 - _BN_MOMENTUM
                self.running[f"var{i}"] += _BN_MOMENTUM * var
            else:
                mu = self.running[f"mean{i}"]
                var = self.running[f"var{i}"]
            std = np.sqrt(var + _BN_EPS)
            xhat = (z - mu) / std
            bn = p[f"gamma{i}"] * xhat + p[f"beta{i}"]
            h = np.maximum(bn, 0.0)
            if train and self.config.dropout_rate > 0.0:
                keep = 1.0 - self.config.dropout_rate
                mask = (self._rng.random(h.shape) < keep) / keep
                out = h * mask
            else:
                mask = None
                out = h
            layers.append(
                {"input": a, "z": z, "xhat": xhat, "std": std, "bn": bn, "mask": mask}
            )
            a = out
        logits = a @ p["W_out"] + p["b_out"]
        if self.config.head == "softmax":
            shifted = logits - logits.max(axis=1, keepdims=True)
            expd = np.exp(shifted)
            outputs = expd / expd.sum(axis=1, keepdims=True)
        else:
            outputs = logits[:, 0]
        if cache_for_backward:
            self._cache = {"layers": layers, "head_input": a, "outputs": outputs, "train": train}
        return outputs

    # -- backward ----------------------------------------------------------

    def backward(self, grad_outputs):
        """Gradients of loss + l2 * sum ||W||^2 w.r.t. every parameter.

        `grad_outputs` is d(loss)/d(outputs) with the shape `forward`
        returned.  Requires a cached forward pass.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        cache = self._cache
        p = self.params
        grads = {}
        grad_outputs = np.asarray(grad_outputs, dtype=np.float64)

        if self.config.head == "softmax":
            pmf = cache["outputs"]
            if grad_outputs.shape != pmf.shape:
                raise ValueError("gradient shape does not match the softmax outputs")
            dot = np.sum(grad_outputs * pmf, axis=1, keepdims=True)
            dlogits = pmf * (grad_outputs - dot)
        else:
            if grad_outputs.shape != cache["outputs"].shape:
                raise ValueError("gradient shape does not match the scalar outputs")
            dlogits = grad_outputs[:, None]
        grads["W_out"] = cache["head_input"].T @ dlogits
        grads["b_out"] = dlogits.sum(axis=0)
        da = dlogits @ p["W_out"].T

        for i in reversed(range(len(self.config.hidden_dims))):
            layer = cache["layers"][i]
            if layer["mask"] is not None:
                da = da * layer["mask"]
            dbn = da * (layer["bn"] > 0.0)
            grads[f"gamma{i}"] = np.sum(dbn * layer["xhat"], axis=0)
            grads[f"beta{i}"] = dbn.sum(axis=0)
            dxhat = dbn * p[f"gamma{i}"]
            if cache["train"]:
                m = layer["z"].shape[0]
                centered = layer["z"] - layer["z"].mean(axis=0)
                inv_std = 1.0 / layer["std"]
                dvar = np.sum(dxhat * centered, axis=0) * -0.5 * inv_std**3
                dmu = -np.sum(dxhat, axis=0) * inv_std + dvar * np.mean(-2.0 * centered, axis=0)
                dz = dxhat * inv_std + dvar * 2.0 * centered / m + dmu / m
            else:
                dz = dxhat / layer["std"]
            grads[f"W{i}"] = layer["input"].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            da = dz @ p[f"W{i}"].T

        if self.config.l2_coefficient > 0.0:
            for name in grads:
                if name.startswith("W"):
                    grads[name] = grads[name] + 2.0 * self.config.l2_coefficient * p[name]
        return grads

    # -- state management ----------------------------------------------------

    def snapshot(self):
        """Deep copy of parameters and running statistics (for early stopping)."""
        return {
            "params": copy.deepcopy(self.params),
            "running": copy.deepcopy(self.running),
        }

    def restore(self, snap):
        self.params = copy.deepcopy(snap["params"])
        self.running = copy.deepcopy(snap["running"])
        self._cache = None


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if not (learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        self.learning_rate = float(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        """Update `params` in place from `grads`; raises on non-finite gradients."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDivergedError(f"non-finite gradient in {name}")
        self.step_count += 1
        t = self.step_count
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1**t)
            v_hat = self.v[name] / (1.0 - self.beta2**t)
            params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(network: Network, path):
    """Write the documented binary checkpoint (see module docstring)."""
    arrays = [(name, network.params[name]) for name in network.params]
    arrays += [(name, network.running[name]) for name in network.running]
    header = {
        "config": asdict(network.config),
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into a Network."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a censrank checkpoint")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        cfg = dict(header["config"])
        cfg["hidden_dims"] = tuple(cfg["hidden_dims"])
        network = Network(NetworkConfig(**cfg))
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape).copy()
            if entry["name"] in network.params:
                network.params[entry["name"]] = data
            elif entry["name"] in network.running:
                network.running[entry["name"]] = data
            else:
                raise ValueError(f"unknown array {entry['name']!r} in checkpoint")
    return network
