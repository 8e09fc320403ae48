"""Graph neural network policy/critic engine with exact reverse-mode gradients.

Architecture: a read-in MLP lifts per-node observations to F features, then
`num_layers` blocks of (graph convolution with K filter taps -> residual local
MLP), then a read-out MLP maps back to the action dimension. An optional smooth
norm-tanh squash keeps every output row strictly inside the speed limit.

Everything is double-precision numpy. Forward calls accept a single graph
(O: (N, in), S: (N, N)) or a batch (B, N, in) / (B, N, N); powers of S are
applied iteratively, never materialized.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "GnnConfig",
    "GradTape",
    "init_params",
    "param_shapes",
    "graph_conv_forward",
    "residual_mlp_forward",
    "gnn_forward",
    "gnn_backward",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_FORMAT",
]

CHECKPOINT_FORMAT = "swarmplan-ckpt-1"
_MAGIC = b"SWPLANCK"


@dataclass(frozen=True)
class GnnConfig:
    """Architecture metadata; the shapes of every learnable tensor follow from it."""

    input_dim: int
    output_dim: int = 2
    num_layers: int = 5
    taps: int = 3
    features: int = 128
    mlp_hidden: int = 256
    mlp_depth: int = 3
    nonlinearity: str = "leaky_relu"
    action_squash: bool = True
    squash_scale: float = 0.5  # u_max when used as a policy head
    use_bias: bool = True

    def __post_init__(self):
        for name in ("input_dim", "output_dim", "num_layers", "taps",
                     "features", "mlp_hidden", "mlp_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.nonlinearity not in _ACTIVATIONS:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GnnConfig":
        return cls(**d)


def _leaky_relu(x):
    return np.where(x >= 0, x, 0.01 * x)


def _leaky_relu_grad(x):
    return np.where(x >= 0, 1.0, 0.01)


_ACTIVATIONS = {
    "leaky_relu": (_leaky_relu, _leaky_relu_grad),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x >= 0).astype(np.float64)),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}


def _mlp_dims(d_in: int, hidden: int, d_out: int, depth: int) -> list[tuple[int, int]]:
    if depth == 1:
        return [(d_in, d_out)]
    dims = [(d_in, hidden)]
    dims += [(hidden, hidden)] * (depth - 2)
    dims.append((hidden, d_out))
    return dims


def param_shapes(config: GnnConfig) -> dict[str, tuple[int, ...]]:
    """Tensor name -> shape, in canonical (forward) order."""
    c = config
    shapes: dict[str, tuple[int, ...]] = {}

    def add_mlp(prefix, d_in, d_out):
        for m, (a, b) in enumerate(_mlp_dims(d_in, c.mlp_hidden, d_out, c.mlp_depth)):
            shapes[f"{prefix}.{m}.W"] = (a, b)
            if c.use_bias:
                shapes[f"{prefix}.{m}.b"] = (b,)

    add_mlp("read_in", c.input_dim, c.features)
    for layer in range(c.num_layers):
        for k in range(c.taps):
            shapes[f"layer{layer}.H{k}"] = (c.features, c.features)
        if c.use_bias:
            shapes[f"layer{layer}.conv_b"] = (c.features,)
        add_mlp(f"layer{layer}.mlp", c.features, c.features)
    add_mlp("read_out", c.features, c.output_dim)
    return shapes


def init_params(config: GnnConfig, seed) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b") or name.endswith("conv_b"):
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass
class GradTape:
    """Cached activations of one forward call; consumed by exactly one backward."""

    config: GnnConfig
    params: dict
    records: list = field(default_factory=list)
    batched_input: bool = True
    consumed: bool = False


def _check_finite(x, where: str):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite activation at {where}")


def _affine_forward(z, params, name, tape):
    W = params[f"{name}.W"]
    pre = z @ W
    if f"{name}.b" in params:
        pre = pre + params[f"{name}.b"]
    tape.records.append(("affine", name, z, pre))
    return pre


def _mlp_forward(z, params, prefix, depth, act, tape, final_activation: bool):
    for m in range(depth):
        pre = _affine_forward(z, params, f"{prefix}.{m}", tape)
        if m < depth - 1 or final_activation:
            tape.records.append(("act", pre))
            z = act(pre)
        else:
            z = pre
    return z


def _squash_coeffs(v):
    """Row-wise s = tanh(r)/r and c = d(s)/dr / r with series for small r."""
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    small = r < 1e-6
    r_safe = np.where(small, 1.0, r)
    th = np.tanh(r_safe)
    sech2 = 1.0 - th * th
    s = np.where(small, 1.0 - r * r / 3.0, th / r_safe)
    c = np.where(small, -2.0 / 3.0, (sech2 * r_safe - th) / r_safe ** 3)
    return s, c


def graph_conv_forward(Z, S, filters, bias=None, nonlinearity="identity"):
    """One graph convolution: act(sum_k S^k Z H_k + b).

    `filters` is the list of tap matrices [H_0, ..., H_{K-1}]; powers of the
    communication matrix S are applied iteratively (never materialized).
    """
    Z = np.asarray(Z, np.float64)
    S = np.asarray(S, np.float64)
    act, _ = _ACTIVATIONS[nonlinearity]
    zk = Z
    acc = zk @ np.asarray(filters[0], np.float64)
    for H in filters[1:]:
        zk = S @ zk
        acc = acc + zk @ np.asarray(H, np.float64)
    if bias is not None:
        acc = acc + np.asarray(bias, np.float64)
    return act(acc)


def residual_mlp_forward(z_prev, z_hat, weights, biases=None, nonlinearity="identity"):
    """Per-node residual update: z_prev + MLP(z_hat), activation after every layer."""
    act, _ = _ACTIVATIONS[nonlinearity]
    h = np.asarray(z_hat, np.float64)
    for m, W in enumerate(weights):
        h = h @ np.asarray(W, np.float64)
        if biases is not None and biases[m] is not None:
            h = h + np.asarray(biases[m], np.float64)
        h = act(h)
    return np.asarray(z_prev, np.float64) + h


def gnn_forward(params: dict, O, S, config: GnnConfig):
    """Run the network; returns (U, tape). Accepts single-graph or batched input."""
    O = np.asarray(O, np.float64)
    S = np.asarray(S, np.float64)
    batched = O.ndim == 3
    if not batched:
        O, S = O[None], S[None]
    if O.shape[-1] != config.input_dim:
        raise ValueError(f"input dim {O.shape[-1]} != config.input_dim {config.input_dim}")
    if S.shape[-2:] != (O.shape[1], O.shape[1]) or S.shape[0] != O.shape[0]:
        raise ValueError(f"adjacency shape {S.shape} inconsistent with input {O.shape}")

    act, _ = _ACTIVATIONS[config.nonlinearity]
    tape = GradTape(config=config, params=params, batched_input=batched)

    z = _mlp_forward(O, params, "read_in", config.mlp_depth, act, tape,
                     final_activation=True)
    _check_finite(z, "read_in")

    for layer in range(config.num_layers):
        z_in = z
        # graph convolution: sum_k S^k z H_k, powers applied iteratively
        zk = z_in
        zk_list = [zk]
        acc = zk @ params[f"layer{layer}.H0"]
        for k in range(1, config.taps):
            zk = S @ zk
            zk_list.append(zk)
            acc = acc + zk @ params[f"layer{layer}.H{k}"]
        if f"layer{layer}.conv_b" in params:
            acc = acc + params[f"layer{layer}.conv_b"]
        tape.records.append(("conv", layer, S, zk_list, acc))
        tape.records.append(("act", acc))
        z_hat = act(acc)
        h = _mlp_forward(z_hat, params, f"layer{layer}.mlp", config.mlp_depth,
                         act, tape, final_activation=True)
        z = z_in + h
        tape.records.append(("residual",))
        _check_finite(z, f"layer{layer}")

    v = _mlp_forward(z, params, "read_out", config.mlp_depth, act, tape,
                     final_activation=False)
    _check_finite(v, "read_out")

    if config.action_squash:
        s, _ = _squash_coeffs(v)
        u = config.squash_scale * s * v
        tape.records.append(("squash", v))
    else:
        u = v
    if not batched:
        u = u[0]
    return u, tape


def gnn_backward(tape: GradTape, dU):
    """Exact gradients of a scalar loss wrt every parameter and the input O.

    `dU` is the upstream gradient with the same shape as the forward output.
    Returns (param_grads, dO).
    """
    if tape.consumed:
        raise RuntimeError("gradient tape already consumed")
    tape.consumed = True

    config, params = tape.config, tape.params
    _, act_grad = _ACTIVATIONS[config.nonlinearity]
    grads = {name: np.zeros_like(p) for name, p in params.items()}

    g = np.asarray(dU, np.float64)
    if not tape.batched_input:
        g = g[None]

    residual_stack = []
    for rec in reversed(tape.records):
        kind = rec[0]
        if kind == "squash":
            v = rec[1]
            s, c = _squash_coeffs(v)
            dot = np.sum(v * g, axis=-1, keepdims=True)
            # du/dv = scale * (s I + c v v^T), with c = (ds/dr)/r
            g = config.squash_scale * (s * g + c * dot * v)
        elif kind == "act":
            pre = rec[1]
            g = g * act_grad(pre)
        elif kind == "affine":
            _, name, z_in, _ = rec
            W = params[f"{name}.W"]
            grads[f"{name}.W"] += np.einsum("bni,bnj->ij", z_in, g)
            if f"{name}.b" in params:
                grads[f"{name}.b"] += g.sum(axis=(0, 1))
            g = g @ W.T
        elif kind == "residual":
            # z = z_in + mlp(...); both branches receive g. The skip-branch
            # gradient is parked until the conv record closes this layer.
            residual_stack.append(g)
        elif kind == "conv":
            _, layer, S, zk_list, _ = rec
            St = np.swapaxes(S, -1, -2)
            K = config.taps
            for k in range(K):
                grads[f"layer{layer}.H{k}"] += np.einsum("bni,bnj->ij", zk_list[k], g)
            if f"layer{layer}.conv_b" in params:
                grads[f"layer{layer}.conv_b"] += g.sum(axis=(0, 1))
            # dZ = sum_k (S^T)^k (g H_k^T), evaluated Horner-style
            acc = g @ params[f"layer{layer}.H{K - 1}"].T
            for k in range(K - 2, -1, -1):
                acc = St @ acc + g @ params[f"layer{layer}.H{k}"].T
            g = acc + residual_stack.pop()
        else:  # pragma: no cover
            raise AssertionError(f"unknown tape record {kind}")

    dO = g if tape.batched_input else g[0]
    return grads, dO


def save_checkpoint(params: dict, config: GnnConfig, path) -> None:
    """Manifest-plus-payload checkpoint; round trips bit-exactly."""
    shapes = param_shapes(config)
    tensors = []
    offset = 0
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ValueError(f"tensor {name} has shape {params[name].shape}, expected {shape}")
        nbytes = int(np.prod(shape)) * 8
        tensors.append({"name": name, "shape": list(shape), "offset": offset})
        offset += nbytes
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "tensors": tensors,
        "payload_bytes": offset,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in shapes:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, GnnConfig]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError("not a swarmplan checkpoint")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(blob_len).decode("utf-8"))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {manifest.get('format')!r}")
        config = GnnConfig.from_dict(manifest["config"])
        expected = param_shapes(config)
        payload = fh.read(manifest["payload_bytes"])
    if len(payload) != manifest["payload_bytes"]:
        raise ValueError("truncated checkpoint payload")
    params = {}
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected or expected[name] != shape:
            raise ValueError(f"tensor {name} with shape {shape} does not match config")
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count,
                            offset=entry["offset"]).reshape(shape)
        params[name] = arr.astype(np.float64).copy()
    missing = set(expected) - set(params)
    if missing:
        raise ValueError(f"checkpoint missing tensors: {sorted(missing)}")
    return params, config
