"""Fully-connected networks with second-order input jets.

A network maps ``(x1, x2, t)`` to a handful of named fields. Alongside the
values, :func:`forward_jet` carries first derivatives in ``(x1, x2, t)`` and
the spatial Hessian ``(x1x1, x1x2, x2x2)`` through every layer with explicit
recurrences. Parameter gradients of any scalar built from those jets come from
reverse accumulation (``jax.value_and_grad``) over the same recurrences.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
import numpy as np  # noqa: E402

INPUT_DIM = 3
OUTPUT_NAMES = ("u1", "u2", "phi", "mu", "P")
ACTIVATIONS = ("tanh", "identity")

# second-derivative channels: (j, k) index pairs into the spatial inputs
D2_PAIRS = ((0, 0), (0, 1), (1, 1))


class Jet2(NamedTuple):
    """Value, gradient in (x1, x2, t) and spatial Hessian (x1x1, x1x2, x2x2).

    Arrays carry a leading batch axis when evaluated on several points:
    ``value`` is ``(N,)``, ``d1`` and ``d2`` are ``(N, 3)``.
    """

    value: jnp.ndarray
    d1: jnp.ndarray
    d2: jnp.ndarray


@dataclass(frozen=True)
class NetworkSpec:
    layer_widths: tuple[int, ...] = (3, 32, 32, 5)
    output_names: tuple[str, ...] = OUTPUT_NAMES
    activation: str = "tanh"
    clamp_phi: bool = False
    input_dim: int = INPUT_DIM

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        object.__setattr__(self, "output_names", tuple(self.output_names))
        if self.input_dim != INPUT_DIM:
            raise ValueError(f"input_dim must be {INPUT_DIM}, got {self.input_dim}")
        if len(self.layer_widths) < 2:
            raise ValueError("layer_widths needs the input width and at least one layer")
        if self.layer_widths[0] != self.input_dim:
            raise ValueError("layer_widths[0] must equal input_dim")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")
        if self.layer_widths[-1] != len(self.output_names):
            raise ValueError(
                f"final width {self.layer_widths[-1]} != {len(self.output_names)} output names"
            )
        unknown = set(self.output_names) - set(OUTPUT_NAMES)
        if unknown or len(set(self.output_names)) != len(self.output_names):
            raise ValueError(f"bad output names {self.output_names}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def shapes(self) -> list[tuple[int, int]]:
        """(rows, cols) of each weight matrix, in layer order."""
        w = self.layer_widths
        return [(w[i + 1], w[i]) for i in range(len(w) - 1)]

    @property
    def n_params(self) -> int:
        return sum(r * c + r for r, c in self.shapes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_widths"] = list(self.layer_widths)
        d["output_names"] = list(self.output_names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


@dataclass
class ParamVector:
    """Flat float64 storage with per-layer ``(A_i, b_i)`` offsets.

    Layout per layer: ``A_i`` row-major, then ``b_i``.
    """

    values: np.ndarray
    layout: list[tuple[int, int, int, int]] = field(default_factory=list)

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "ParamVector":
        return cls(np.zeros(spec.n_params), param_layout(spec))

    def unpack(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return unpack(self.layout, self.values)

    @classmethod
    def pack(cls, spec: NetworkSpec, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> "ParamVector":
        layout = param_layout(spec)
        values = np.concatenate([np.concatenate([np.ravel(A), np.ravel(b)]) for A, b in layers])
        if values.size != spec.n_params:
            raise ValueError("layer arrays do not match spec")
        return cls(values.astype(np.float64), layout)


def param_layout(spec: NetworkSpec) -> list[tuple[int, int, int, int]]:
    """``(A_offset, rows, cols, b_offset)`` for each layer."""
    out, off = [], 0
    for rows, cols in spec.shapes:
        out.append((off, rows, cols, off + rows * cols))
        off += rows * cols + rows
    return out


def unpack(layout, theta):
    """Split a flat vector into ``[(A_i, b_i), ...]``; works for numpy and jax arrays."""
    layers = []
    for a_off, rows, cols, b_off in layout:
        A = theta[a_off:a_off + rows * cols].reshape(rows, cols)
        b = theta[b_off:b_off + rows]
        layers.append((A, b))
    return layers


def init_params(spec: NetworkSpec, seed: int) -> ParamVector:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for rows, cols in spec.shapes:
        limit = math.sqrt(6.0 / (rows + cols))
        layers.append((rng.uniform(-limit, limit, size=(rows, cols)), np.zeros(rows)))
    return ParamVector.pack(spec, layers)


def _as_theta(spec: NetworkSpec, theta) -> jnp.ndarray:
    values = theta.values if isinstance(theta, ParamVector) else theta
    if values.shape != (spec.n_params,):
        raise ValueError(f"parameter vector has shape {values.shape}, spec needs ({spec.n_params},)")
    return values


def _act(name: str, z):
    """sigma, sigma', sigma'' evaluated at z."""
    if name == "identity":
        return z, jnp.ones_like(z), jnp.zeros_like(z)
    s = jnp.tanh(z)
    s1 = 1.0 - s * s
    return s, s1, -2.0 * s * s1


def _jet_act(name: str, value, d1, d2):
    s, s1, s2 = _act(name, value)
    # d1: (N, 3, w), d2: (N, 3, w)
    new_d1 = s1[:, None, :] * d1
    cross = jnp.stack([d1[:, j, :] * d1[:, k, :] for j, k in D2_PAIRS], axis=1)
    new_d2 = s2[:, None, :] * cross + s1[:, None, :] * d2
    return s, new_d1, new_d2


def forward_jet(spec: NetworkSpec, theta, points) -> dict[str, Jet2]:
    """Evaluate all outputs and their input derivatives at ``points`` of shape (N, 3).

    A single point of shape (3,) is accepted; the returned jets then have no
    batch axis.
    """
    theta = _as_theta(spec, theta)
    pts = jnp.asarray(points, dtype=jnp.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.shape[-1] != INPUT_DIM:
        raise ValueError(f"points must have {INPUT_DIM} columns")
    n = pts.shape[0]

    value = pts
    d1 = jnp.broadcast_to(jnp.eye(INPUT_DIM), (n, INPUT_DIM, INPUT_DIM))
    d2 = jnp.zeros((n, len(D2_PAIRS), INPUT_DIM))
    layers = unpack(param_layout(spec), theta)
    for i, (A, b) in enumerate(layers):
        value = value @ A.T + b
        d1 = d1 @ A.T
        d2 = d2 @ A.T
        if i < len(layers) - 1:
            value, d1, d2 = _jet_act(spec.activation, value, d1, d2)

    jets = {}
    for k, name in enumerate(spec.output_names):
        jv, jd1, jd2 = value[:, k], d1[:, :, k], d2[:, :, k]
        if name == "phi" and spec.clamp_phi:
            out = _jet_act("tanh", jv[:, None], jd1[:, :, None], jd2[:, :, None])
            jv, jd1, jd2 = out[0][:, 0], out[1][:, :, 0], out[2][:, :, 0]
        if single:
            jv, jd1, jd2 = jv[0], jd1[0], jd2[0]
        jets[name] = Jet2(jv, jd1, jd2)
    return jets


def forward(spec: NetworkSpec, theta, points) -> np.ndarray:
    """Plain numpy forward pass, values only, shape (N, n_outputs).

    Independent of the jet code path; used as the finite-difference oracle.
    """
    values = np.asarray(theta.values if isinstance(theta, ParamVector) else theta)
    a = np.atleast_2d(np.asarray(points, dtype=np.float64))
    layers = unpack(param_layout(spec), values)
    for i, (A, b) in enumerate(layers):
        a = a @ A.T + b
        if i < len(layers) - 1 and spec.activation == "tanh":
            a = np.tanh(a)
    if spec.clamp_phi and "phi" in spec.output_names:
        k = spec.output_names.index("phi")
        a = a.copy()
        a[:, k] = np.tanh(a[:, k])
    return a


class DivergenceError(RuntimeError):
    """Loss or gradient became non-finite."""


def loss_grad(spec: NetworkSpec, theta, loss_eval: Callable) -> tuple[float, np.ndarray]:
    """Value and parameter gradient of ``loss_eval(theta)``.

    ``loss_eval`` must be written with ``jax.numpy`` (for instance a closure
    over a frozen batch built from :func:`forward_jet`).
    """
    theta = jnp.asarray(_as_theta(spec, theta))
    value, grad = jax.value_and_grad(loss_eval)(theta)
    value = float(value)
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}")
    return value, np.asarray(grad)


def save_checkpoint(path, spec: NetworkSpec, theta, *, seed: int, step: int, loss: float, **extra) -> Path:
    """Write ``<path>.json`` header and ``<path>.bin`` little-endian float64 parameters."""
    path = Path(path)
    values = np.asarray(theta.values if isinstance(theta, ParamVector) else theta, dtype="<f8")
    bin_path = path.with_suffix(".bin")
    bin_path.write_bytes(values.tobytes())
    header = {"spec": spec.to_dict(), "seed": int(seed), "step": int(step), "loss": float(loss),
              "params_file": bin_path.name, "n_params": int(values.size), **extra}
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps(header, indent=2))
    return json_path


def load_checkpoint(path) -> tuple[NetworkSpec, ParamVector, dict]:
    json_path = Path(path).with_suffix(".json")
    header = json.loads(json_path.read_text())
    spec = NetworkSpec.from_dict(header["spec"])
    values = np.frombuffer((json_path.parent / header["params_file"]).read_bytes(), dtype="<f8")
    if values.size != spec.n_params:
        raise ValueError(f"{json_path}: {values.size} parameters, spec needs {spec.n_params}")
    return spec, ParamVector(values.astype(np.float64), param_layout(spec)), header
