"""Dense MLP generators and discriminators, marginal or measurement-conditional.

Conditioning is by concatenation at the input layer: a conditional generator
sees ``[z, y]`` and a conditional discriminator sees ``[x, y]``.  Parameters
live in one flat float64 vector laid out layer by layer as ``W`` (row-major,
shape ``(fan_in, fan_out)``) followed by ``b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .numcore import RngStream

ACTIVATIONS = {
    "relu": nc.relu,
    "tanh": nc.tanh,
    "sigmoid": nc.sigmoid,
    "linear": lambda h: h,
}

# ParamVec: a flat float64 ndarray whose layout is given by MlpSpec.layout()


class SpecError(ValueError):
    pass


class ConditioningError(ValueError):
    """Measurement supplied to a marginal net, or missing for a conditional one."""


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    activations: tuple[str, ...]
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        acts = tuple(self.activations)
        if len(widths) < 2:
            raise SpecError("an MLP needs an input width and at least one layer")
        if any(w <= 0 for w in widths):
            raise SpecError(f"layer widths must be positive, got {widths}")
        if len(acts) != len(widths) - 1:
            raise SpecError(f"{len(widths) - 1} layers but {len(acts)} activations")
        for a in acts:
            if a not in ACTIVATIONS:
                raise SpecError(f"unknown activation {a!r}")
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    def layout(self) -> list[tuple[int, int, int, int]]:
        """Per layer: (weight offset, bias offset, fan_in, fan_out)."""
        out, off = [], 0
        for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            out.append((off, off + fan_in * fan_out, fan_in, fan_out))
            off += fan_in * fan_out + fan_out
        return out

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in zip(self.layer_widths[:-1], self.layer_widths[1:]))

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths), "activations": list(self.activations),
                "seed": self.seed}

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpSpec":
        return cls(tuple(doc["layer_widths"]), tuple(doc["activations"]), doc.get("seed", 0))


def init_params(spec: MlpSpec, rng: RngStream) -> np.ndarray:
    """He-normal weights for relu layers, N(0, 1/fan_in) otherwise; zero biases."""
    params = np.zeros(spec.n_params)
    for (w_off, b_off, fan_in, fan_out), act in zip(spec.layout(), spec.activations):
        var = (2.0 if act == "relu" else 1.0) / fan_in
        params[w_off:b_off] = rng.gaussian(fan_in * fan_out, 0.0, np.sqrt(var))
    return params


def mlp_forward(spec: MlpSpec, params, inputs):
    """Forward pass; ``params`` and ``inputs`` may be arrays or tape nodes."""
    h = inputs
    for (w_off, b_off, fan_in, fan_out), act in zip(spec.layout(), spec.activations):
        W = nc.reshape(nc.getitem(params, slice(w_off, b_off)), (fan_in, fan_out))
        b = nc.getitem(params, slice(b_off, b_off + fan_out))
        h = ACTIVATIONS[act](nc.add(nc.matmul(h, W), b))
    return h


def _with_condition(inputs, y, cond_dim: int, what: str):
    if cond_dim == 0:
        if y is not None:
            raise ConditioningError(f"marginal {what} received a measurement vector")
        return inputs
    if y is None:
        raise ConditioningError(f"conditional {what} requires a measurement of length {cond_dim}")
    if nc.value_of(y).shape[-1] != cond_dim:
        raise ConditioningError(f"measurement length {nc.value_of(y).shape[-1]} != cond_dim {cond_dim}")
    in_ndim = nc.value_of(inputs).ndim
    y_ndim = nc.value_of(y).ndim
    if in_ndim == 2 and y_ndim == 1:
        batch = nc.value_of(inputs).shape[0]
        if isinstance(y, nc.Var):
            y = nc.add(np.zeros((batch, cond_dim)), y)
        else:
            y = np.broadcast_to(np.asarray(y, dtype=np.float64), (batch, cond_dim))
    elif in_ndim == 1 and y_ndim == 2:
        raise ConditioningError("batched measurement with an unbatched input")
    return nc.concat([inputs, y], axis=-1)


@dataclass
class GeneratorNet:
    spec: MlpSpec
    params: np.ndarray = field(repr=False)
    latent_dim: int
    cond_dim: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.spec.in_width != self.latent_dim + self.cond_dim:
            raise SpecError(f"first layer width {self.spec.in_width} != latent {self.latent_dim}"
                            f" + cond {self.cond_dim}")
        if self.params.shape != (self.spec.n_params,):
            raise SpecError(f"expected {self.spec.n_params} parameters, got {self.params.shape}")

    @property
    def out_dim(self) -> int:
        return self.spec.out_width

    def forward(self, z, y=None, params=None):
        inputs = _with_condition(z, y, self.cond_dim, "generator")
        return mlp_forward(self.spec, self.params if params is None else params, inputs)

    __call__ = forward

    def with_params(self, params) -> "GeneratorNet":
        return GeneratorNet(self.spec, np.array(params), self.latent_dim, self.cond_dim)


@dataclass
class DiscriminatorNet:
    spec: MlpSpec
    params: np.ndarray = field(repr=False)
    shape: str = "scalar"
    cond_dim: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.shape not in ("scalar", "autoencoder"):
            raise SpecError(f"unknown discriminator shape {self.shape!r}")
        if self.params.shape != (self.spec.n_params,):
            raise SpecError(f"expected {self.spec.n_params} parameters, got {self.params.shape}")
        if self.shape == "scalar" and (self.spec.out_width != 1 or self.spec.activations[-1] != "sigmoid"):
            raise SpecError("scalar discriminator needs a single sigmoid output")
        if self.shape == "autoencoder" and self.spec.out_width != self.signal_dim:
            raise SpecError("autoencoder discriminator must reconstruct its signal input")

    @property
    def signal_dim(self) -> int:
        return self.spec.in_width - self.cond_dim

    def forward(self, x, y=None, params=None):
        inputs = _with_condition(x, y, self.cond_dim, "discriminator")
        out = mlp_forward(self.spec, self.params if params is None else params, inputs)
        if self.shape == "scalar":
            out = nc.reshape(out, nc.value_of(out).shape[:-1])
        return out

    __call__ = forward

    def with_params(self, params) -> "DiscriminatorNet":
        return DiscriminatorNet(self.spec, np.array(params), self.shape, self.cond_dim)


def gen_forward(G, z, y=None):
    return G.forward(z, y)


def disc_forward(D, x, y=None):
    return D.forward(x, y)


def reconstruction_loss(D: DiscriminatorNet, x, y=None, p: int = 1, params=None):
    """R(x) = |x - D(x, y)|_p per sample (last axis)."""
    resid = nc.sub(x, D.forward(x, y, params))
    if p == 1:
        return nc.l1_norm(resid, axis=-1)
    if p == 2:
        return nc.l2_norm(resid, axis=-1)
    raise ValueError(f"reconstruction norm must be 1 or 2, got {p}")


def make_generator(latent_dim: int, out_dim: int, hidden=(64,), cond_dim: int = 0,
                   hidden_act: str = "relu", out_act: str = "tanh", seed: int = 0,
                   rng: RngStream | None = None) -> GeneratorNet:
    widths = (latent_dim + cond_dim, *hidden, out_dim)
    spec = MlpSpec(widths, (hidden_act,) * len(hidden) + (out_act,), seed)
    return GeneratorNet(spec, init_params(spec, rng or RngStream(seed)), latent_dim, cond_dim)


def make_discriminator(signal_dim: int, hidden=(64,), cond_dim: int = 0, shape: str = "scalar",
                       hidden_act: str = "relu", seed: int = 0,
                       rng: RngStream | None = None) -> DiscriminatorNet:
    if shape == "scalar":
        widths, out_act = (signal_dim + cond_dim, *hidden, 1), "sigmoid"
    else:
        widths, out_act = (signal_dim + cond_dim, *hidden, signal_dim), "linear"
    spec = MlpSpec(widths, (hidden_act,) * len(hidden) + (out_act,), seed)
    return DiscriminatorNet(spec, init_params(spec, rng or RngStream(seed)), shape, cond_dim)


# ----------------------------------------------------------- oracle generators


@dataclass
class IdentityGenerator:
    """G(z[, y]) = z with latent dimension d; its range is all of R^d.

    ``project`` returns its argument unchanged, so recovery loops that use it
    reduce exactly to classical gradient descent / IHT.
    """

    d: int
    cond_dim: int = 0

    @property
    def latent_dim(self) -> int:
        return self.d

    @property
    def out_dim(self) -> int:
        return self.d

    def forward(self, z, y=None):
        _with_condition(np.zeros(self.d), y, self.cond_dim, "generator")
        return z

    __call__ = forward

    def project(self, w, y=None):
        return np.array(w, dtype=np.float64)


@dataclass
class LinearGenerator:
    """G(z[, y]) = W z + C y + b, differentiable in z and y."""

    W: np.ndarray
    C: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.C is not None:
            self.C = np.asarray(self.C, dtype=np.float64)
        self.b = np.zeros(self.W.shape[0]) if self.b is None else np.asarray(self.b, dtype=np.float64)

    @property
    def latent_dim(self) -> int:
        return self.W.shape[1]

    @property
    def cond_dim(self) -> int:
        return 0 if self.C is None else self.C.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def forward(self, z, y=None):
        _with_condition(np.zeros(self.latent_dim), y, self.cond_dim, "generator")
        out = nc.add(nc.matmul(z, self.W.T), self.b)
        if self.C is not None:
            out = nc.add(out, nc.matmul(y, self.C.T))
        return out

    __call__ = forward


@dataclass
class ConditionedGenerator:
    """The marginal map z -> G(z, y) obtained by fixing a conditional generator's input."""

    base: object
    y: np.ndarray

    @property
    def latent_dim(self) -> int:
        return self.base.latent_dim

    @property
    def out_dim(self) -> int:
        return self.base.out_dim

    cond_dim = 0

    def forward(self, z, y=None):
        if y is not None:
            raise ConditioningError("conditioned generator already has its measurement fixed")
        return self.base.forward(z, self.y)

    __call__ = forward
