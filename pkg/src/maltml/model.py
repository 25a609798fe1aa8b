"""Fully connected ReLU regressor over a flat parameter vector.

Parameters live in one flat array so that the meta-learning updates can
treat them as a single point theta. ``forward`` accepts parameters with
leading batch axes, e.g. shape (families, tasks, P), paired with inputs of
shape (families, tasks, N, input_dim); every task then runs through its own
copy of the network in one batched graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Expr, ShapeError

FORMAT_TAG = "maltml-params"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int = 1
    hidden: tuple[int, ...] = (40, 40)
    output_dim: int = 1

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(d) != d or d <= 0 for d in dims):
            raise ValueError(f"layer sizes must be positive integers, got {dims}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    def layout(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        out = []
        for i, (n_in, n_out) in enumerate(zip(self.dims[:-1], self.dims[1:]), start=1):
            out.append((f"w{i}", (n_in, n_out)))
            out.append((f"b{i}", (n_out,)))
        return tuple(out)

    @property
    def n_params(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.layout()))


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameters plus the (name, shape) layout they cover."""

    entries: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...]], ...] = field(default=())

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64).reshape(-1)
        entries.setflags(write=False)
        layout = tuple((str(n), tuple(int(d) for d in s)) for n, s in self.layout)
        total = int(sum(np.prod(s) for _, s in layout))
        if total != entries.size:
            raise ValueError(f"layout covers {total} entries but {entries.size} were given")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "layout", layout)

    def __len__(self) -> int:
        return self.entries.size

    def with_entries(self, entries) -> "ParamVector":
        return ParamVector(entries, self.layout)

    def _check(self, other: "ParamVector") -> None:
        if self.layout != other.layout:
            raise ValueError("parameter layouts differ")

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self._check(other)
        return self.with_entries(self.entries + other.entries)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self._check(other)
        return self.with_entries(self.entries - other.entries)

    def __mul__(self, c: float) -> "ParamVector":
        return self.with_entries(float(c) * self.entries)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return (isinstance(other, ParamVector) and self.layout == other.layout
                and np.array_equal(self.entries, other.entries))

    def __hash__(self):
        return hash((self.layout, self.entries.tobytes()))

    def unflatten(self) -> dict[str, np.ndarray]:
        out, pos = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = self.entries[pos:pos + size].reshape(shape)
            pos += size
        return out

    def spec(self) -> ModelSpec:
        shapes = [s for n, s in self.layout if n.startswith("w")]
        return ModelSpec(shapes[0][0], tuple(s[1] for s in shapes[:-1]), shapes[-1][1])

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "layout": [[name, list(shape)] for name, shape in self.layout],
            "entries": [float(v) for v in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParamVector":
        if data.get("format") != FORMAT_TAG:
            raise ValueError(f"not a parameter record: format={data.get('format')!r}")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format version {data.get('version')!r}")
        layout = tuple((name, tuple(shape)) for name, shape in data["layout"])
        return cls(np.array(data["entries"], dtype=np.float64), layout)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ParamVector":
        return cls.from_dict(json.loads(Path(path).read_text()))


INIT_SCHEMES = {
    # name: uniform bound as a multiple of 1/sqrt(fan_in)
    "he_uniform": np.sqrt(6.0),   # weight variance 2 / fan_in
    "uniform": 1.0,               # weight variance 1 / (3 fan_in), the torch.nn.Linear scale
}


def init_params(spec: ModelSpec, seed: int, scheme: str = "he_uniform") -> ParamVector:
    """Fan-in-scaled uniform weights and zero biases, deterministic in ``seed``."""
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}; choose from {sorted(INIT_SCHEMES)}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    chunks = []
    for name, shape in spec.layout():
        if name.startswith("w"):
            bound = INIT_SCHEMES[scheme] / np.sqrt(shape[0])
            chunks.append(rng.uniform(-bound, bound, size=shape).reshape(-1))
        else:
            chunks.append(np.zeros(shape))
    return ParamVector(np.concatenate(chunks), spec.layout())


class MLP:
    """ReLU network evaluated on a flat parameter Expr."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.layout = spec.layout()
        self.n_params = spec.n_params

    def init(self, seed: int, scheme: str = "he_uniform") -> ParamVector:
        return init_params(self.spec, seed, scheme)

    def forward(self, params: Expr, x) -> Expr:
        """Predictions of shape ``batch + (N,)`` for ``x`` of shape ``batch + (N, input_dim)``.

        A 1-D ``x`` is read as N scalar inputs when ``input_dim`` is 1.
        """
        params = params if isinstance(params, Expr) else ad.const(getattr(params, "entries", params))
        if params.shape[-1:] != (self.n_params,):
            raise ShapeError("forward (parameter length)", params.shape, (self.n_params,))
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1 and self.spec.input_dim == 1:
            x = x[:, None]
        if x.ndim < 2 or x.shape[-1] != self.spec.input_dim:
            raise ShapeError("forward (input width)", x.shape, (self.spec.input_dim,))
        batch = params.shape[:-1]
        n_layers = len(self.layout) // 2
        h: Expr = ad.const(x)
        pos = 0
        for layer in range(n_layers):
            (_, wshape), (_, bshape) = self.layout[2 * layer], self.layout[2 * layer + 1]
            wsize, bsize = wshape[0] * wshape[1], bshape[0]
            w = ad.reshape(ad.slice_last(params, pos, pos + wsize), batch + wshape)
            pos += wsize
            b = ad.reshape(ad.slice_last(params, pos, pos + bsize), batch + (1, bsize))
            pos += bsize
            h = ad.add(ad.matmul(h, w), b)
            if layer < n_layers - 1:
                h = ad.relu(h)
        return ad.reshape(h, h.shape[:-1]) if self.spec.output_dim == 1 else h

    def loss(self, params: Expr, x, y) -> Expr:
        """Per-task MSE, shape ``batch``."""
        return mse_loss(self.forward(params, x), y)

    def predict(self, params, x) -> np.ndarray:
        return self.forward(ad.const(getattr(params, "entries", params)), x).value


def forward(params, x, spec: ModelSpec | None = None) -> Expr:
    """Run the MLP described by ``params.layout`` (or ``spec``) on ``x``."""
    if spec is None:
        spec = params.spec()
    p = params if isinstance(params, Expr) else ad.const(params.entries)
    return MLP(spec).forward(p, x)


def mse_loss(pred: Expr, target) -> Expr:
    """Mean of squared residuals over the last axis."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("mse_loss", pred.shape, target.shape)
    if pred.ndim == 0 or pred.shape[-1] == 0:
        raise ValueError("mse_loss needs at least one sample")
    return ad.mean(ad.square(ad.sub(pred, target)), axis=-1)


class QuadraticModel:
    """Data-independent loss 0.5 * ||theta||^2 per task; closed-form test bed."""

    def loss(self, params: Expr, x=None, y=None) -> Expr:
        return ad.scalar_mul(0.5, ad.sum(ad.square(params), axis=-1))


class ConstantModel:
    """f_theta(x) = theta for a single scalar parameter, trained with MSE."""

    def forward(self, params: Expr, x) -> Expr:
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[-2] if x.ndim >= 2 else x.shape[-1]
        return ad.broadcast_to(params, params.shape[:-1] + (n,))

    def loss(self, params: Expr, x, y) -> Expr:
        return mse_loss(self.forward(params, x), y)
