"""Energy functions with analytic input and parameter gradients.

Two model kinds are supported:

* ``"gaussian"``: ``E(x) = (x - mu)^2 / (2 sigma^2)`` with parameters
  ``(mu, log sigma)``, so any real parameter vector is a valid model.
* ``"mlp"``: a fully connected network with leaky-ReLU hidden layers and a
  scalar linear output. Parameters are packed layer by layer as the weight
  matrix (fan_in x fan_out, row-major) followed by the bias vector.

Both kinds carry a non-trainable ``offset`` added to every energy value. It
exists so callers can shift ``E`` by a constant (``E + log lambda`` scales the
unnormalized density by ``1/lambda``) without touching the parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidModelKind, InvalidShape, NumericalError
from .rng import make_rng

GAUSSIAN = "gaussian"
MLP = "mlp"
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class EnergyModel:
    kind: str
    params: np.ndarray
    widths: tuple[int, ...] = ()
    offset: float = 0.0
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64).reshape(-1)
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.kind == GAUSSIAN:
            if params.size != 2:
                raise InvalidShape("gaussian model needs exactly 2 parameters (mu, log sigma)")
        elif self.kind == MLP:
            _check_widths(self.widths)
            if params.size != mlp_param_count(self.widths):
                raise InvalidShape(
                    f"widths {self.widths} need {mlp_param_count(self.widths)} params, got {params.size}"
                )
        else:
            raise InvalidModelKind(f"unknown model kind {self.kind!r}")
        if not np.all(np.isfinite(params)):
            raise NumericalError("model parameters must be finite")

    @property
    def input_dim(self) -> int:
        return 1 if self.kind == GAUSSIAN else self.widths[0]

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def mu(self) -> float:
        self._require_gaussian()
        return float(self.params[0])

    @property
    def sigma(self) -> float:
        self._require_gaussian()
        return float(np.exp(self.params[1]))

    def with_params(self, params) -> "EnergyModel":
        return EnergyModel(self.kind, params, self.widths, self.offset, self.slope)

    def shifted(self, c: float) -> "EnergyModel":
        """Same model with ``c`` added to every energy value."""
        return EnergyModel(self.kind, self.params, self.widths, self.offset + float(c), self.slope)

    def _require_gaussian(self):
        if self.kind != GAUSSIAN:
            raise InvalidModelKind(f"operation needs a gaussian model, got {self.kind!r}")

    def __eq__(self, other):
        if not isinstance(other, EnergyModel):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.widths == other.widths
            and self.offset == other.offset
            and self.slope == other.slope
            and np.array_equal(self.params, other.params)
        )

    __hash__ = None


@dataclass(frozen=True)
class EnergyEval:
    value: float
    grad_x: np.ndarray
    grad_params: np.ndarray


def gaussian_quadratic(mu: float, sigma: float) -> EnergyModel:
    if not sigma > 0:
        raise InvalidShape("sigma must be positive")
    return EnergyModel(GAUSSIAN, [mu, np.log(sigma)])


def _check_widths(widths):
    if len(widths) < 2 or widths[-1] != 1 or any(w < 1 for w in widths):
        raise InvalidShape(f"mlp widths must have >= 2 positive entries ending in 1, got {widths}")


def mlp_param_count(widths) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def init_mlp(widths, seed: int, slope: float = LEAKY_SLOPE) -> EnergyModel:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    widths = tuple(int(w) for w in widths)
    _check_widths(widths)
    rng = make_rng(seed)
    chunks = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return EnergyModel(MLP, np.concatenate(chunks), widths, slope=slope)


def unpack_mlp(model: EnergyModel) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    pos = 0
    for fan_in, fan_out in zip(model.widths[:-1], model.widths[1:]):
        w = model.params[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = model.params[pos : pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def as_batch(model: EnergyModel, x) -> np.ndarray:
    """Coerce ``x`` to an ``(N, input_dim)`` float array."""
    x = np.asarray(x, dtype=np.float64)
    d = model.input_dim
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if d == 1 else x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != d:
        raise InvalidShape(f"expected points of dimension {d}, got array of shape {x.shape}")
    return x


class ForwardPass:
    """Energies of a batch plus the cache needed for reverse-mode gradients."""

    def __init__(self, model: EnergyModel, x):
        self.model = model
        self.x = as_batch(model, x)
        if model.kind == GAUSSIAN:
            mu, log_sigma = model.params
            self._inv_var = np.exp(-2.0 * log_sigma)
            self._diff = self.x[:, 0] - mu
            with np.errstate(over="ignore", invalid="ignore"):
                values = 0.5 * self._diff**2 * self._inv_var
            if not np.all(np.isfinite(values)):
                raise NumericalError("non-finite energy in gaussian model (layer 0)")
        else:
            self._layers = unpack_mlp(model)
            self._inputs = []
            self._pre = []
            a = self.x
            last = len(self._layers) - 1
            for i, (w, b) in enumerate(self._layers):
                self._inputs.append(a)
                with np.errstate(over="ignore", invalid="ignore"):
                    z = a @ w + b
                if not np.all(np.isfinite(z)):
                    raise NumericalError(f"non-finite pre-activation at layer {i}")
                self._pre.append(z)
                a = z if i == last else np.where(z > 0, z, model.slope * z)
            values = a[:, 0]
        self.values = values + model.offset

    def __len__(self):
        return self.values.shape[0]

    def _coeffs(self, coeffs):
        if coeffs is None:
            return np.ones(len(self))
        c = np.asarray(coeffs, dtype=np.float64).reshape(-1)
        if c.shape[0] != len(self):
            raise InvalidShape(f"need {len(self)} coefficients, got {c.shape[0]}")
        return c

    def _backprop(self, c):
        """Yield (layer index, delta at that layer's output) from the top down."""
        delta = c[:, None]
        for i in range(len(self._layers) - 1, -1, -1):
            yield i, delta
            if i > 0:
                w = self._layers[i][0]
                z = self._pre[i - 1]
                delta = (delta @ w.T) * np.where(z > 0, 1.0, self.model.slope)

    def param_vjp(self, coeffs=None) -> np.ndarray:
        """``sum_i coeffs[i] * grad_params E(x_i)`` without per-example Jacobians."""
        c = self._coeffs(coeffs)
        if self.model.kind == GAUSSIAN:
            g_mu = -self._diff * self._inv_var
            g_ls = -(self._diff**2) * self._inv_var
            return np.array([np.dot(c, g_mu), np.dot(c, g_ls)])
        grads = [None] * len(self._layers)
        for i, delta in self._backprop(c):
            grads[i] = np.concatenate([(self._inputs[i].T @ delta).reshape(-1), delta.sum(axis=0)])
        out = np.concatenate(grads)
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite parameter gradient")
        return out

    def input_grad(self) -> np.ndarray:
        """Per-example ``grad_x E(x_i)``, shape ``(N, input_dim)``."""
        if self.model.kind == GAUSSIAN:
            return (self._diff * self._inv_var)[:, None]
        delta = None
        for i, delta in self._backprop(np.ones(len(self))):
            pass
        g = delta @ self._layers[0][0].T
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite input gradient at layer 0")
        return g

    def param_jacobian(self) -> np.ndarray:
        """Per-example ``grad_params E(x_i)``, shape ``(N, n_params)``."""
        if self.model.kind == GAUSSIAN:
            return np.stack([-self._diff * self._inv_var, -(self._diff**2) * self._inv_var], axis=1)
        n = len(self)
        blocks = [None] * len(self._layers)
        for i, delta in self._backprop(np.ones(n)):
            gw = np.einsum("ni,nj->nij", self._inputs[i], delta).reshape(n, -1)
            blocks[i] = np.concatenate([gw, delta], axis=1)
        return np.concatenate(blocks, axis=1)

    def min_abs_preactivation(self) -> np.ndarray:
        """Per-example distance of the nearest hidden pre-activation to the kink at 0."""
        if self.model.kind == GAUSSIAN or len(self._pre) < 2:
            return np.full(len(self), np.inf)
        return np.min(np.concatenate([np.abs(z) for z in self._pre[:-1]], axis=1), axis=1)


def energy_values(model: EnergyModel, x) -> np.ndarray:
    return ForwardPass(model, x).values


def energy_eval(model: EnergyModel, x) -> EnergyEval:
    """Value, input gradient and parameter gradient at a single point."""
    fp = ForwardPass(model, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return EnergyEval(
        value=float(fp.values[0]),
        grad_x=fp.input_grad()[0],
        grad_params=fp.param_jacobian()[0],
    )


# -- checkpoints -------------------------------------------------------------


def to_dict(model: EnergyModel) -> dict:
    return {
        "kind": model.kind,
        "widths": list(model.widths),
        "offset": model.offset,
        "slope": model.slope,
        "params": [float(v) for v in model.params],
    }


def from_dict(d: dict) -> EnergyModel:
    return EnergyModel(
        d["kind"],
        np.asarray(d["params"], dtype=np.float64),
        tuple(d.get("widths", ())),
        float(d.get("offset", 0.0)),
        float(d.get("slope", LEAKY_SLOPE)),
    )


def save_checkpoint(model: EnergyModel, path) -> Path:
    """JSON checkpoint; floats are written with ``repr`` so they round-trip exactly."""
    path = Path(path)
    path.write_text(json.dumps(to_dict(model), indent=1) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> EnergyModel:
    return from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_params_binary(model: EnergyModel, path) -> Path:
    """Raw little-endian float64 parameter dump (metadata lives elsewhere)."""
    path = Path(path)
    path.write_bytes(model.params.astype("<f8").tobytes())
    return path


def load_params_binary(path, template: EnergyModel) -> EnergyModel:
    params = np.frombuffer(Path(path).read_bytes(), dtype="<f8").astype(np.float64)
    return template.with_params(params)
