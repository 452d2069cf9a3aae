"""Dense Tanh network with exact input derivatives and parameter gradients.

A network maps a space-time point ``(t, x_1, ..., x_d)`` to a scalar density
estimate.  Input derivatives are carried forward as Taylor channels next to
the value; parameter gradients come from a hand-written reverse sweep through
the same channels, so any loss built from values, gradients and spatial
Hessians can be differentiated exactly.

Channel layout of a propagated batch (``order=2``)::

    0               value
    1               d/dt
    2 .. d+1        d/dx_i
    d+2 ..          d2/dx_i dx_j for i <= j (row-major upper triangle)

With ``order=0`` only the value channel is propagated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


def spatial_pairs(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(i, d)]


def n_channels(d: int, order: int) -> int:
    if order == 0:
        return 1
    if order == 2:
        return 1 + (d + 1) + len(spatial_pairs(d))
    raise ConfigError(f"derivative order must be 0 or 2, got {order}")


@dataclass
class MlpParams:
    """Weights and biases of a dense network.

    ``weights[k]`` has shape ``(layer_sizes[k+1], layer_sizes[k])``.  The
    fixed affine input map ``(z - input_shift) * input_scale`` is applied
    before the first layer and is not trained.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_shift: np.ndarray = field(default=None)
    input_scale: np.ndarray = field(default=None)

    def __post_init__(self):
        n_in = self.layer_sizes[0]
        if self.input_shift is None:
            self.input_shift = np.zeros(n_in)
        if self.input_scale is None:
            self.input_scale = np.ones(n_in)
        self.input_shift = np.asarray(self.input_shift, dtype=np.float64)
        self.input_scale = np.asarray(self.input_scale, dtype=np.float64)
        _check_params(self)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.input_shift.copy(),
            self.input_scale.copy(),
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vector) -> "MlpParams":
        new = self.copy()
        offset = 0
        for a in new.arrays():
            a[...] = np.reshape(vector[offset:offset + a.size], a.shape)
            offset += a.size
        return new

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_shift": self.input_shift.tolist(),
            "input_scale": self.input_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpParams":
        return cls(
            list(data["layer_sizes"]),
            [np.asarray(w, dtype=np.float64) for w in data["weights"]],
            [np.asarray(b, dtype=np.float64) for b in data["biases"]],
            np.asarray(data["input_shift"], dtype=np.float64),
            np.asarray(data["input_scale"], dtype=np.float64),
        )


@dataclass
class ParamGrad:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def __add__(self, other: "ParamGrad") -> "ParamGrad":
        return ParamGrad(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "ParamGrad":
        return cls([np.zeros_like(w) for w in params.weights],
                   [np.zeros_like(b) for b in params.biases])


@dataclass
class Jet:
    """Network value with its input gradient and spatial Hessian at one point."""

    value: float
    grad: np.ndarray  # (d+1,): d/dt then d/dx_i
    hess: np.ndarray  # (d, d)


@dataclass
class JetBatch:
    value: np.ndarray  # (B,)
    grad: np.ndarray  # (B, d+1)
    hess: np.ndarray  # (B, d, d)

    def __len__(self):
        return len(self.value)

    def __getitem__(self, i) -> Jet:
        return Jet(float(self.value[i]), self.grad[i].copy(), self.hess[i].copy())

    @classmethod
    def zeros(cls, n: int, d: int) -> "JetBatch":
        return cls(np.zeros(n), np.zeros((n, d + 1)), np.zeros((n, d, d)))


def _check_params(params: MlpParams) -> None:
    sizes = params.layer_sizes
    if len(sizes) < 2 or any(int(s) != s or s <= 0 for s in sizes):
        raise ConfigError(f"layer sizes must be >= 2 positive integers, got {sizes}")
    if sizes[-1] != 1:
        raise ConfigError(f"output layer width must be 1, got {sizes[-1]}")
    if len(params.weights) != len(sizes) - 1 or len(params.biases) != len(sizes) - 1:
        raise ShapeError("number of weight/bias arrays does not match layer_sizes")
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
            raise ShapeError(
                f"layer {k}: expected W {(sizes[k + 1], sizes[k])} and b {(sizes[k + 1],)}, "
                f"got {w.shape} and {b.shape}")
    if params.input_shift.shape != (sizes[0],) or params.input_scale.shape != (sizes[0],):
        raise ShapeError("input_shift/input_scale must match the input width")


def xavier_init(layer_sizes, seed: int, *, input_box=None) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    ``input_box`` is an optional ``(lo, hi)`` pair of input-length arrays; when
    given, inputs are mapped affinely onto ``[-1, 1]`` before the first layer.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ConfigError(f"layer sizes must be >= 2 positive integers, got {list(layer_sizes)}")
    if sizes[-1] != 1:
        raise ConfigError(f"output layer width must be 1, got {sizes[-1]}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    shift = scale = None
    if input_box is not None:
        lo, hi = (np.asarray(v, dtype=np.float64) for v in input_box)
        shift = 0.5 * (lo + hi)
        scale = 2.0 / (hi - lo)
    return MlpParams(sizes, weights, biases, shift, scale)


class Tape:
    """Forward pass over a batch, kept for a later reverse sweep."""

    def __init__(self, params: MlpParams, points, order: int = 2):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.ndim != 2 or pts.shape[1] != params.n_inputs:
            raise ShapeError(
                f"points must have shape (B, {params.n_inputs}), got {np.shape(points)}")
        self.params = params
        self.order = order
        self.n_in = pts.shape[1]
        self.d = self.n_in - 1
        self.pairs = spatial_pairs(self.d) if order == 2 else []
        n_ch = n_channels(self.d, order)
        batch = pts.shape[0]

        z = np.zeros((n_ch, batch, self.n_in))
        z[0] = (pts - params.input_shift) * params.input_scale
        if order:
            for k in range(self.n_in):
                z[1 + k, :, k] = params.input_scale[k]

        self._cache = []
        with np.errstate(over="ignore", invalid="ignore"):
            self._sweep(params, z, order)

        bad = ~np.isfinite(self.out).all(axis=0)
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise NumericError(f"non-finite network output at point index {idx}", index=idx)

    def _sweep(self, params, z, order):
        n_layers = len(params.weights)
        for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
            a = z @ w.T
            a[0] += b
            if layer == n_layers - 1:
                self._cache.append((z, None, None, None, None))
                self.out = a[:, :, 0]
                break
            t = np.tanh(a[0])
            s1 = 1.0 - t * t
            znew = np.empty_like(a)
            znew[0] = t
            s2 = None
            if order:
                s2 = -2.0 * t * s1
                nd = self.n_in
                znew[1:1 + nd] = s1 * a[1:1 + nd]
                for p, (i, j) in enumerate(self.pairs):
                    c = 1 + nd + p
                    znew[c] = s1 * a[c] + s2 * a[2 + i] * a[2 + j]
            self._cache.append((z, a, t, s1, s2))
            z = znew

    @property
    def values(self) -> np.ndarray:
        return self.out[0]

    def jets(self) -> JetBatch:
        if self.order != 2:
            raise ConfigError("jets need a tape propagated with order=2")
        nd, d = self.n_in, self.d
        batch = self.out.shape[1]
        hess = np.empty((batch, d, d))
        for p, (i, j) in enumerate(self.pairs):
            hess[:, i, j] = hess[:, j, i] = self.out[1 + nd + p]
        return JetBatch(self.out[0].copy(), self.out[1:1 + nd].T.copy(), hess)

    def channel_cotangent(self, value=None, grad=None, hess=None) -> np.ndarray:
        """Pack jet-shaped cotangents into the channel layout."""
        batch = self.out.shape[1]
        g = np.zeros_like(self.out)
        if value is not None:
            g[0] = value
        if grad is not None or hess is not None:
            if self.order != 2:
                raise ConfigError("derivative cotangents need order=2")
            nd = self.n_in
            if grad is not None:
                g[1:1 + nd] = np.asarray(grad).reshape(batch, nd).T
            if hess is not None:
                hess = np.asarray(hess).reshape(batch, self.d, self.d)
                for p, (i, j) in enumerate(self.pairs):
                    g[1 + nd + p] = hess[:, i, j] if i == j else hess[:, i, j] + hess[:, j, i]
        return g

    def backward(self, cot: np.ndarray) -> ParamGrad:
        """Reverse sweep given the cotangent of every output channel, shape (C, B)."""
        params = self.params
        g = np.asarray(cot, dtype=np.float64)[:, :, None]
        nd = self.n_in
        n_layers = len(params.weights)
        gw = [None] * n_layers
        gb = [None] * n_layers
        for layer in range(n_layers - 1, -1, -1):
            z, a, t, s1, s2 = self._cache[layer]
            if a is not None:
                # g is the cotangent of the tanh outputs; pull back to pre-activations
                ga = np.empty_like(g)
                ga[0] = g[0] * s1
                if self.order:
                    ga[1:1 + nd] = s1 * g[1:1 + nd]
                    ga[0] += s2 * np.einsum("cbn,cbn->bn", g[1:1 + nd], a[1:1 + nd])
                    s3 = s1 * (6.0 * t * t - 2.0)
                    for p, (i, j) in enumerate(self.pairs):
                        c = 1 + nd + p
                        ga[c] = s1 * g[c]
                        ga[0] += g[c] * (s2 * a[c] + s3 * a[2 + i] * a[2 + j])
                        ga[2 + i] += g[c] * s2 * a[2 + j]
                        ga[2 + j] += g[c] * s2 * a[2 + i]
                g = ga
            n_out, n_in = params.weights[layer].shape
            gw[layer] = g.reshape(-1, n_out).T @ z.reshape(-1, n_in)
            gb[layer] = g[0].sum(axis=0)
            if layer:
                g = g @ params.weights[layer]
        return ParamGrad(gw, gb)


def forward(params: MlpParams, point) -> float:
    pt = np.asarray(point, dtype=np.float64)
    if pt.ndim != 1:
        raise ShapeError(f"point must be a vector, got shape {pt.shape}")
    return float(Tape(params, pt, order=0).values[0])


def forward_batch(params: MlpParams, points, chunk: int = 65536) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return np.concatenate([Tape(params, pts[i:i + chunk], order=0).values
                           for i in range(0, max(len(pts), 1), chunk)])


def forward_jet(params: MlpParams, point) -> Jet:
    pt = np.asarray(point, dtype=np.float64)
    if pt.ndim != 1:
        raise ShapeError(f"point must be a vector, got shape {pt.shape}")
    return Tape(params, pt, order=2).jets()[0]


def forward_jet_batch(params: MlpParams, points, chunk: int = 16384) -> JetBatch:
    pts = np.asarray(points, dtype=np.float64)
    parts = [Tape(params, pts[i:i + chunk], order=2).jets()
             for i in range(0, max(len(pts), 1), chunk)]
    return JetBatch(np.concatenate([p.value for p in parts]),
                    np.concatenate([p.grad for p in parts]),
                    np.concatenate([p.hess for p in parts]))


def param_gradient(params: MlpParams, points, objective, order: int = 2):
    """Value and exact parameter gradient of ``objective`` over a point batch.

    ``objective(jets)`` receives a :class:`JetBatch` (only ``value`` is filled
    when ``order=0``) and returns ``(value, cotangent)`` where ``cotangent`` is
    a :class:`JetBatch` holding d(objective)/d(each jet entry).
    """
    tape = Tape(params, points, order=order)
    if order == 2:
        jets = tape.jets()
    else:
        n = tape.values.shape[0]
        jets = JetBatch(tape.values.copy(), np.zeros((n, 0)), np.zeros((n, 0, 0)))
    value, cot = objective(jets)
    if order == 2:
        cot_ch = tape.channel_cotangent(cot.value, cot.grad, cot.hess)
    else:
        cot_ch = tape.channel_cotangent(cot.value)
    grads = tape.backward(cot_ch)
    for a in grads.arrays():
        if not np.isfinite(a).all():
            raise NumericError("non-finite parameter gradient")
    return float(value), grads
