"""Dense float64 layers with hand-derived backprop, optimizers, and a finite-difference checker.

Tensors are C-contiguous float64 numpy arrays throughout; checkpoints narrow to
float32 on disk. Layers cache the activations of their last forward call; call
sites that reuse one layer several times inside a batch pass caches explicitly.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Input shape incompatible with a layer, reporting expected vs actual."""


def tensor(data, shape: tuple[int, ...] | None = None) -> Array:
    """Materialize a C-contiguous float64 array and verify finiteness."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> Array:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-a, a, size=shape)
    # snap to the float32 grid so a freshly initialized model survives a
    # float32 checkpoint round trip bit-identically
    return w.astype(np.float32).astype(np.float64)


def sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Layer:
    """Base layer: named parameters, accumulated gradients, cached activations."""

    def __init__(self) -> None:
        self.params: dict[str, Array] = {}
        self.grads: dict[str, Array] = {}
        self._cache = None

    def _register(self, name: str, value: Array) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def apply(self, x: Array, mode: str = "eval", rng: np.random.Generator | None = None):
        """Pure forward pass returning (output, cache); does not touch layer state."""
        raise NotImplementedError

    def backprop(self, cache, upstream: Array) -> Array:
        """Backward for one apply() call; accumulates into self.grads, returns input grad."""
        raise NotImplementedError

    def forward(self, x: Array, mode: str = "eval", rng: np.random.Generator | None = None) -> Array:
        out, self._cache = self.apply(x, mode=mode, rng=rng)
        return out

    def backward(self, upstream: Array, cache=None) -> Array:
        if cache is None:
            cache = self._cache
        if cache is None:
            raise RuntimeError("backward called before forward")
        return self.backprop(cache, upstream)


class Linear(Layer):
    """y = x @ W + b with x of shape [..., d_in]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self._register("W", glorot(rng, d_in, d_out, (d_in, d_out)))
        self._register("b", np.zeros(d_out))

    def apply(self, x, mode="eval", rng=None):
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"Linear expected input dim {self.d_in}, got {x.shape[-1]}")
        return x @ self.params["W"] + self.params["b"], x

    def backprop(self, cache, upstream):
        x = cache
        x2 = x.reshape(-1, self.d_in)
        up2 = upstream.reshape(-1, self.d_out)
        self.grads["W"] += x2.T @ up2
        self.grads["b"] += up2.sum(axis=0)
        return upstream @ self.params["W"].T


class ReLU(Layer):
    def apply(self, x, mode="eval", rng=None):
        return np.maximum(x, 0.0), x

    def backprop(self, cache, upstream):
        return upstream * (cache > 0)


class Dropout(Layer):
    """Inverted dropout: train mode zeroes entries w.p. p and rescales by 1/(1-p)."""

    def __init__(self, p: float = 0.3):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p

    def apply(self, x, mode="eval", rng=None):
        if mode != "train" or self.p == 0.0:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * mask, mask

    def backprop(self, cache, upstream):
        if cache is None:
            return upstream
        return upstream * cache


class Softmax(Layer):
    """Row-wise softmax over the last axis."""

    def apply(self, x, mode="eval", rng=None):
        z = x - x.max(axis=-1, keepdims=True)
        ez = np.exp(z)
        s = ez / ez.sum(axis=-1, keepdims=True)
        return s, s

    def backprop(self, cache, upstream):
        s = cache
        return s * (upstream - (upstream * s).sum(axis=-1, keepdims=True))


class L2Normalize(Layer):
    """Scale each row to unit Euclidean norm."""

    def apply(self, x, mode="eval", rng=None):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(r == 0):
            raise ValueError("cannot L2-normalize a zero vector")
        return x / r, (x, r)

    def backprop(self, cache, upstream):
        x, r = cache
        return upstream / r - x * (x * upstream).sum(axis=-1, keepdims=True) / r**3


class LSTM(Layer):
    """Single LSTM layer over [B, T, d_in]; forward() returns the final hidden state.

    Gate layout in the fused weight matrices is [input, forget, candidate, output].
    """

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.d_in, self.hidden = d_in, hidden
        self._register("W", glorot(rng, d_in, 4 * hidden, (d_in, 4 * hidden)))
        self._register("U", glorot(rng, hidden, 4 * hidden, (hidden, 4 * hidden)))
        self._register("b", np.zeros(4 * hidden))

    def _scan(self, x: Array):
        if x.ndim != 3 or x.shape[2] != self.d_in:
            raise ShapeError(f"LSTM expected [B, T, {self.d_in}], got {x.shape}")
        B, T, _ = x.shape
        H = self.hidden
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        steps = []
        hs = np.empty((B, T, H))
        for t in range(T):
            z = x[:, t] @ W + h @ U + b
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H : 2 * H])
            g = np.tanh(z[:, 2 * H : 3 * H])
            o = sigmoid(z[:, 3 * H :])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            h = o * np.tanh(c)
            hs[:, t] = h
            steps.append((i, f, g, o, c_prev, h_prev, c))
        return hs, (x, steps)

    def apply(self, x, mode="eval", rng=None):
        hs, cache = self._scan(x)
        return hs[:, -1], ("last", hs, cache)

    def apply_sequence(self, x: Array):
        """Forward returning every timestep's hidden state [B, T, hidden]."""
        hs, cache = self._scan(x)
        return hs, ("seq", hs, cache)

    def backprop(self, cache, upstream):
        kind, hs, (x, steps) = cache
        B, T, _ = x.shape
        H = self.hidden
        if kind == "last":
            d_hs = np.zeros_like(hs)
            d_hs[:, -1] = upstream
        else:
            d_hs = upstream
        W, U = self.params["W"], self.params["U"]
        dW = np.zeros_like(W)
        dU = np.zeros_like(U)
        db = np.zeros_like(self.params["b"])
        dx = np.empty_like(x)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            i, f, g, o, c_prev, h_prev, c = steps[t]
            dh = d_hs[:, t] + dh_next
            tc = np.tanh(c)
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc**2)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g**2),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dW += x[:, t].T @ dz
            dU += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[:, t] = dz @ W.T
            dh_next = dz @ U.T
            dc_next = dc * f
        self.grads["W"] += dW
        self.grads["U"] += dU
        self.grads["b"] += db
        return dx


class SGD:
    def __init__(self, learning_rate: float):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self, params: dict[str, Array], grads: dict[str, Array]) -> None:
        self.step_count += 1
        for name, p in params.items():
            p -= self.learning_rate * grads[name]


class Adam:
    """Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m: dict[str, Array] = {}
        self._v: dict[str, Array] = {}

    def step(self, params: dict[str, Array], grads: dict[str, Array]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in params.items():
            g = grads[name]
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def grad_check(
    layer: Layer,
    x: Array,
    epsilon: float = 1e-5,
    mode: str = "eval",
    seed: int = 0,
    loss_seed: int = 1,
) -> float:
    """Max relative error between analytic and central finite-difference gradients.

    The scalar probe is sum(forward(x) * U) for a fixed random U; relative error
    is |analytic - numeric| / max(1, |numeric|) over every parameter and input
    entry. Dropout-style layers are replayed with an identical rng per call.
    """
    if not 0.0 < epsilon <= 1e-3:
        raise ValueError("epsilon must be in (0, 1e-3]")

    def run(inp: Array) -> Array:
        out, _ = layer.apply(inp, mode=mode, rng=np.random.default_rng(seed))
        return out

    out0 = run(x)
    if not np.all(np.isfinite(out0)):
        raise ValueError("non-finite forward output in grad_check")
    u = np.random.default_rng(loss_seed).standard_normal(out0.shape)

    layer.zero_grad()
    _, cache = layer.apply(x, mode=mode, rng=np.random.default_rng(seed))
    analytic_x = layer.backprop(cache, u.copy())
    analytic_params = {name: g.copy() for name, g in layer.grads.items()}
    layer.zero_grad()

    def loss_at(arr: Array) -> float:
        return float(np.sum(run(arr) * u))

    max_err = 0.0

    def compare(analytic: Array, target: Array) -> None:
        nonlocal max_err
        analytic_flat = analytic.reshape(-1)
        for idx in range(target.size):
            mi = np.unravel_index(idx, target.shape)
            orig = target[mi]
            target[mi] = orig + epsilon
            up = loss_at(x)
            target[mi] = orig - epsilon
            down = loss_at(x)
            target[mi] = orig
            numeric = (up - down) / (2.0 * epsilon)
            if not np.isfinite(numeric):
                raise ValueError("non-finite numeric gradient in grad_check")
            err = abs(analytic_flat[idx] - numeric) / max(1.0, abs(numeric))
            max_err = max(max_err, err)

    compare(analytic_x, x)
    for name, p in layer.params.items():
        compare(analytic_params[name], p)
    return max_err
