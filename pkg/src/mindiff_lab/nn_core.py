"""One-hidden-layer feed-forward network with a hand-written backward pass.

The network computes ``sigmoid(w2 . relu(x @ w1 + b1) + b2)``.  Gradients are
derived by hand rather than through an autodiff library so the MinDiff
penalties can be attached as upstream gradients on the predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLAMP_EPS = 1e-7

PARAM_NAMES = ("w1", "b1", "w2", "b2")


class DimensionError(ValueError):
    """Input shapes disagree with the network."""


class NumericError(ArithmeticError):
    """A non-finite value reached the network or optimizer."""


@dataclass
class ModelParams:
    w1: np.ndarray  # (d_in, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: float

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = float(self.b2)
        if self.w1.ndim != 2 or self.w1.shape[1] < 1:
            raise DimensionError(f"w1 must be (d_in, h) with h >= 1, got {self.w1.shape}")
        h = self.w1.shape[1]
        if self.b1.shape != (h,) or self.w2.shape != (h,):
            raise DimensionError(
                f"inconsistent shapes: w1 {self.w1.shape}, b1 {self.b1.shape}, w2 {self.w2.shape}"
            )

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": np.array(self.b2)}

    @classmethod
    def from_dict(cls, d) -> "ModelParams":
        return cls(d["w1"], d["b1"], d["w2"], float(np.asarray(d["b2"])))

    def copy(self) -> "ModelParams":
        return ModelParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.as_dict().values())


def init_params(d_in: int, hidden: int, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    lim1 = np.sqrt(6.0 / (d_in + hidden))
    lim2 = np.sqrt(6.0 / (hidden + 1))
    w1 = rng.uniform(-lim1, lim1, size=(d_in, hidden))
    w2 = rng.uniform(-lim2, lim2, size=hidden)
    return ModelParams(w1, np.zeros(hidden), w2, 0.0)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: np.ndarray  # hidden pre-activation
    hid: np.ndarray  # relu(pre)
    logit: np.ndarray
    prob: np.ndarray = field(repr=False)


def _check_x(params: ModelParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise DimensionError(f"expected x with {params.d_in} columns, got shape {x.shape}")
    return x


def forward_cache(params: ModelParams, x) -> ForwardCache:
    x = _check_x(params, x)
    pre = x @ params.w1 + params.b1
    hid = np.maximum(pre, 0.0)
    logit = hid @ params.w2 + params.b2
    return ForwardCache(x, pre, hid, logit, sigmoid(logit))


def forward(params: ModelParams, x) -> np.ndarray:
    """Probability ``P(y=1 | x)`` for every row of ``x``."""
    return forward_cache(params, x).prob


def _backward_from_logit(params: ModelParams, cache: ForwardCache, g_logit) -> dict[str, np.ndarray]:
    g_hid = np.outer(g_logit, params.w2)
    g_pre = g_hid * (cache.pre > 0)
    return {
        "w1": cache.x.T @ g_pre,
        "b1": g_pre.sum(axis=0),
        "w2": cache.hid.T @ g_logit,
        "b2": np.array(g_logit.sum()),
    }


def backward(params: ModelParams, x, upstream, cache: ForwardCache | None = None) -> dict[str, np.ndarray]:
    """Gradient of ``sum(upstream * forward(params, x))`` w.r.t. every parameter.

    ``cache`` may be passed to reuse a forward pass over the same ``x``.
    """
    if cache is None:
        cache = forward_cache(params, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.prob.shape:
        raise DimensionError(
            f"upstream gradient has shape {upstream.shape}, predictions {cache.prob.shape}"
        )
    if not np.all(np.isfinite(upstream)):
        raise NumericError("non-finite upstream gradient")
    p = cache.prob
    return _backward_from_logit(params, cache, upstream * p * (1.0 - p))


def backward_logits(params: ModelParams, x, upstream, cache: ForwardCache | None = None) -> dict[str, np.ndarray]:
    """Like :func:`backward` but ``upstream`` is taken w.r.t. the pre-sigmoid logits."""
    if cache is None:
        cache = forward_cache(params, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.logit.shape:
        raise DimensionError(
            f"upstream gradient has shape {upstream.shape}, logits {cache.logit.shape}"
        )
    if not np.all(np.isfinite(upstream)):
        raise NumericError("non-finite upstream gradient")
    return _backward_from_logit(params, cache, upstream)


def bce_loss(p, y) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. ``p``.

    Predictions are clamped to ``[CLAMP_EPS, 1 - CLAMP_EPS]`` first.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), CLAMP_EPS, 1.0 - CLAMP_EPS)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise DimensionError(f"predictions {p.shape} vs labels {y.shape}")
    b = p.shape[0]
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = (p - y) / (p * (1.0 - p)) / b
    return float(loss), grad


def add_grads(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: a[k] + b[k] for k in a}


@dataclass
class AdamState:
    """Moment accumulators for :func:`optimizer_step`."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams, lr: float = 1e-3, **kw) -> "AdamState":
        d = params.as_dict()
        return cls(
            m={k: np.zeros_like(v) for k, v in d.items()},
            v={k: np.zeros_like(v) for k, v in d.items()},
            lr=lr,
            **kw,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
            self.step,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )


def optimizer_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState) -> tuple[ModelParams, AdamState]:
    """One Adam update.  Inputs are not mutated; new values are returned.

    Raises NumericError (leaving ``params`` untouched) on non-finite gradients.
    """
    pd = params.as_dict()
    for k in PARAM_NAMES:
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != pd[k].shape:
            raise DimensionError(f"gradient for {k} has shape {g.shape}, expected {pd[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {k}")

    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_m, new_v, new_p = {}, {}, {}
    for k in PARAM_NAMES:
        g = np.asarray(grads[k], dtype=np.float64)
        m = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_p[k] = pd[k] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k] = m
        new_v[k] = v
    new_state = AdamState(new_m, new_v, t, state.lr, state.beta1, state.beta2, state.eps)
    return ModelParams.from_dict(new_p), new_state
