"""MinDiff penalties on scalar prediction scores.

Every penalty returns its value together with the gradient w.r.t. the
scores it was computed from, so training can push the gradient straight
into :func:`mindiff_lab.nn_core.backward`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

GROUP_UNKNOWN = -1
STD_FLOOR = 1e-12
DEFAULT_KERNEL_LENGTH = 0.1
DEFAULT_MIN_SIDE = 2

KINDS = ("none", "correlation", "mmd")
FAMILIES = ("gaussian", "laplace")


class ConfigError(ValueError):
    """Invalid penalty or kernel configuration."""


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    length: float = DEFAULT_KERNEL_LENGTH

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        _check_length(self.length)


@dataclass(frozen=True)
class PenaltyConfig:
    kind: str = "none"
    weight: float = 0.0
    kernel: KernelSpec | None = None
    min_side: int = DEFAULT_MIN_SIDE

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown penalty kind {self.kind!r}")
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise ConfigError(f"penalty weight must be finite and >= 0, got {self.weight}")
        if (self.kind == "mmd") != (self.kernel is not None):
            raise ConfigError("a kernel is required exactly when kind='mmd'")
        if self.min_side < 1:
            raise ConfigError("min_side must be >= 1")

    @classmethod
    def from_variant(cls, variant: str, weight: float, kernel_length: float = DEFAULT_KERNEL_LENGTH, **kw) -> "PenaltyConfig":
        """Build from a short variant id: ``none``, ``corr``, ``mmd_gaussian``, ``mmd_laplace``."""
        if variant == "none":
            return cls("none", 0.0, **kw)
        if variant in ("corr", "correlation"):
            return cls("correlation", weight, **kw)
        if variant.startswith("mmd_"):
            return cls("mmd", weight, KernelSpec(variant[4:], kernel_length), **kw)
        raise ConfigError(f"unknown penalty variant {variant!r}")

    @property
    def variant(self) -> str:
        if self.kind == "mmd":
            return f"mmd_{self.kernel.family}"
        return {"none": "none", "correlation": "corr"}[self.kind]


class PenaltyValue(NamedTuple):
    value: float
    grad: np.ndarray
    skipped: bool = False


class MMDValue(NamedTuple):
    value: float
    grad0: np.ndarray
    grad1: np.ndarray
    skipped: bool = False


def _check_length(length):
    if not (isinstance(length, (int, float, np.floating)) and math.isfinite(length) and length > 0):
        raise ConfigError(f"kernel length must be finite and > 0, got {length!r}")


def gaussian_kernel(x, y, length):
    _check_length(length)
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return np.exp(-(d * d) / (length * length))


def laplace_kernel(x, y, length):
    _check_length(length)
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return np.exp(-np.abs(d) / length)


def kernel_matrix(a, b, kernel: KernelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Kernel matrix ``K[i, j] = k(a_i, b_j)`` and ``dK/da_i`` elementwise.

    The derivative w.r.t. ``b_j`` is the negation of the returned one.  For the
    Laplace kernel the derivative at ``a_i == b_j`` is taken as 0.
    """
    d = a[:, None] - b[None, :]
    l = kernel.length
    if kernel.family == "gaussian":
        k = np.exp(-(d * d) / (l * l))
        dk = -2.0 * d / (l * l) * k
    else:
        k = np.exp(-np.abs(d) / l)
        dk = -np.sign(d) / l * k
    return k, dk


def mmd_squared(s0, s1, kernel: KernelSpec) -> MMDValue:
    """Biased (V-statistic) squared MMD between two scalar samples.

    Self-pairs are included, so ``mmd_squared(s, s)`` is exactly 0.
    An empty side yields a skipped result with zero value.
    """
    s0 = np.asarray(s0, dtype=np.float64).ravel()
    s1 = np.asarray(s1, dtype=np.float64).ravel()
    if not isinstance(kernel, KernelSpec):
        raise ConfigError("mmd_squared needs a KernelSpec")
    m, n = s0.size, s1.size
    if m == 0 or n == 0:
        return MMDValue(0.0, np.zeros(m), np.zeros(n), True)
    # fixed orientation so swapping the arguments gives bit-identical sums
    if (m, s0.tolist()) > (n, s1.tolist()):
        r = _mmd_core(s1, s0, kernel)
        return MMDValue(r.value, r.grad1, r.grad0)
    return _mmd_core(s0, s1, kernel)


def _mmd_core(s0, s1, kernel):
    m, n = s0.size, s1.size
    k00, d00 = kernel_matrix(s0, s0, kernel)
    k01, d01 = kernel_matrix(s0, s1, kernel)
    k11, d11 = kernel_matrix(s1, s1, kernel)
    value = k00.sum() / (m * m) - 2.0 * k01.sum() / (m * n) + k11.sum() / (n * n)

    # d00 is antisymmetric so the row and column contributions add up to 2x.
    grad0 = 2.0 * d00.sum(axis=1) / (m * m) - 2.0 * d01.sum(axis=1) / (m * n)
    grad1 = 2.0 * d11.sum(axis=1) / (n * n) + 2.0 * d01.sum(axis=0) / (m * n)
    return MMDValue(float(value), grad0, grad1)


def correlation_penalty(pred, group) -> PenaltyValue:
    """Absolute Pearson correlation between predictions and a binary group."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    g = np.asarray(group, dtype=np.float64).ravel()
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {g.size} group values")
    n = p.size
    if n < 2:
        return PenaltyValue(0.0, np.zeros(n), True)
    pc = p - p.mean()
    gc = g - g.mean()
    sp = np.sqrt(pc @ pc)
    sg = np.sqrt(gc @ gc)
    # compare sample standard deviations to the floor
    if sp / np.sqrt(n - 1) < STD_FLOOR or sg / np.sqrt(n - 1) < STD_FLOOR:
        return PenaltyValue(0.0, np.zeros(n))
    cov = pc @ gc
    r = cov / (sp * sg)
    # d r / d p_i = gc_i / (sp sg) - r pc_i / sp^2  (centering terms sum to zero)
    dr = gc / (sp * sg) - r * pc / (sp * sp)
    return PenaltyValue(float(abs(r)), np.sign(r) * dr)


def split_penalty(s0, s1, config: PenaltyConfig) -> PenaltyValue:
    """Penalty between two score samples; gradient concatenated as ``[s0, s1]``.

    Skips (zero value and gradient) when either side has fewer than
    ``config.min_side`` elements or the weight is zero.
    """
    s0 = np.asarray(s0, dtype=np.float64).ravel()
    s1 = np.asarray(s1, dtype=np.float64).ravel()
    zero = np.zeros(s0.size + s1.size)
    if config.kind == "none" or config.weight == 0.0:
        return PenaltyValue(0.0, zero, config.kind != "none")
    if min(s0.size, s1.size) < config.min_side:
        return PenaltyValue(0.0, zero, True)
    if config.kind == "mmd":
        r = mmd_squared(s0, s1, config.kernel)
        grad = np.concatenate([r.grad0, r.grad1])
        return PenaltyValue(config.weight * r.value, config.weight * grad, r.skipped)
    r = correlation_penalty(
        np.concatenate([s0, s1]), np.concatenate([np.zeros(s0.size), np.ones(s1.size)])
    )
    return PenaltyValue(config.weight * r.value, config.weight * r.grad, r.skipped)


def mindiff_penalty(pred, y, group, config: PenaltyConfig) -> PenaltyValue:
    """Weighted MinDiff penalty over the negative examples with a known group.

    ``pred``, ``y`` and ``group`` are aligned per row; ``group`` uses
    :data:`GROUP_UNKNOWN` for rows without the attribute.  The returned
    gradient has one entry per input row (zero for rows that were filtered
    out).
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(y).ravel()
    group = np.asarray(group).ravel()
    grad = np.zeros(pred.size)
    if config.kind == "none" or config.weight == 0.0:
        return PenaltyValue(0.0, grad, config.kind != "none")
    neg = y == 0
    idx0 = np.flatnonzero(neg & (group == 0))
    idx1 = np.flatnonzero(neg & (group == 1))
    r = split_penalty(pred[idx0], pred[idx1], config)
    if r.skipped:
        return PenaltyValue(0.0, grad, True)
    grad[idx0] = r.grad[: idx0.size]
    grad[idx1] = r.grad[idx0.size :]
    return PenaltyValue(r.value, grad)
