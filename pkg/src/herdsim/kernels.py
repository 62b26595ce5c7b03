"""Globally Lipschitz, odd interaction kernels R^d -> R^d.

Three radial families are available, all of the form ``K(y) = f(|y|) y``:

* ``linear``      K(y) = a y
* ``saturating``  K(y) = a y / (1 + |y|)
* ``tanh_radial`` K(y) = (a / s) tanh(s |y|) y / |y|,  K(0) = 0

Each has Lipschitz constant ``|a|``. The constant is re-checked by random
sampling when a kernel is built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend

FAMILIES = {"linear": 0, "saturating": 1, "tanh_radial": 2}

_CERT_PAIRS = 10_000
_CERT_TOL = 1e-9


class LipschitzCertificateError(ValueError):
    """Raised when sampled difference quotients exceed the certified constant."""


@dataclass(frozen=True)
class KernelSpec:
    family: str
    a: float = 0.0
    s: float = 1.0
    dim: int = 1
    lipschitz: float = field(init=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {sorted(FAMILIES)}")
        if self.dim < 1:
            raise ValueError("kernel dimension must be >= 1")
        if not np.isfinite(self.a):
            raise ValueError("kernel amplitude must be finite")
        if self.family == "tanh_radial" and not self.s > 0:
            raise ValueError("tanh_radial scale s must be > 0")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "lipschitz", abs(self.a))
        self._certify()

    @property
    def code(self) -> int:
        return FAMILIES[self.family]

    @property
    def is_zero(self) -> bool:
        return self.a == 0.0

    def __call__(self, y) -> np.ndarray:
        return eval_kernel(self, y)

    def _certify(self) -> None:
        if self.is_zero:
            return
        rng = np.random.default_rng(20240611)
        n = _CERT_PAIRS
        scale = 10.0 ** rng.uniform(-3, 1, size=(n, 1))
        y1 = rng.standard_normal((n, self.dim)) * scale
        y2 = y1 + rng.standard_normal((n, self.dim)) * scale * 10.0 ** rng.uniform(-4, 0, size=(n, 1))
        num = np.linalg.norm(eval_kernel(self, y1) - eval_kernel(self, y2), axis=1)
        den = np.linalg.norm(y1 - y2, axis=1)
        ok = den > 0
        # rounding in K(y1) - K(y2) alone can add ~eps L |y| / |y1 - y2|
        size = np.linalg.norm(y1, axis=1) + np.linalg.norm(y2, axis=1)
        slack = _CERT_TOL + 8.0 * np.finfo(float).eps * self.lipschitz * size[ok] / den[ok]
        excess = num[ok] / den[ok] - self.lipschitz - slack
        worst = float(np.max(num[ok] / den[ok]))
        if np.any(excess > 0):
            raise LipschitzCertificateError(
                f"{self.family} kernel: sampled quotient {worst} exceeds certificate {self.lipschitz}"
            )

    def to_dict(self) -> dict:
        out = {"family": self.family, "a": self.a}
        if self.family == "tanh_radial":
            out["s"] = self.s
        return out

    @classmethod
    def from_dict(cls, data: dict, dim: int) -> KernelSpec:
        return cls(family=data["family"], a=data.get("a", 0.0), s=data.get("s", 1.0), dim=dim)

    @classmethod
    def zero(cls, dim: int = 1) -> KernelSpec:
        return cls("linear", 0.0, dim=dim)


def eval_kernel(k: KernelSpec, y) -> np.ndarray:
    """Evaluate ``k`` at a point (shape ``(d,)``) or a batch (shape ``(n, d)``)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != k.dim:
        raise ValueError(f"kernel dimension {k.dim} does not match input dimension {y.shape[-1]}")
    r = np.linalg.norm(y, axis=-1, keepdims=True)
    if k.family == "linear":
        return k.a * y
    if k.family == "saturating":
        return k.a * y / (1.0 + r)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(r > 0, (k.a / k.s) * np.tanh(k.s * r) / np.where(r > 0, r, 1.0), 0.0)
    return f * y


def lipschitz_constant(k: KernelSpec) -> float:
    return k.lipschitz


def interaction_sum(k: KernelSpec, sources: np.ndarray, weights: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """``out[j] = sum_i weights[i] K(sources[i] - targets[j])``.

    Linear kernels reduce to ``a (sum_i w_i x_i - W x_j)``; everything else
    goes to the active backend.
    """
    sources = np.asarray(sources, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if sources.shape[-1] != k.dim or targets.shape[-1] != k.dim:
        raise ValueError(f"kernel dimension {k.dim} does not match point dimension")
    if k.is_zero or sources.shape[0] == 0:
        return np.zeros(targets.shape)
    if k.family == "linear":
        return k.a * (np.sum(weights[:, None] * sources, axis=0) - weights.sum() * targets)
    return _backend.interaction_sum(k.code, k.a, k.s, sources, weights, targets)


@dataclass(frozen=True)
class KernelSet:
    """Follower-follower (H1), herder-herder (H2), herder-on-follower (K1)
    and follower-on-herder (K2) kernels sharing one dimension."""

    H1: KernelSpec
    H2: KernelSpec
    K1: KernelSpec
    K2: KernelSpec

    def __post_init__(self):
        dims = {k.dim for k in (self.H1, self.H2, self.K1, self.K2)}
        if len(dims) != 1:
            raise ValueError(f"kernels must share one dimension, got {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.H1.dim

    @property
    def L(self) -> float:
        return max(k.lipschitz for k in (self.H1, self.H2, self.K1, self.K2))

    @classmethod
    def zero(cls, dim: int = 1) -> KernelSet:
        z = KernelSpec.zero(dim)
        return cls(z, z, z, z)

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict() for name in ("H1", "H2", "K1", "K2")}

    @classmethod
    def from_dict(cls, data: dict, dim: int) -> KernelSet:
        return cls(**{name: KernelSpec.from_dict(data[name], dim) for name in ("H1", "H2", "K1", "K2")})
