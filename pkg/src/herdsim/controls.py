"""Separated-variable herder controls ``u(t, mu) = h(t) g(mu)``.

``h`` is piecewise constant on ``K_T`` uniform intervals of ``[0, T]`` with
values in the box ``[-u_max, u_max]^{d x l}``; an optional square-wave
perturbation ``A sign(sin(2 pi j t / T))`` can be superposed (used by the
stability experiment). ``g`` is drawn from a small dictionary of bounded,
W1-Lipschitz functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_G_CHECK_PAIRS = 64


class ControlBoxError(ValueError):
    pass


@dataclass(frozen=True)
class GFunctional:
    """Measure functional ``g: W1(R^d) -> R^l``.

    ``constant``        g(mu) = c                       (L = 0, M = |c|)
    ``tanh_statistic``  g_k(mu) = tanh(int phi_k dmu),  phi_k(x) = tanh(x_{k mod d} - c_k)

    Each ``phi_k`` is 1-Lipschitz and bounded by 1, so the Euclidean norm of
    ``g`` is bounded by ``sqrt(l)`` and ``g`` is ``sqrt(l)``-Lipschitz for W1.
    """

    tag: str
    params: tuple[float, ...]
    dim: int = 1
    lipschitz: float = field(init=False)
    bound: float = field(init=False)

    def __post_init__(self):
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if not params:
            raise ValueError("g needs at least one parameter (l >= 1)")
        if not all(math.isfinite(p) for p in params):
            raise ValueError("g parameters must be finite")
        if self.tag == "constant":
            lip, bound = 0.0, float(np.linalg.norm(params))
        elif self.tag == "tanh_statistic":
            lip = bound = math.sqrt(len(params))
        else:
            raise ValueError(f"unknown g tag {self.tag!r}; expected 'constant' or 'tanh_statistic'")
        object.__setattr__(self, "lipschitz", lip)
        object.__setattr__(self, "bound", bound)
        self._check_certificates()

    @property
    def ell(self) -> int:
        return len(self.params)

    def evaluate(self, points: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Value on the empirical measure(s) of ``points``.

        ``points`` has shape ``(n, d)`` or ``(R, n, d)``; the result has shape
        ``(l,)`` or ``(R, l)``.
        """
        pts = np.asarray(points, dtype=np.float64)
        lead = pts.shape[:-2]
        c = np.asarray(self.params)
        if self.tag == "constant":
            return np.broadcast_to(c, lead + (c.size,)).copy()
        cols = np.arange(c.size) % self.dim
        phi = np.tanh(pts[..., cols] - c)
        if weights is None:
            avg = phi.mean(axis=-2)
        else:
            w = np.asarray(weights, dtype=np.float64)
            avg = np.sum(w[:, None] * phi, axis=-2) / w.sum()
        return np.tanh(avg)

    def __call__(self, mu) -> np.ndarray:
        return self.evaluate(mu.points, mu.weights)

    def _check_certificates(self) -> None:
        from .measures import EmpiricalMeasure, wasserstein1

        rng = np.random.default_rng(7)
        for _ in range(_G_CHECK_PAIRS // 8):
            x = rng.normal(scale=2.0, size=(16, self.dim))
            y = x + rng.normal(scale=rng.uniform(0.01, 1.0), size=x.shape)
            mu, nu = EmpiricalMeasure(x), EmpiricalMeasure(y)
            gx, gy = self(mu), self(nu)
            if max(np.linalg.norm(gx), np.linalg.norm(gy)) > self.bound + 1e-12:
                raise ValueError(f"g {self.tag}: bound certificate {self.bound} violated")
            if np.linalg.norm(gx - gy) > self.lipschitz * wasserstein1(mu, nu) + 1e-12:
                raise ValueError(f"g {self.tag}: Lipschitz certificate {self.lipschitz} violated")

    def to_dict(self) -> dict:
        key = "c" if self.tag == "constant" else "centers"
        return {"tag": self.tag, key: list(self.params)}

    @classmethod
    def from_dict(cls, data: dict, dim: int) -> GFunctional:
        key = "c" if data["tag"] == "constant" else "centers"
        return cls(data["tag"], tuple(data[key]), dim=dim)


@dataclass(frozen=True)
class ControlLaw:
    h: np.ndarray  # (K_T, d, l)
    g: GFunctional
    T: float
    u_max: float = 2.0
    osc_amplitude: float = 0.0
    osc_frequency: int = 0

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64)
        if h.ndim != 3:
            raise ValueError("h must have shape (K_T, d, l)")
        if h.shape[1] != self.g.dim or h.shape[2] != self.g.ell:
            raise ValueError(f"h shape {h.shape} does not match g (d={self.g.dim}, l={self.g.ell})")
        if not self.T > 0:
            raise ValueError("time horizon T must be > 0")
        peak = float(np.max(np.abs(h))) + abs(self.osc_amplitude) if h.size else 0.0
        if peak > self.u_max + 1e-12:
            raise ControlBoxError(f"control values reach {peak}, outside the box [-{self.u_max}, {self.u_max}]")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def n_intervals(self) -> int:
        return self.h.shape[0]

    @property
    def dim(self) -> int:
        return self.h.shape[1]

    @property
    def ell(self) -> int:
        return self.h.shape[2]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.h) and self.osc_amplitude == 0.0

    def _interval(self, t: float) -> int:
        k = int(math.floor(t / self.T * self.n_intervals + 1e-12))
        return min(max(k, 0), self.n_intervals - 1)

    def h_at(self, t: float) -> np.ndarray:
        val = self.h[self._interval(t)].copy()
        if self.osc_amplitude and self.osc_frequency:
            val += self.osc_amplitude * np.sign(math.sin(2 * math.pi * self.osc_frequency * t / self.T))
        return val

    def _square_integral(self, t: float) -> float:
        # integral over [0, t] of sign(sin(2 pi j s / T))
        period = self.T / self.osc_frequency
        rem = t % period
        return rem if rem <= 0.5 * period else period - rem

    def h_mean(self, t0: float, t1: float) -> np.ndarray:
        """Exact average of ``h`` over ``[t0, t1]``."""
        if t1 <= t0:
            return self.h_at(t0)
        edges = np.linspace(0.0, self.T, self.n_intervals + 1)
        lo = np.clip(edges[:-1], t0, t1)
        hi = np.clip(edges[1:], t0, t1)
        frac = (hi - lo) / (t1 - t0)
        if t1 > self.T:
            frac[-1] += (t1 - max(t0, self.T)) / (t1 - t0)
        val = np.tensordot(frac, self.h, axes=1)
        if self.osc_amplitude and self.osc_frequency:
            val = val + self.osc_amplitude * (self._square_integral(t1) - self._square_integral(t0)) / (t1 - t0)
        return val

    def u(self, t0: float, t1: float, points: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Step-averaged control on the empirical measure(s) of ``points``."""
        hm = self.h_mean(t0, t1)
        gv = self.g.evaluate(points, weights)
        return gv @ hm.T

    def with_h(self, h: np.ndarray) -> ControlLaw:
        return ControlLaw(h, self.g, self.T, self.u_max, self.osc_amplitude, self.osc_frequency)

    def with_oscillation(self, amplitude: float, frequency: int) -> ControlLaw:
        return ControlLaw(self.h, self.g, self.T, self.u_max, amplitude, frequency)

    def to_dict(self) -> dict:
        out = {"h": self.h.tolist(), "g": self.g.to_dict()}
        if self.osc_amplitude:
            out["oscillation"] = {"amplitude": self.osc_amplitude, "frequency": self.osc_frequency}
        return out

    @classmethod
    def zero(cls, T: float, dim: int = 1, ell: int = 2, n_intervals: int = 8, u_max: float = 2.0) -> ControlLaw:
        g = GFunctional("constant", (0.0,) * ell, dim=dim)
        return cls(np.zeros((n_intervals, dim, ell)), g, T, u_max)

    def to_csv_rows(self, herder: int) -> list[list]:
        rows = []
        for k in range(self.n_intervals):
            rows.append([herder, k] + [repr(float(v)) for v in self.h[k].ravel()] + [self.g.tag])
        return rows


def controls_to_csv(controls: list[ControlLaw], path=None) -> str | None:
    """Interval index, flattened ``h`` matrix entries, g tag per row.

    Returns the text when ``path`` is None.
    """
    import csv
    import io

    d, ell = controls[0].dim, controls[0].ell
    header = ["herder", "interval"] + [f"h{r + 1}{c + 1}" for r in range(d) for c in range(ell)] + ["g"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i, law in enumerate(controls):
        w.writerows(law.to_csv_rows(i))
    if path is None:
        return buf.getvalue()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    return None
