"""Experiment configuration: a versioned YAML/JSON tree validated up front."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .controls import ControlLaw, GFunctional
from .cost import ControlCost, CostSpec, Lagrangian
from .kernels import KernelSet, KernelSpec
from .mckean_vlasov import PicardConfig
from .particles import InitialLaw, NoiseLevel
from .presets import Dynamics

SCHEMA_VERSION = 1
EXPERIMENTS = ("simulate", "mkv", "fp", "chaos_rate", "equivalence", "stability", "gamma_gap", "optimize")


class ConfigError(ValueError):
    """All violations found in one config, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n" + "\n".join(f"  {p}" for p in problems))


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_default=True)


class KernelCfg(_Model):
    family: Literal["linear", "saturating", "tanh_radial"] = "linear"
    a: float = 0.0
    s: float = Field(1.0, gt=0)


class KernelsCfg(_Model):
    H1: KernelCfg = KernelCfg()
    H2: KernelCfg = KernelCfg()
    K1: KernelCfg = KernelCfg()
    K2: KernelCfg = KernelCfg()


class LawCfg(_Model):
    family: Literal["gaussian", "uniform"] = "gaussian"
    mean: list[float] = [0.0]
    std: float = Field(1.0, gt=0)
    low: list[float] = [-1.0]
    high: list[float] = [1.0]


class DynamicsCfg(_Model):
    dim: int = Field(1, ge=1)
    T: float = Field(1.0, gt=0)
    dt: float = Field(0.01, gt=0)
    sigma: float = Field(0.25, ge=0)
    N: int = Field(64, ge=1)
    M: int = Field(10000, ge=2)
    kernels: KernelsCfg = KernelsCfg()
    initial_law: LawCfg = LawCfg()
    herders: list[list[float]] = []


class GCfg(_Model):
    tag: Literal["constant", "tanh_statistic"] = "constant"
    c: Optional[list[float]] = None
    centers: Optional[list[float]] = None


class OscillationCfg(_Model):
    amplitude: float = 0.0
    frequency: int = Field(0, ge=0)


class LawSpecCfg(_Model):
    h: list[list[list[float]]]
    g: GCfg
    oscillation: Optional[OscillationCfg] = None


class ControlCfg(_Model):
    u_max: float = Field(2.0, gt=0)
    intervals: int = Field(8, ge=1)
    laws: list[LawSpecCfg] = []


class LagrangianCfg(_Model):
    tag: Literal["tracking", "constant"] = "tracking"
    x_target: list[float] = [0.0]
    y_target: list[list[float]] = []
    alpha: float = Field(1.0, ge=0)
    beta: float = Field(0.0, ge=0)
    R: float = Field(3.0, gt=0)
    value: float = 0.0


class PsiCfg(_Model):
    lam: float = Field(0.0, ge=0)
    kappa: float = Field(0.0, ge=0)
    norm: Literal["l1", "frobenius"] = "l1"


class CostCfg(_Model):
    lagrangian: LagrangianCfg = LagrangianCfg()
    psi: PsiCfg = PsiCfg()


class PicardCfg(_Model):
    gamma: Optional[float] = Field(None, gt=0)
    tol: float = Field(1e-3, gt=0)
    max_iter: int = Field(50, ge=1)


class FPCfg(_Model):
    cells: int = Field(512, ge=8)
    cfl: float = Field(0.3, gt=0, le=1.0 / 3.0)
    flux: Literal["sg", "upwind"] = "sg"
    escape_tol: float = Field(1e-6, gt=0)
    snapshots: int = Field(101, ge=2)
    x_min: Optional[float] = None
    x_max: Optional[float] = None


class ChaosCfg(_Model):
    N_grid: list[int] = [8, 16, 32, 64, 128, 256, 512]
    M_ref: int = Field(8192, ge=2)
    max_blocks: int = Field(64, ge=1)
    max_slope: float = -0.35


class EquivalenceCfg(_Model):
    cells: list[int] = [512, 1024]
    M: list[int] = [10000, 20000]
    max_distance: float = Field(0.05, gt=0)
    max_moment_change: float = Field(0.05, gt=0)


class StabilityCfg(_Model):
    j_grid: list[int] = [4, 8, 16, 32, 64]
    amplitude: float = 0.5
    min_drop: float = Field(2.0, gt=0)


class OptimizerCfg(_Model):
    method: Literal["nelder-mead", "pattern"] = "nelder-mead"
    budget: int = Field(120, ge=3)
    target: Literal["FN", "F"] = "FN"
    mc_replicas: int = Field(32, ge=1)
    free_g: bool = False
    sparse_poll: bool = True


class GammaGapCfg(_Model):
    N_grid: list[int] = [16, 64, 256]


class OutputCfg(_Model):
    binary_trajectory: bool = False


class ExperimentConfig(_Model):
    schema_version: int = SCHEMA_VERSION
    experiment: Literal[EXPERIMENTS]  # type: ignore[valid-type]
    seed: int = Field(0, ge=0, lt=2**64)
    replicas: int = Field(1, ge=1)
    output_dir: str = "out"
    dynamics: DynamicsCfg = DynamicsCfg()
    control: ControlCfg = ControlCfg()
    cost: CostCfg = CostCfg()
    picard: PicardCfg = PicardCfg()
    fp: FPCfg = FPCfg()
    chaos: ChaosCfg = ChaosCfg()
    equivalence: EquivalenceCfg = EquivalenceCfg()
    stability: StabilityCfg = StabilityCfg()
    optimizer: OptimizerCfg = OptimizerCfg()
    gamma_gap: GammaGapCfg = GammaGapCfg()
    output: OutputCfg = OutputCfg()

    @model_validator(mode="after")
    def _cross_checks(self):
        problems = []
        if self.schema_version != SCHEMA_VERSION:
            problems.append(f"schema_version: unsupported version {self.schema_version} (expected {SCHEMA_VERSION})")
        dy = self.dynamics
        d = dy.dim
        steps = dy.T / dy.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            problems.append(f"dynamics.dt: T={dy.T} is not an integer multiple of dt={dy.dt}")
        law = dy.initial_law
        if law.family == "gaussian" and len(law.mean) != d:
            problems.append(f"dynamics.initial_law.mean: length {len(law.mean)} does not match dim={d}")
        if law.family == "uniform":
            if len(law.low) != d or len(law.high) != d:
                problems.append(f"dynamics.initial_law.low/high: lengths must equal dim={d}")
            elif any(lo >= hi for lo, hi in zip(law.low, law.high)):
                problems.append("dynamics.initial_law.high: every entry must exceed low")
        for i, y in enumerate(dy.herders):
            if len(y) != d:
                problems.append(f"dynamics.herders.{i}: length {len(y)} does not match dim={d}")
        laws = self.control.laws
        if laws and len(laws) != len(dy.herders):
            problems.append(f"control.laws: {len(laws)} laws for {len(dy.herders)} herders")
        for i, lw in enumerate(laws):
            h = np.asarray(lw.h, dtype=float)
            if h.ndim != 3 or h.shape[1] != d:
                problems.append(f"control.laws.{i}.h: expected shape (K_T, {d}, l), got {h.shape}")
            elif np.max(np.abs(h)) + (abs(lw.oscillation.amplitude) if lw.oscillation else 0.0) > self.control.u_max:
                problems.append(f"control.laws.{i}.h: values leave the box [-u_max, u_max]")
            params = lw.g.c if lw.g.tag == "constant" else lw.g.centers
            if params is None:
                key = "c" if lw.g.tag == "constant" else "centers"
                problems.append(f"control.laws.{i}.g.{key}: required for tag {lw.g.tag!r}")
            elif h.ndim == 3 and len(params) != h.shape[2]:
                problems.append(f"control.laws.{i}.g: {len(params)} parameters but h has l={h.shape[2]}")
        if self.cost.lagrangian.tag == "tracking":
            if len(self.cost.lagrangian.x_target) != d:
                problems.append(f"cost.lagrangian.x_target: length must equal dim={d}")
            yt = self.cost.lagrangian.y_target
            if yt and (len(yt) != len(dy.herders) or any(len(y) != d for y in yt)):
                problems.append("cost.lagrangian.y_target: needs one dim-vector per herder")
        for name, grid in (("chaos.N_grid", self.chaos.N_grid), ("gamma_gap.N_grid", self.gamma_gap.N_grid),
                           ("stability.j_grid", self.stability.j_grid)):
            if not grid or any(v < 1 for v in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
                problems.append(f"{name}: must be a strictly increasing list of positive integers")
        if self.experiment == "chaos_rate" and self.chaos.N_grid and self.chaos.M_ref < max(self.chaos.N_grid):
            problems.append("chaos.M_ref: must be at least the largest N")
        eq = self.equivalence
        if len(eq.cells) != len(eq.M) or not eq.cells:
            problems.append("equivalence.cells/M: need equal, nonempty lists")
        if self.experiment in ("fp", "equivalence") and d != 1:
            problems.append("dynamics.dim: the grid solver supports dim=1 only")
        if self.experiment in ("stability", "gamma_gap", "optimize") and not dy.herders:
            problems.append(f"dynamics.herders: experiment {self.experiment!r} needs at least one herder")
        if problems:
            raise ValueError("\n".join(problems))
        return self

    # ------------------------------------------------------------ builders

    def kernel_set(self) -> KernelSet:
        d = self.dynamics.dim
        ks = self.dynamics.kernels
        mk = lambda c: KernelSpec(c.family, c.a, c.s, dim=d)  # noqa: E731
        return KernelSet(H1=mk(ks.H1), H2=mk(ks.H2), K1=mk(ks.K1), K2=mk(ks.K2))

    def initial_law(self) -> InitialLaw:
        law = self.dynamics.initial_law
        if law.family == "gaussian":
            return InitialLaw("gaussian", mean=tuple(law.mean), std=law.std)
        return InitialLaw("uniform", low=tuple(law.low), high=tuple(law.high))

    def controls(self) -> list[ControlLaw]:
        T, d, c = self.dynamics.T, self.dynamics.dim, self.control
        if not c.laws:
            return [ControlLaw.zero(T, d, 2, c.intervals, c.u_max) for _ in self.dynamics.herders]
        out = []
        for lw in c.laws:
            g = GFunctional(lw.g.tag, tuple(lw.g.c if lw.g.tag == "constant" else lw.g.centers), dim=d)
            osc = lw.oscillation or OscillationCfg()
            out.append(ControlLaw(np.asarray(lw.h, dtype=float), g, T, c.u_max, osc.amplitude, osc.frequency))
        return out

    def dynamics_obj(self) -> Dynamics:
        d = self.dynamics
        Y0 = np.asarray(d.herders, dtype=float).reshape(len(d.herders), d.dim)
        return Dynamics(self.kernel_set(), NoiseLevel(d.sigma), self.initial_law(), Y0, d.T, self.controls())

    def cost_spec(self) -> CostSpec:
        lg, ps = self.cost.lagrangian, self.cost.psi
        yt = lg.y_target or [[0.0] * self.dynamics.dim for _ in self.dynamics.herders] or [[0.0]]
        lag = Lagrangian(lg.tag, tuple(lg.x_target), tuple(tuple(y) for y in yt), lg.alpha, lg.beta, lg.R, lg.value)
        return CostSpec(lag, ControlCost(ps.lam, ps.kappa, ps.norm))

    def picard_cfg(self) -> PicardConfig:
        p = self.picard
        return PicardConfig(p.gamma, p.tol, p.max_iter)

    # ------------------------------------------------------------ io

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def canonical_json(self) -> str:
        return json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    def content_hash(self) -> str:
        """Hash of everything except ``output_dir``: where results land does
        not change what they are."""
        body = {k: v for k, v in self.canonical().items() if k != "output_dir"}
        text = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.canonical(), sort_keys=True)


def _format_errors(err: ValidationError) -> list[str]:
    problems = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"])
        msg = e["msg"]
        if e["type"] == "value_error" and not loc:
            # cross-field checks arrive as one newline-joined message
            problems.extend(m for m in msg.removeprefix("Value error, ").split("\n") if m)
        else:
            problems.append(f"{loc}: {msg}" if loc else msg)
    return problems


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(["<root>: configuration must be a mapping"])
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def load(path) -> ExperimentConfig:
    """Read a YAML or JSON config (JSON is valid YAML)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError([f"<file>: not valid YAML/JSON ({err})"]) from None
    return from_dict(data if data is not None else {})
