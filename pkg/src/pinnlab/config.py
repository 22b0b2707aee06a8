"""Run configuration: JSON on disk, validated with pydantic, unknown keys rejected."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat, PositiveInt
from pydantic import ValidationError, model_validator

from pinnlab.loss import LossWeights
from pinnlab.netjet import NetworkSpec
from pinnlab.problems import Potential, ProblemConfig, RectDomain, ViscosityModel
from pinnlab.train import SchedulePlan


class ConfigError(ValueError):
    """Configuration failed validation; ``problems`` holds every offending key."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{k}: {m}" for k, m in problems))


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DomainCfg(_Model):
    x_min: float = 0.0
    x_max: float = 1.0
    y_min: float = 0.0
    y_max: float = 1.0
    T: PositiveFloat = 2.0

    @model_validator(mode="after")
    def _ordered(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("need x_min < x_max and y_min < y_max")
        return self


class ViscosityCfg(_Model):
    nu1: PositiveFloat = 1.0
    nu2: PositiveFloat = 1.0


class ProblemCfg(_Model):
    system: Literal["CH", "NSCH"] = "NSCH"
    mode: Literal["manufactured", "physical"] = "manufactured"
    domain: DomainCfg = Field(default_factory=DomainCfg)
    potential: Literal["landau"] = "landau"
    viscosity: ViscosityCfg = Field(default_factory=ViscosityCfg)
    carrier: Literal["rotational", "zero"] = Field("rotational", description="CH only: transporting velocity")
    initial_phi: Literal["cosine", "zero"] = Field("cosine", description="physical mode only")
    boundary_u: bool = Field(True, description="NSCH: penalise the velocity boundary trace")


class NetworkCfg(_Model):
    widths: Optional[list[PositiveInt]] = Field(
        None, description="full layer widths incl. input 3 and outputs; default [3,64,64,64,5] (NSCH) or [3,64,64,64,2] (CH)")
    activation: Literal["tanh"] = "tanh"
    clamp_phi: bool = False


class SamplingCfg(_Model):
    n_int: PositiveInt = 500
    n_bdy: PositiveInt = 100
    n_ic: PositiveInt = 100
    slabs: PositiveInt = Field(16, description="time slabs for L4L2 norms")

    @property
    def counts(self) -> tuple[int, int, int]:
        return self.n_int, self.n_bdy, self.n_ic


class WeightsCfg(_Model):
    alpha1: PositiveFloat = 1.0
    alpha2: PositiveFloat = 1.0
    alpha3: PositiveFloat = 1.0
    alpha4: PositiveFloat = 1.0
    alpha_mu: PositiveFloat = 1.0
    lambda1: NonNegativeFloat = 0.0
    lambda2: NonNegativeFloat = 0.0
    w_ic: PositiveFloat = 1000.0
    norm_kind: Literal["auto", "L2L2", "L4L2"] = Field("auto", description="auto: L4L2 for CH, L2L2 for NSCH")


class ScheduleCfg(_Model):
    segments: PositiveInt = 4
    steps_per_segment: PositiveInt = 12500
    lr0: PositiveFloat = 1e-2
    decay: float = Field(0.5, gt=0, le=1)
    decay_every: Optional[PositiveInt] = Field(10000, description="steps between decays; null: steps_per_segment // 2")
    restart_lr: bool = Field(False, description="reset to lr0 and the decay clock at each segment start")


class EvaluationCfg(_Model):
    every: int = Field(0, ge=0, description="record MC errors every k steps (0: never)")
    n_points: PositiveInt = 20000
    loss_n_int: PositiveInt = 8000
    loss_n_bdy: PositiveInt = 2000
    loss_n_ic: PositiveInt = 2000
    seed: int = 12345

    @property
    def loss_counts(self) -> tuple[int, int, int]:
        return self.loss_n_int, self.loss_n_bdy, self.loss_n_ic


def _default_ladder() -> list[float]:
    return [float(f"{10 ** (k / 4):.4g}") for k in range(8, -13, -1)]


class RunConfig(_Model):
    problem: ProblemCfg = Field(default_factory=ProblemCfg)
    network: NetworkCfg = Field(default_factory=NetworkCfg)
    sampling: SamplingCfg = Field(default_factory=SamplingCfg)
    weights: WeightsCfg = Field(default_factory=WeightsCfg)
    schedule: ScheduleCfg = Field(default_factory=ScheduleCfg)
    evaluation: EvaluationCfg = Field(default_factory=EvaluationCfg)
    seed: int = 0
    ladder: list[PositiveFloat] = Field(default_factory=_default_ladder,
                                        description="descending loss targets that trigger checkpoints")
    ladder_final_segment_only: bool = True
    output_dir: str = "runs/default"

    @model_validator(mode="after")
    def _consistent(self):
        w = self.network.widths
        n_out = 2 if self.problem.system == "CH" else 5
        if w is not None and (len(w) < 2 or w[0] != 3 or w[-1] != n_out):
            raise ValueError(f"network.widths must start at 3 and end at {n_out} for {self.problem.system}")
        if self.problem.system == "CH" and self.problem.mode == "manufactured" \
                and self.problem.carrier != "rotational":
            raise ValueError("manufactured CH runs need problem.carrier = rotational")
        return self

    # builders for the library objects
    def problem_config(self) -> ProblemConfig:
        p = self.problem
        return ProblemConfig(system=p.system, mode=p.mode, domain=RectDomain(**p.domain.model_dump()),
                             potential=Potential(p.potential),
                             viscosity=ViscosityModel(**p.viscosity.model_dump()),
                             carrier=p.carrier, initial_phi=p.initial_phi, boundary_u=p.boundary_u)

    def network_spec(self) -> NetworkSpec:
        names = self.problem_config().required_outputs
        widths = self.network.widths or [3, 64, 64, 64, len(names)]
        return NetworkSpec(tuple(widths), names, self.network.activation, self.network.clamp_phi)

    def loss_weights(self) -> LossWeights:
        return LossWeights(**self.weights.model_dump())

    def schedule_plan(self) -> SchedulePlan:
        return SchedulePlan(**self.schedule.model_dump())

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        data = self.to_dict()
        for key, value in overrides.items():
            set_dotted(data, key, value)
        return validate_config(data)


def set_dotted(data: dict, key: str, value) -> None:
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def validate_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        problems = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            problems.append((loc, err["msg"]))
        raise ConfigError(problems) from None


def load_config(path, overrides: dict[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([("<file>", f"malformed JSON: {exc}")]) from None
    for key, value in (overrides or {}).items():
        set_dotted(data, key, value)
    return validate_config(data)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def describe_config(model: type[BaseModel] = RunConfig, prefix: str = "") -> list[str]:
    """One line per config leaf: dotted key, default, description."""
    lines = []
    instance = model()
    for name, f in model.model_fields.items():
        key = f"{prefix}{name}"
        default = getattr(instance, name)
        if isinstance(default, BaseModel):
            lines.extend(describe_config(type(default), key + "."))
            continue
        desc = f"  ({f.description})" if f.description else ""
        lines.append(f"{key} = {json.dumps(default)}{desc}")
    return lines
