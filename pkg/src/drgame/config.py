"""Run configuration: YAML document validated against a strict schema."""
from __future__ import annotations

from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .model import ModelError
from .registry import build_model, builtin_model

TASKS = ("validate", "solve-bsde", "solve-pde", "cross-check", "saddle-audit", "truncation-audit")
Task = Literal["validate", "solve-bsde", "solve-pde", "cross-check", "saddle-audit",
               "truncation-audit"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Strict):
    builtin: Optional[str] = None
    inline: Optional[dict] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.builtin is None) == (self.inline is None):
            raise ValueError("model needs exactly one of 'builtin' or 'inline'")
        return self

    def build(self):
        return builtin_model(self.builtin) if self.builtin else build_model(self.inline)


class BasisBlock(_Strict):
    family: Literal["poly", "bins"] = "poly"
    degree: int = 4
    bins: int = 64
    local_linear: bool = False


class TruncationBlock(_Strict):
    n: list[float] = [1, 2, 5, 50]
    m: list[float] = [1, 2, 5, 50]
    tolerance: float = 1e-8


class SolverBlock(_Strict):
    steps: int = 50
    paths: int = 20000
    basis: Optional[BasisBlock] = None
    generator: Literal["hamiltonian", "phi", "zero"] = "hamiltonian"
    truncation: TruncationBlock = TruncationBlock()


class PDEBlock(_Strict):
    lower: list[float]
    upper: list[float]
    nodes: list[int]
    coarse_check: bool = True
    residual_constant: float = 1.0


class ConstantChoice(_Strict):
    constant: int


class RandomChoice(_Strict):
    random: int


class FixedStepChoice(_Strict):
    fixed_step: int


class BandShiftChoice(_Strict):
    band_shift: float


class DeviationBlock(_Strict):
    player: Literal["min", "max"]
    control: Union[Literal["saddle"], ConstantChoice, RandomChoice] = "saddle"
    stop: Union[Literal["saddle", "never"], FixedStepChoice, BandShiftChoice] = "saddle"
    label: str = ""


class GameBlock(_Strict):
    epsilon_stop: Optional[float] = None
    paths: Optional[int] = None
    value_source: Literal["bsde", "pde"] = "bsde"
    allowance: float = 0.03
    n_se: float = 3.0
    deviations: Optional[list[DeviationBlock]] = None


class ValidateBlock(_Strict):
    probes: int = 1000
    radius: float = 10.0


class CrossCheckBlock(_Strict):
    bias_allowance: float = 0.01
    target: float = 0.03
    probe_steps: list[int] = []


class RunConfig(_Strict):
    seed: int
    tasks: list[Task]
    model: ModelBlock
    solver: SolverBlock = SolverBlock()
    pde: Optional[PDEBlock] = None
    game: GameBlock = GameBlock()
    validate_: ValidateBlock = ValidateBlock()
    cross_check: CrossCheckBlock = CrossCheckBlock()
    output_dir: Optional[str] = None

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    @model_validator(mode="before")
    @classmethod
    def _rename(cls, data):
        if isinstance(data, dict) and "validate" in data:
            data = dict(data)
            data["validate_"] = data.pop("validate")
        return data

    @model_validator(mode="after")
    def _blocks_for_tasks(self):
        needs_pde = {"solve-pde", "cross-check"} & set(self.tasks)
        if "saddle-audit" in self.tasks and self.game.value_source == "pde":
            needs_pde.add("saddle-audit")
        if needs_pde and self.pde is None:
            raise ValueError(f"tasks {sorted(needs_pde)} need a 'pde' block")
        return self

    def echo(self) -> dict:
        d = self.model_dump(mode="json", exclude_none=True)
        d["validate"] = d.pop("validate_")
        return d


def _format(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]).replace("validate_", "validate")
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(document: str) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    try:
        data = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"config parse error{where}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format(exc)) from None
    try:
        cfg.model.build()
    except ModelError as exc:
        raise ConfigError(f"model: {exc}") from None
    return cfg
