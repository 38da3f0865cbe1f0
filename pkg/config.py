"""Run configuration: one JSON document per run, validated before any compute."""

from __future__ import annotations

import copy
import difflib
import hashlib
import json
from typing import Annotated, Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from distributions import NIG, Degenerate, NegPareto, Normal, Role, Stable, StepLaw
from errors import ConfigError, DomainError
from gou import EULER_SDE, GouParams
from harness import ExperimentSettings

VERSION = "0.3.0"

DEFAULT_N_GRID = (8, 32, 128, 512)
SIGMA_HINT = "σ is spelled sigma_xi / sigma_rho"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


# ---------------------------------------------------------------------------
# Laws
# ---------------------------------------------------------------------------


class NegParetoParams(_Strict):
    alpha: float


class NormalParams(_Strict):
    mu: float
    sigma2: float


class NIGParams(_Strict):
    alpha: float
    beta: float
    delta: float
    mu: float


class StableParams(_Strict):
    alpha: float
    beta: float
    c: float = 1.0


class DegenerateParams(_Strict):
    value: float


class NegParetoLaw(_Strict):
    family: Literal["negpareto"]
    params: NegParetoParams
    role: Literal["loss", "logreturn"] | None = None


class NormalLaw(_Strict):
    family: Literal["normal"]
    params: NormalParams
    role: Literal["loss", "logreturn"] | None = None


class NIGLaw(_Strict):
    family: Literal["nig"]
    params: NIGParams
    role: Literal["loss", "logreturn"] | None = None


class StableLaw(_Strict):
    family: Literal["stable"]
    params: StableParams
    role: Literal["loss", "logreturn"] | None = None


class DegenerateLaw(_Strict):
    family: Literal["degenerate"]
    params: DegenerateParams
    role: Literal["loss", "logreturn"] | None = None


LawConfig = Annotated[
    Union[NegParetoLaw, NormalLaw, NIGLaw, StableLaw, DegenerateLaw],
    Field(discriminator="family"),
]

_FAMILIES = {
    "negpareto": NegPareto,
    "normal": Normal,
    "nig": NIG,
    "stable": Stable,
    "degenerate": Degenerate,
}


def build_law(law: Any, role: Role) -> StepLaw:
    if law.role is not None and law.role != role.value:
        raise DomainError(f"law declared role {law.role!r} but sits in the {role.value} slot")
    family = _FAMILIES[law.family](**law.params.model_dump())
    return StepLaw(family, role)


class GouBlock(_Strict):
    mu_xi: float
    sigma_xi: float = Field(ge=0)
    mu_rho: float
    sigma_rho: float = Field(ge=0)

    def params(self) -> GouParams:
        return GouParams(self.mu_xi, self.sigma_xi, self.mu_rho, self.sigma_rho)


# ---------------------------------------------------------------------------
# Run config
# ---------------------------------------------------------------------------


class RunConfig(_Strict):
    process: Literal["discrete", "gou"] = "discrete"
    loss: LawConfig
    ret: LawConfig = Field(alias="return")
    gou: GouBlock | None = None
    y0: float = Field(1.0, ge=0)
    n: int = Field(100, ge=1)
    h: float = Field(1e-3, gt=0)
    T: float = Field(1.0, gt=0)
    alpha: float = Field(0.5, gt=0)
    p: int = Field(2, ge=0, le=6)
    q: float = Field(3.0, ge=2)
    paths: int = Field(10_000, ge=100)
    seed: int = Field(42, ge=0, lt=1 << 64)
    scheme: Literal["euler-sde", "exponential", "stable-euler"] = EULER_SDE
    workers: int = Field(1, ge=1)
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    n_max: int = Field(200, ge=1)
    mode: Literal["finite", "ultimate"] = "finite"
    barrier: float | None = Field(None, gt=0)
    slack: float | None = Field(None, ge=0)
    out: str | None = None

    @property
    def defaults_applied(self) -> list[str]:
        names = []
        for name, info in type(self).model_fields.items():
            if name not in self.model_fields_set and not info.is_required():
                names.append(info.alias or name)
        return sorted(names)

    def loss_law(self) -> StepLaw:
        return build_law(self.loss, Role.LOSS)

    def return_law(self) -> StepLaw:
        return build_law(self.ret, Role.LOGRETURN)

    def canonical(self) -> dict[str, Any]:
        """Everything that can change a result; output location and worker count cannot."""
        return self.model_dump(mode="json", by_alias=True, exclude={"out", "workers"})

    def with_overrides(self, **updates: Any) -> "RunConfig":
        """Copy with CLI flag overrides applied and validated like the file."""
        data = self.model_dump(mode="json", by_alias=True, exclude_unset=True)
        data.update({k: v for k, v in updates.items() if v is not None})
        return _validate(data)

    def gou_params(self) -> GouParams:
        return self.settings().limit_params()

    def settings(self, config_hash: str = "") -> ExperimentSettings:
        return ExperimentSettings(
            loss=self.loss_law(),
            ret=self.return_law(),
            y0=self.y0,
            T=self.T,
            h=self.h,
            alpha=self.alpha,
            p=self.p,
            paths=self.paths,
            seed=self.seed,
            n_grid=tuple(self.n_grid),
            n_max=self.n_max,
            scheme=self.scheme,
            workers=self.workers,
            mode=self.mode,
            slack=self.slack,
            barrier=self.barrier,
            params=None if self.gou is None else self.gou.params(),
            config_hash=config_hash,
            version=VERSION,
        )


def _known_keys() -> list[str]:
    keys: set[str] = set()
    pending: list[type[BaseModel]] = [RunConfig, GouBlock, NegParetoLaw, NegParetoParams, NormalParams, NIGParams, StableParams, DegenerateParams]
    for model in pending:
        for name, info in model.model_fields.items():
            keys.add(info.alias or name)
    return sorted(keys)


def _loc_path(loc: tuple[Any, ...]) -> str:
    # Discriminated unions insert the tag into the location; drop it.
    parts = [str(p) for p in loc if p not in _FAMILIES]
    return ".".join(parts)


def _config_error(exc: ValidationError) -> ConfigError:
    found = exc.errors()
    # A misspelt key also shows up as a missing one; report the spelling first.
    err = next((e for e in found if e["type"] == "extra_forbidden"), found[0])
    loc = tuple(err.get("loc", ()))
    path = _loc_path(loc)
    if err["type"] == "extra_forbidden":
        key = str(loc[-1]) if loc else ""
        if key == "sigma":
            hint = SIGMA_HINT
        else:
            close = difflib.get_close_matches(key, _known_keys(), n=1)
            hint = f"did you mean {close[0]!r}?" if close else None
        return ConfigError("unknown key", path=path, hint=hint)
    return ConfigError(err["msg"], path=path)


def _validate(data: Any) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise _config_error(exc) from exc
    # Domain rules live with the families; surface them with the field path.
    for slot, build in (("loss", cfg.loss_law), ("return", cfg.return_law)):
        try:
            build()
        except DomainError as exc:
            raise ConfigError(str(exc), path=f"{slot}.params") from exc
    return cfg


def parse_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc.msg} at line {exc.lineno} column {exc.colno}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return _validate(data)


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.canonical(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESETS: dict[str, dict[str, Any]] = {
    # Pareto losses of index 1.5 and totally left-skewed stable log-returns.
    "example1": {
        "loss": {"family": "negpareto", "params": {"alpha": 1.5}},
        "return": {"family": "stable", "params": {"alpha": 1.5, "beta": -1.0, "c": 1.0}},
        "scheme": "stable-euler",
    },
    "example2": {
        "loss": {"family": "negpareto", "params": {"alpha": 3.0}},
        "return": {"family": "nig", "params": {"alpha": 2.0, "beta": 0.0, "delta": 1.0, "mu": 0.1}},
    },
    "example3": {
        "loss": {"family": "normal", "params": {"mu": 1.0, "sigma2": 1.0}},
        "return": {"family": "normal", "params": {"mu": 0.3, "sigma2": 0.25}},
        "y0": 2.0,
        "T": 200.0,
        "mode": "ultimate",
    },
    "example4": {
        "loss": {"family": "normal", "params": {"mu": 1.0, "sigma2": 1.0}},
        "return": {"family": "nig", "params": {"alpha": 3.0, "beta": 0.0, "delta": 0.3, "mu": 0.2}},
        "y0": 2.0,
        "T": 200.0,
        "mode": "ultimate",
    },
    "example5": {
        "loss": {"family": "normal", "params": {"mu": 1.0, "sigma2": 1.0}},
        "return": {"family": "nig", "params": {"alpha": 3.0, "beta": 0.5, "delta": 0.3, "mu": 0.0}},
        "p": 2,
    },
    "penalty-baseline": {
        "process": "gou",
        "loss": {"family": "normal", "params": {"mu": 1.0, "sigma2": 1.0}},
        "return": {"family": "normal", "params": {"mu": -0.05, "sigma2": 0.09}},
        "gou": {"mu_xi": 1.0, "sigma_xi": 1.0, "mu_rho": -0.05, "sigma_rho": 0.3},
        "alpha": 0.5,
        "T": 19.0,
    },
    "normal-moments": {
        "loss": {"family": "normal", "params": {"mu": 0.5, "sigma2": 0.25}},
        "return": {"family": "normal", "params": {"mu": 0.05, "sigma2": 0.04}},
        "p": 2,
    },
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}", path="preset", hint=f"choose one of {sorted(PRESETS)}")
    return _validate(copy.deepcopy(PRESETS[name]))
