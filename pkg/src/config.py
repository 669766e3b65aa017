from __future__ import annotations

import math
import os
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

# Default leaf size: 10 examples once the labeled budget reaches 1K, 4 below it.
_MIN_LEAF_LARGE = 10
_MIN_LEAF_SMALL = 4
_LARGE_BUDGET = 1000

DEFAULT_ALPHA_GRID = (0.3, 1.0, 3.0)


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ForestConfig(_Frozen):
    """Random-forest growth parameters. `None` means "derive from the data"."""

    num_trees: int = Field(100, ge=1)
    min_leaf: int | None = Field(None, ge=1)
    max_features: int | None = Field(None, ge=1)
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1

    def resolved_min_leaf(self, num_labeled: int) -> int:
        if self.min_leaf is not None:
            return self.min_leaf
        return _MIN_LEAF_LARGE if num_labeled >= _LARGE_BUDGET else _MIN_LEAF_SMALL

    def resolved_max_features(self, num_features: int) -> int:
        if self.max_features is not None:
            return min(self.max_features, max(1, num_features))
        return max(1, math.isqrt(max(num_features, 0)))


class EstimationConfig(_Frozen):
    """
    How the correlation bounds b are estimated from labeled data.

    Methods
    -------
    - "bootstrap": q-quantile of resampled awake correlations (default).
    - "hoeffding": empirical correlation minus a union-bounded Hoeffding penalty.
    - "exact": no penalty; the empirical correlation itself. Only meaningful when the
      labels passed in are the true labels of the evaluation set (test oracles).
    """

    method: Literal["bootstrap", "hoeffding", "exact"] = "bootstrap"
    delta: float = Field(0.05, gt=0.0, lt=1.0)
    resamples: int = Field(100, ge=1)
    quantile: float = Field(0.10, ge=0.0, le=1.0)
    epsilon_b: float = Field(1e-3, gt=0.0, le=1.0)
    seed: int = 0


class SgdConfig(_Frozen):
    """Projected minibatch SGD settings for the slack minimization."""

    batch_size: int = Field(128, ge=1)
    epochs: int = Field(30, ge=1)
    step0: float | None = Field(None, gt=0.0)
    tolerance: float = Field(1e-9, gt=0.0)
    polish: bool = True
    seed: int = 0


class RunConfig(_Frozen):
    """Everything one HedgeClipper run needs besides the data."""

    forest: ForestConfig = ForestConfig()
    estimation: EstimationConfig = EstimationConfig()
    sgd: SgdConfig = SgdConfig()
    alpha: float | Literal["auto"] = 1.0
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    solver: Literal["sgd", "exact"] = "sgd"
    train_frac: float = Field(0.5, gt=0.0, le=1.0)
    seed: int = 0

    @field_validator("alpha")
    @classmethod
    def _alpha_positive(cls, v: float | str) -> float | str:
        # alpha = 0 leaves the slack unbounded below whenever some b_i > 0.
        if v != "auto" and not v > 0.0:
            raise ValueError("alpha must be > 0 (or 'auto')")
        return v

    @field_validator("alpha_grid")
    @classmethod
    def _grid_positive(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if not v or any(not a > 0.0 for a in v):
            raise ValueError("alpha_grid must be a nonempty tuple of positive values")
        return v

    def with_seed(self, seed: int) -> "RunConfig":
        """Return a copy whose every random stream is derived from `seed`."""
        return self.model_copy(
            update={
                "seed": seed,
                "forest": self.forest.model_copy(update={"seed": seed}),
                "estimation": self.estimation.model_copy(update={"seed": seed}),
                "sgd": self.sgd.model_copy(update={"seed": seed}),
            }
        )


LogLevel = Literal["DEBUG", "INFO", "WARNING", "ERROR"]


class Settings(_Frozen):
    """Process-level defaults, read from the environment (and `.env`)."""

    seed: int = 0
    n_jobs: int = 1
    log_level: LogLevel = "INFO"

    @field_validator("log_level", mode="before")
    @classmethod
    def _upper_log_level(cls, v: object) -> object:
        return v.upper() if isinstance(v, str) else v


# Settings field -> environment variable.
_ENV_VARS = {
    "seed": "HEDGECLIPPER_SEED",
    "n_jobs": "HEDGECLIPPER_N_JOBS",
    "log_level": "HEDGECLIPPER_LOG_LEVEL",
}


def load_settings() -> Settings:
    """
    Read `HEDGECLIPPER_*` variables from the environment.

    The entry script calls `load_dotenv(override=False)` first, so values from a `.env`
    file at the repo root are visible here without overriding the real environment.
    Unset variables keep their defaults; a value that does not parse raises
    `pydantic.ValidationError`.
    """
    values = {field: os.environ[var] for field, var in _ENV_VARS.items() if var in os.environ}
    return Settings.model_validate(values)
