from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from src.config import RunConfig
from .dataset import Example, to_csr
from .forest import Forest
from .game import clip_predictions
from .specialists import RowKey, awake_predictions_out_of_sample


@dataclass(frozen=True)
class Model:
    """
    A trained HedgeClipper aggregate: forest + retained rows + their weights.

    Notes
    -----
    - `keys`, `row_scale`, `b` and `sigma` are aligned: one entry per retained row.
    - `alpha` is the value the slack was minimized with (resolved when the run config
      asked for "auto").
    - Predictions only depend on `forest`, `keys`, `row_scale` and `sigma`.
    """

    forest: Forest
    keys: tuple[RowKey, ...]
    row_scale: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    alpha: float
    config: RunConfig

    def __post_init__(self) -> None:
        k = len(self.keys)
        for name in ("row_scale", "b", "sigma"):
            if getattr(self, name).shape != (k,):
                raise ValueError(f"`{name}` must have one entry per row ({k})")
        if np.any(self.sigma < 0) or not np.all(np.isfinite(self.sigma)):
            raise ValueError("`sigma` must be finite and nonnegative.")
        for key in self.keys:
            if not 0 <= key.tree < len(self.forest.trees):
                raise ValueError(f"row {key} refers to a tree the forest does not have")

    @property
    def num_rows(self) -> int:
        return len(self.keys)

    def awake(self, X: sparse.spmatrix | np.ndarray) -> np.ndarray:
        """Unclipped awake ensemble prediction for each row of X."""
        return awake_predictions_out_of_sample(self, X)

    def awake_examples(self, examples: Sequence[Example]) -> np.ndarray:
        return self.awake(to_csr(examples, self.forest.n_features))

    def predict(self, examples: Sequence[Example]) -> np.ndarray:
        """Clipped predictions g in [-1, 1]."""
        return clip_predictions(self.awake_examples(examples))
