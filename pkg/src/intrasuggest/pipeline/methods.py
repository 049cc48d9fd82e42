"""The three evaluated suggestion methods.

Base serves the hierarchy's list untouched.  Click re-ranks with every
feature except QueryPersonalisedScore (nine columns).  Ours re-ranks with
the full ten-feature vector.  The two trainable methods fit their own
ensemble per fold on identical impressions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..eval_harness import PreparedImpression, WeekKey
from ..features import FEATURE_NAMES
from ..ranker import RankingEnsemble, TrainConfig, predict, train_lambdamart

ALL_FEATURES = tuple(range(len(FEATURE_NAMES)))
CLICK_FEATURES = tuple(
    i for i, name in enumerate(FEATURE_NAMES) if name != "QueryPersonalisedScore"
)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    feature_indices: Optional[tuple[int, ...]]  # None bypasses the ranker

    def feature_names(self) -> tuple[str, ...]:
        assert self.feature_indices is not None
        return tuple(FEATURE_NAMES[i] for i in self.feature_indices)


BASE_SPEC = MethodSpec("Base", None)
CLICK_SPEC = MethodSpec("Click", CLICK_FEATURES)
OURS_SPEC = MethodSpec("Ours", ALL_FEATURES)


class BaseOrderMethod:
    """Identity method: keep the non-personalised base order."""

    trainable = False

    def __init__(self) -> None:
        self.name = BASE_SPEC.name

    def fit_week(self, impressions: Sequence[PreparedImpression], week: WeekKey) -> None:
        raise RuntimeError("Base is not trainable")

    def order(self, impression: PreparedImpression) -> np.ndarray:
        return np.arange(len(impression.suggestions))


class RerankMethod:
    """LambdaMART re-ranking over a fixed feature mask."""

    trainable = True

    def __init__(self, spec: MethodSpec, config: TrainConfig):
        assert spec.feature_indices is not None
        self.name = spec.name
        self.spec = spec
        self.config = config
        self.ensemble: Optional[RankingEnsemble] = None
        self.trained_week: Optional[WeekKey] = None

    def fit_week(self, impressions: Sequence[PreparedImpression], week: WeekKey) -> None:
        self.ensemble = self.fit(impressions)
        self.trained_week = week

    def fit(self, impressions: Sequence[PreparedImpression]) -> RankingEnsemble:
        idx = list(self.spec.feature_indices or ())
        groups = [(imp.features[:, idx], imp.labels) for imp in impressions]
        return train_lambdamart(groups, self.config, self.spec.feature_names())

    def order(self, impression: PreparedImpression) -> np.ndarray:
        if self.ensemble is None:
            raise RuntimeError(f"{self.name}: no ensemble fitted yet")
        idx = list(self.spec.feature_indices or ())
        scores = predict(self.ensemble, impression.features[:, idx])
        return np.argsort(-scores, kind="stable")


def build_method_pipelines(config: TrainConfig) -> list:
    """The Base / Click / Ours registry, in reporting order."""
    return [
        BaseOrderMethod(),
        RerankMethod(CLICK_SPEC, config),
        RerankMethod(OURS_SPEC, config),
    ]
