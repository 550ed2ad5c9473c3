"""Three-way image quality categories."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Tuple

from coips.errors import ConfigError


class Quality(IntEnum):
    UNGRADABLE = 0
    GRADABLE = 1
    OUTSTANDING = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, value) -> "Quality":
        if isinstance(value, Quality):
            return value
        if isinstance(value, int) or (isinstance(value, str) and value.strip().isdigit()):
            return cls(int(value))
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ConfigError(f"unknown quality category {value!r}") from None


NUM_CLASSES = len(Quality)


@dataclass(frozen=True)
class QualityLabel:
    category: Quality
    probs: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "category", Quality.parse(self.category))
        if self.probs is not None:
            probs = tuple(float(p) for p in self.probs)
            if len(probs) != NUM_CLASSES or min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-6:
                raise ValueError(f"invalid class probabilities {self.probs}")
            object.__setattr__(self, "probs", probs)

    @property
    def segmentable(self) -> bool:
        return self.category != Quality.UNGRADABLE
