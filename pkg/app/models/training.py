from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List

import numpy as np

from app.core.exceptions import ParameterError
from app.models.normal_map import NormalMap, pack_dual

if TYPE_CHECKING:
    from app.services.denoiser_service import ConvDenoiser


@dataclass(frozen=True)
class TrainExample:
    """A dual target (front, back) and the proxy condition map it was rendered from."""

    front: NormalMap
    back: NormalMap
    cond: NormalMap

    def __post_init__(self):
        maps = (self.front, self.back, self.cond)
        resolutions = {m.resolution for m in maps}
        if len(resolutions) != 1:
            raise ParameterError(
                f"Example maps have mixed resolutions {sorted(resolutions)}",
                "resolution",
            )

    @property
    def resolution(self):
        return self.front.resolution

    def dual_sample(self) -> np.ndarray:
        return pack_dual(self.front, self.back)

    def cond_sample(self) -> np.ndarray:
        return self.cond.to_sample()


@dataclass
class TrainResult:
    model: "ConvDenoiser"
    loss_curve: List[float] = field(default_factory=list)
