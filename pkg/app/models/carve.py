from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.core.exceptions import ParameterError, RasterError
from app.models.camera import Camera
from app.models.mesh import Mesh
from app.models.normal_map import NormalMap


@dataclass(frozen=True)
class TargetView:
    """A target normal map and the camera it was seen from."""

    camera: Camera
    normal_map: NormalMap


@dataclass(frozen=True)
class SideView:
    """Binary proxy silhouette for one side camera."""

    camera: Camera
    mask: np.ndarray


@dataclass(frozen=True)
class CarveTargets:
    """
    Everything the carving objective compares against.

    views hold the normal-map targets (front and back for the first stage, the full
    refined ring for the second); side_views hold the proxy's left/right masks.
    """

    views: List[TargetView]
    side_views: List[SideView] = field(default_factory=list)

    def __post_init__(self):
        if not self.views:
            raise ParameterError("CarveTargets needs at least one target view", "views")
        resolution = self.views[0].normal_map.resolution
        for view in self.views:
            if view.normal_map.resolution != resolution:
                raise RasterError(
                    f"Target resolution {view.normal_map.resolution} != {resolution}",
                    {"expected": list(resolution)},
                )
            if tuple(view.camera.resolution) != resolution:
                raise RasterError(
                    f"Camera resolution {view.camera.resolution} does not match "
                    f"target resolution {resolution}",
                    {"expected": list(resolution)},
                )
        for side in self.side_views:
            if side.mask.shape != resolution:
                raise RasterError(
                    f"Side mask shape {side.mask.shape} != {resolution}",
                    {"expected": list(resolution)},
                )
            if not np.isin(side.mask, (0, 1)).all():
                raise ParameterError("Proxy side masks must be binary", "side_mask")

    @property
    def resolution(self):
        return self.views[0].normal_map.resolution

    @property
    def cameras(self) -> List[Camera]:
        return [view.camera for view in self.views]


@dataclass(frozen=True)
class CarveResult:
    mesh: Mesh
    loss_history: List[float]
    remesh_count: int = 0
    final_step_size: Optional[float] = None

    def window_medians(self, window: int) -> List[float]:
        """Median loss over consecutive windows of `window` iterations."""
        history = np.asarray(self.loss_history)
        return [
            float(np.median(history[start : start + window]))
            for start in range(0, len(history), window)
        ]
