from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np

from app.core.exceptions import ParameterError, RasterError


@dataclass(frozen=True)
class Camera:
    """
    Weak-perspective yaw/pitch camera.

    Camera space: x right, y up, +z towards the viewer. A camera at yaw 0 looks at
    the +z side of the subject; yaw rotates the camera about the vertical axis.
    NDC = scale * (x_c, y_c) + principal_offset; pixel rows grow downward.
    """

    yaw: float = 0.0
    pitch: float = 0.0
    scale: float = 1.0
    principal_offset: Tuple[float, float] = (0.0, 0.0)
    resolution: Tuple[int, int] = (64, 64)

    def validate(self) -> "Camera":
        if not self.scale > 0:
            raise RasterError(
                f"Degenerate camera: scale {self.scale} must be positive",
                {"scale": self.scale},
            )
        height, width = self.resolution
        if height < 8 or width < 8:
            raise RasterError(
                f"Camera resolution {self.resolution} below 8x8",
                {"resolution": list(self.resolution)},
            )
        return self

    @property
    def height(self) -> int:
        return int(self.resolution[0])

    @property
    def width(self) -> int:
        return int(self.resolution[1])

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation R = R_x(pitch) @ R_y(-yaw)."""
        yaw = np.deg2rad(-self.yaw)
        pitch = np.deg2rad(self.pitch)
        r_yaw = np.array(
            [
                [np.cos(yaw), 0.0, np.sin(yaw)],
                [0.0, 1.0, 0.0],
                [-np.sin(yaw), 0.0, np.cos(yaw)],
            ]
        )
        r_pitch = np.array(
            [
                [1.0, 0.0, 0.0],
                [0.0, np.cos(pitch), -np.sin(pitch)],
                [0.0, np.sin(pitch), np.cos(pitch)],
            ]
        )
        return r_pitch @ r_yaw

    def pixel_size_world(self) -> float:
        """World length covered by one pixel (the smaller pixel side)."""
        return 2.0 / (self.scale * max(self.height, self.width))

    def with_yaw(self, yaw: float) -> "Camera":
        return replace(self, yaw=yaw)


def camera_ring(n_views: int, yaw_step: float, base: Camera) -> List[Camera]:
    """Cameras at yaw base.yaw + i * yaw_step, i = 0..n_views-1."""
    if n_views < 1:
        raise ParameterError("n_views must be at least 1", "n_views", str(n_views))
    if n_views * yaw_step > 360.0 + 1e-9:
        raise ParameterError(
            f"Ring of {n_views} views x {yaw_step} deg exceeds 360 deg",
            "yaw_step",
            str(yaw_step),
        )
    return [base.with_yaw(base.yaw + i * yaw_step) for i in range(n_views)]


def opposite_view(index: int, n_views: int) -> int:
    """Index of the view rendered from the back side of `index` in an even ring."""
    if n_views % 2:
        raise ParameterError("Opposite pairing needs an even view count", "n_views")
    return (index + n_views // 2) % n_views


def crop_camera(base: Camera, center, extent: float) -> Camera:
    """
    Close-up camera framing the square of half-width `extent` around `center`.

    The crop keeps the base yaw/pitch; the scale zooms so the window fills NDC and
    the principal offset moves the projected center to the image center.
    """
    if not extent > 0:
        raise ParameterError("Crop extent must be positive", "extent", str(extent))
    scale = 1.0 / extent
    projected = base.rotation() @ np.asarray(center, dtype=np.float64)
    offset = (-scale * float(projected[0]), -scale * float(projected[1]))
    return replace(base, scale=scale, principal_offset=offset)
