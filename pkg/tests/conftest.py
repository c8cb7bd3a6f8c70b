import os

import numpy as np
import pytest
import trimesh
from hypothesis import HealthCheck, settings

from app.core.config import Settings
from app.models.camera import Camera
from app.models.mesh import Mesh
from app.schemas.mesh import BodyProxyParams, ProxyKind
from app.services.proxy_service import make_body_proxy

settings.register_profile(
    "ci",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile(
    "dev",
    max_examples=10,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "dev"))


def sphere_mesh(radius: float = 0.5, subdivisions: int = 2) -> Mesh:
    params = BodyProxyParams(
        kind=ProxyKind.SPHERE, radius=radius, subdivisions=subdivisions
    )
    return make_body_proxy(ProxyKind.SPHERE, params)


def octahedron() -> Mesh:
    vertices = np.array(
        [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ]
    )
    faces = np.array(
        [
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ]
    )
    return Mesh(vertices, faces)


def cube_mesh(size: float = 1.0) -> Mesh:
    box = trimesh.creation.box(extents=(size, size, size))
    return Mesh(np.asarray(box.vertices), np.asarray(box.faces, dtype=np.int64))


def tetrahedron() -> Mesh:
    """Regular tetrahedron with circumradius 1."""
    vertices = np.array(
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
    ) / np.sqrt(3.0)
    return Mesh(vertices, np.array([[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]]))


@pytest.fixture
def sphere() -> Mesh:
    return sphere_mesh()


@pytest.fixture
def octa() -> Mesh:
    return octahedron()


@pytest.fixture
def camera() -> Camera:
    return Camera(resolution=(32, 32))


@pytest.fixture
def small_settings(tmp_path) -> Settings:
    """Tiny run: sphere proxy, 16x16 maps, short schedules, output under tmp_path."""
    return Settings(
        seed=3,
        resolution=16,
        paths={"out_dir": str(tmp_path / "run")},
        proxy={"kind": "sphere", "radius": 0.5, "subdivisions": 2},
        dataset={"n_examples": 2, "grid_resolution": 16},
        schedule={"timesteps": 4},
        carve={
            "total_iterations": 4,
            "remesh_interval": 2,
            "initial_vertices": 150,
        },
        ring={"n_views": 4, "yaw_step": 90.0},
        eval_ring={"n_views": 4, "yaw_step": 90.0},
        architecture={"hidden_channels": 8, "depth": 2, "embedding_dim": 8},
        training={"epochs": 1, "batch_size": 2},
        resample={"t0": 0.5, "repeats": 1},
        sweep={"resample_grid": [(0.5, 1)], "ring_grid": [(2, 180.0)]},
    )
