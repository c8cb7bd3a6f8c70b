"""
Synthetic (condition, dual normal map) training pairs.

Each example draws body proportions and a pose from the configured ranges, builds
the multi-capsule proxy, displaces it along its normals with seeded bumps and a
garment-like flare below the hips, and renders the displaced body from the front and
back. The undisplaced proxy's front render is the condition.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from app.core.artifacts import read_nmap, write_nmap
from app.core.exceptions import ParameterError
from app.core.service_utils import ensure_exists
from app.models.camera import Camera
from app.models.mesh import Mesh
from app.models.training import TrainExample
from app.schemas.denoiser import DatasetEntry, DatasetIndex
from app.schemas.mesh import BodyPose, BodyProxyParams, BodyShape, ProxyKind
from app.schemas.pipeline import DatasetParams
from app.services.mesh_service import vertex_normals
from app.services.proxy_service import make_body_proxy
from app.services.raster_service import rasterize

logger = logging.getLogger(__name__)

MAX_RESOLUTION = 64
BUMP_WAVES = 4
BUMP_WAVELENGTH = 0.3
INDEX_FILE = "index.json"


def _uniform(
    rng: np.random.Generator, bounds: Tuple[float, float], name: str
) -> float:
    low, high = bounds
    if low > high:
        raise ParameterError(f"{name} range is reversed: {bounds}", name, str(bounds))
    return float(rng.uniform(low, high)) if high > low else float(low)


def sample_body(
    ranges: DatasetParams, rng: np.random.Generator
) -> Tuple[BodyShape, BodyPose]:
    """Draw proportions and a pose from the dataset ranges."""

    def draw(name: str) -> float:
        return _uniform(rng, getattr(ranges, name), name)

    height = draw("height_range")
    shape = BodyShape(
        height=height,
        shoulder_width=0.40 * height / 1.7,
        hip_width=0.20 * height / 1.7,
        limb_radius_scale=draw("limb_radius_range"),
    )
    pose = BodyPose(
        arm_abduction_deg=draw("arm_abduction_range"),
        elbow_flexion_deg=draw("elbow_flexion_range"),
        leg_abduction_deg=draw("leg_abduction_range"),
    )
    return shape, pose


def displace(
    mesh: Mesh,
    bump_amplitude: float,
    garment_amplitude: float,
    rng: np.random.Generator,
) -> Mesh:
    """
    Offset vertices along their normals: a sum of random plane waves of amplitude
    bump_amplitude, plus an outward flare growing below the hips up to
    garment_amplitude.
    """
    normals = vertex_normals(mesh)
    directions = rng.standard_normal((BUMP_WAVES, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    phases = rng.uniform(0.0, 2.0 * np.pi, BUMP_WAVES)
    frequency = 2.0 * np.pi / BUMP_WAVELENGTH
    waves = np.sin(frequency * mesh.vertices @ directions.T + phases)
    offset = bump_amplitude * waves.mean(axis=1)

    if garment_amplitude > 0:
        y = mesh.vertices[:, 1]
        hip = np.quantile(y, 0.45)
        floor = y.min()
        flare = np.clip((hip - y) / max(hip - floor, 1e-9), 0.0, 1.0)
        offset = offset + garment_amplitude * flare
    return mesh.with_vertices(mesh.vertices + offset[:, None] * normals)


def synth_example(
    ranges: DatasetParams,
    camera: Camera,
    rng: np.random.Generator,
) -> TrainExample:
    shape, pose = sample_body(ranges, rng)
    params = BodyProxyParams(
        kind=ProxyKind.POSED_MULTI_CAPSULE,
        shape=shape,
        pose=pose,
        grid_resolution=ranges.grid_resolution,
    )
    proxy = make_body_proxy(ProxyKind.POSED_MULTI_CAPSULE, params)
    clothed = displace(
        proxy,
        _uniform(rng, ranges.displacement_amplitude, "displacement_amplitude"),
        _uniform(rng, ranges.garment_amplitude, "garment_amplitude"),
        rng,
    )
    back_camera = camera.with_yaw(camera.yaw + 180.0)
    return TrainExample(
        front=rasterize(clothed, camera).as_float32(),
        back=rasterize(clothed, back_camera).as_float32(),
        cond=rasterize(proxy, camera).as_float32(),
    )


def synth_dataset(
    n: int,
    resolution: int,
    ranges: DatasetParams,
    rng: np.random.Generator,
    base_camera: Optional[Camera] = None,
) -> List[TrainExample]:
    """
    Raises:
        ParameterError: On resolution above 64, n < 1 or degenerate body ranges
    """
    if n < 1:
        raise ParameterError("Dataset needs at least one example", "n", str(n))
    if not 8 <= resolution <= MAX_RESOLUTION:
        raise ParameterError(
            f"Dataset resolution must lie in [8, {MAX_RESOLUTION}]",
            "resolution",
            str(resolution),
        )
    base = base_camera or Camera()
    camera = Camera(
        yaw=base.yaw,
        pitch=base.pitch,
        scale=base.scale,
        principal_offset=base.principal_offset,
        resolution=(resolution, resolution),
    )
    examples = [
        synth_example(ranges, camera, rng)
        for _ in tqdm(range(n), desc="synth-data", leave=False)
    ]
    logger.info(f"Synthesized {n} examples at {resolution}x{resolution}")
    return examples


def write_dataset(
    examples: Sequence[TrainExample], directory: Path | str, seed: int
) -> List[Path]:
    """Cache examples as NMAP files plus an index; returns every written path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = DatasetIndex(seed=seed, resolution=examples[0].resolution[0])
    written: List[Path] = []
    for i, example in enumerate(examples):
        entry = DatasetEntry(
            front=f"{i:04d}_front.nmap",
            back=f"{i:04d}_back.nmap",
            cond=f"{i:04d}_cond.nmap",
        )
        written.append(write_nmap(example.front.as_float32(), directory / entry.front))
        written.append(write_nmap(example.back.as_float32(), directory / entry.back))
        written.append(write_nmap(example.cond.as_float32(), directory / entry.cond))
        index.entries.append(entry)
    index_path = directory / INDEX_FILE
    index_path.write_text(index.model_dump_json(indent=2), encoding="utf-8")
    written.append(index_path)
    return written


def read_dataset(directory: Path | str) -> List[TrainExample]:
    """
    Raises:
        ArtifactNotFoundError: If the index or a listed map is missing
        ArtifactCorruptError: If a map is damaged
    """
    directory = Path(directory)
    index_path = ensure_exists(directory / INDEX_FILE, "Dataset index")
    index = DatasetIndex.model_validate_json(index_path.read_text(encoding="utf-8"))
    return [
        TrainExample(
            front=read_nmap(directory / entry.front),
            back=read_nmap(directory / entry.back),
            cond=read_nmap(directory / entry.cond),
        )
        for entry in index.entries
    ]
