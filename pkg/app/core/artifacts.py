"""
Artifact readers and writers.

Every file the pipeline produces goes through this module: OBJ meshes, normal maps
(16-bit PNG for viewing, NMAP float32 binary for lossless interchange), denoiser
checkpoints, evaluation reports and the run manifest.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import cv2
import numpy as np

from app.core.exceptions import ArtifactCorruptError, CheckpointCorruptError
from app.core.service_utils import ensure_exists
from app.models.mesh import Mesh
from app.models.normal_map import NormalMap
from app.schemas.pipeline import ManifestEntry, RunManifest

logger = logging.getLogger(__name__)

NMAP_MAGIC = b"NMAP"
CHECKPOINT_MAGIC = b"DNCK"
PNG_MAX = 65535
ABSENT = "absent"


def _prepare(path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# Meshes


def write_obj(mesh: Mesh, path: Path | str) -> Path:
    """Plain v/f records, 1-based, 17 significant digits per coordinate."""
    path = _prepare(path)
    with open(path, "w", encoding="utf-8") as fp:
        for x, y, z in mesh.vertices:
            fp.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces + 1:
            fp.write(f"f {a} {b} {c}\n")
    return path


def read_obj(path: Path | str) -> Mesh:
    """
    Read v/f records; texture or normal indices after '/' are ignored.

    Raises:
        ArtifactNotFoundError: If the file does not exist
        ArtifactCorruptError: On malformed records or non-triangle faces
    """
    path = ensure_exists(path, "Mesh")
    vertices: List[Tuple[float, float, float]] = []
    faces: List[List[int]] = []
    with open(path, "r", encoding="utf-8") as fp:
        for number, line in enumerate(fp, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    if len(parts) < 4:
                        raise ValueError("vertex needs three coordinates")
                    vertices.append(tuple(float(p) for p in parts[1:4]))
                elif parts[0] == "f":
                    face = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                    if len(face) != 3:
                        raise ValueError(f"{len(face)}-sided face")
                    faces.append(face)
            except ValueError as exc:
                raise ArtifactCorruptError(str(path), f"line {number}: {exc}") from exc
    return Mesh(np.asarray(vertices).reshape(-1, 3), np.asarray(faces).reshape(-1, 3))


# Normal maps


def write_nmap(normal_map: NormalMap, path: Path | str) -> Path:
    """Magic NMAP, uint32 H, uint32 W, then H x W x 4 float32 row-major."""
    path = _prepare(path)
    height, width = normal_map.resolution
    with open(path, "wb") as fp:
        fp.write(NMAP_MAGIC)
        fp.write(np.array([height, width], dtype="<u4").tobytes())
        fp.write(np.ascontiguousarray(normal_map.pixels, dtype="<f4").tobytes())
    return path


def read_nmap(path: Path | str) -> NormalMap:
    """
    Raises:
        ArtifactNotFoundError: If the file does not exist
        ArtifactCorruptError: On a bad magic or truncated data
    """
    path = ensure_exists(path, "Normal map")
    raw = path.read_bytes()
    if raw[:4] != NMAP_MAGIC:
        raise ArtifactCorruptError(str(path), "missing NMAP magic")
    if len(raw) < 12:
        raise ArtifactCorruptError(str(path), "truncated header")
    height, width = (int(v) for v in np.frombuffer(raw[4:12], dtype="<u4"))
    expected = 12 + 4 * 4 * height * width
    if len(raw) != expected:
        raise ArtifactCorruptError(
            str(path), f"expected {expected} bytes for {height}x{width}, got {len(raw)}"
        )
    data = np.frombuffer(raw[12:], dtype="<f4").reshape(height, width, 4)
    return NormalMap(data.astype(np.float32))


def write_normal_map_png(normal_map: NormalMap, path: Path | str) -> Path:
    """16-bit RGBA PNG."""
    path = _prepare(path)
    rgba = np.round(np.clip(normal_map.pixels, 0.0, 1.0) * PNG_MAX).astype(np.uint16)
    if not cv2.imwrite(str(path), cv2.cvtColor(rgba, cv2.COLOR_RGBA2BGRA)):
        raise ArtifactCorruptError(str(path), "PNG encoder refused the image")
    return path


def read_normal_map_png(path: Path | str) -> NormalMap:
    path = ensure_exists(path, "Normal map PNG")
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if image is None or image.ndim != 3 or image.shape[2] != 4:
        raise ArtifactCorruptError(str(path), "not a 4-channel PNG")
    scale = PNG_MAX if image.dtype == np.uint16 else 255
    rgba = cv2.cvtColor(image, cv2.COLOR_BGRA2RGBA).astype(np.float64) / scale
    return NormalMap(rgba)


def write_normal_map(normal_map: NormalMap, stem: Path | str) -> Tuple[Path, Path]:
    """Write both the PNG and the NMAP form next to each other."""
    stem = Path(stem)
    return (
        write_normal_map_png(normal_map, stem.with_suffix(".png")),
        write_nmap(normal_map, stem.with_suffix(".nmap")),
    )


# Checkpoints


def write_checkpoint(
    path: Path | str,
    version: int,
    descriptor: dict,
    parameters: Dict[str, np.ndarray],
) -> Path:
    """
    Layout: magic DNCK, uint32 version, uint32 header length, JSON header
    (descriptor plus the ordered parameter table), float32 parameter blob.
    """
    path = _prepare(path)
    table = [[name, list(array.shape)] for name, array in parameters.items()]
    header = json.dumps({"architecture": descriptor, "parameters": table}).encode()
    with open(path, "wb") as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(np.array([version, len(header)], dtype="<u4").tobytes())
        fp.write(header)
        for array in parameters.values():
            fp.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return path


def read_checkpoint(path: Path | str) -> Tuple[int, dict, Dict[str, np.ndarray]]:
    """
    Returns (version, architecture descriptor, ordered parameters).

    Raises:
        ArtifactNotFoundError: If the file does not exist
        CheckpointCorruptError: On a bad magic, header, parameter table or blob length
    """
    path = ensure_exists(path, "Checkpoint")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointCorruptError(str(path), "missing DNCK magic")
    version, header_length = (int(v) for v in np.frombuffer(raw[4:12], dtype="<u4"))
    try:
        header = json.loads(raw[12 : 12 + header_length].decode())
        table = header["parameters"]
        descriptor = header["architecture"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise CheckpointCorruptError(str(path), f"unreadable header: {exc}") from exc

    offset = 12 + header_length
    try:
        sizes = [int(np.prod(shape)) for _, shape in table]
    except (TypeError, ValueError) as exc:
        raise CheckpointCorruptError(str(path), f"bad parameter table: {exc}") from exc
    if len(raw) != offset + 4 * sum(sizes):
        found, needed = len(raw) - offset, 4 * sum(sizes)
        raise CheckpointCorruptError(
            str(path), f"parameter blob has {found} bytes, header needs {needed}"
        )
    parameters: Dict[str, np.ndarray] = {}
    for (name, shape), size in zip(table, sizes):
        chunk = np.frombuffer(raw[offset : offset + 4 * size], dtype="<f4")
        try:
            parameters[name] = chunk.reshape(shape).astype(np.float32)
        except (TypeError, ValueError) as exc:
            raise CheckpointCorruptError(
                str(path), f"bad shape {shape} for {name}: {exc}"
            ) from exc
        offset += 4 * size
    return version, descriptor, parameters


# Reports


def _format_value(value) -> str:
    if value is None:
        return ABSENT
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str):
    if text == ABSENT:
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def write_report(
    path: Path | str, title: str, records: List[dict], summary: dict
) -> Path:
    """Line-delimited key=value records followed by a [summary] block."""
    path = _prepare(path)
    lines = [f"# {title}"]
    for record in records:
        lines.append(" ".join(f"{k}={_format_value(v)}" for k, v in record.items()))
    lines.append("[summary]")
    lines.extend(f"{k}={_format_value(v)}" for k, v in summary.items())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_report(path: Path | str) -> Tuple[List[dict], dict]:
    path = ensure_exists(path, "Report")
    records: List[dict] = []
    summary: dict = {}
    in_summary = False
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[summary]":
            in_summary = True
            continue
        pairs = dict(item.split("=", 1) for item in line.split())
        parsed = {k: _parse_value(v) for k, v in pairs.items()}
        if in_summary:
            summary.update(parsed)
        else:
            records.append(parsed)
    return records, summary


# Manifest


def sha256_of(path: Path | str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fp:
        for block in iter(lambda: fp.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class ManifestRecorder:
    """Collects a hash entry for every artifact a run writes."""

    def __init__(self, seed: int, root: Optional[Path] = None):
        self.manifest = RunManifest(seed=seed)
        self.root = root

    def _shown(self, path: Path) -> Path:
        """Path relative to the run root when inside it, otherwise absolute."""
        if self.root is None:
            return path
        resolved, root = path.resolve(), Path(self.root).resolve()
        return resolved.relative_to(root) if resolved.is_relative_to(root) else resolved

    def record(self, stage: str, *paths: Path | str) -> None:
        for path in paths:
            path = Path(path)
            shown = self._shown(path)
            self.manifest.entries.append(
                ManifestEntry(
                    stage=stage,
                    path=shown.as_posix(),
                    sha256=sha256_of(path),
                    size_bytes=path.stat().st_size,
                )
            )
            logger.debug(f"Recorded {stage} artifact {shown}")

    def write(self, path: Path | str) -> Path:
        path = _prepare(path)
        path.write_text(self.manifest.model_dump_json(indent=2), encoding="utf-8")
        return path


def read_manifest(path: Path | str) -> RunManifest:
    path = ensure_exists(path, "Manifest")
    return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
