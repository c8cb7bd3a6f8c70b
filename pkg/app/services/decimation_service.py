import heapq
import logging
from typing import List, Tuple

import numpy as np

from app.core.exceptions import MeshTopologyError, ParameterError
from app.models.mesh import Mesh
from app.services.mesh_editing import EditableMesh
from app.services.mesh_service import require_manifold

logger = logging.getLogger(__name__)

MIN_TARGET_VERTICES = 4


def _face_quadric(positions: List[np.ndarray], face) -> np.ndarray:
    p0, p1, p2 = (positions[v] for v in face)
    normal = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(normal)
    if norm == 0:
        return np.zeros((4, 4))
    plane = np.append(normal / norm, -np.dot(normal / norm, p0))
    return np.outer(plane, plane)


def _collapse_target(
    quadric: np.ndarray, a: np.ndarray, b: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Cheapest position for merging a and b, and its quadric error."""
    system = quadric.copy()
    system[3] = (0.0, 0.0, 0.0, 1.0)
    candidates = [a, b, 0.5 * (a + b)]
    if abs(np.linalg.det(system)) > 1e-12:
        optimum = np.linalg.solve(system, np.array([0.0, 0.0, 0.0, 1.0]))[:3]
        # optimum must stay within one edge length of the midpoint
        if np.linalg.norm(optimum - 0.5 * (a + b)) <= np.linalg.norm(a - b):
            candidates.insert(0, optimum)
    best_cost, best = np.inf, candidates[0]
    for position in candidates:
        h = np.append(position, 1.0)
        cost = float(h @ quadric @ h)
        if cost < best_cost - 1e-18:
            best_cost, best = cost, position
    return max(best_cost, 0.0), best


class DecimationService:
    """Quadric-error edge collapse with manifold guards."""

    def __init__(self, mesh: Mesh):
        require_manifold(mesh, "decimate")
        self.mesh = mesh
        self.editable = EditableMesh(mesh)
        self.quadrics = [np.zeros((4, 4)) for _ in range(mesh.n_vertices)]
        for face in self.editable.faces.values():
            q = _face_quadric(self.editable.positions, face)
            for v in face:
                self.quadrics[v] += q
        self.versions = [0] * mesh.n_vertices
        scale = max(mesh.bbox_diagonal(), 1e-12)
        self.min_area = 1e-12 * scale * scale
        self.heap: list = []

    def _push(self, a: int, b: int) -> None:
        cost, _ = _collapse_target(
            self.quadrics[a] + self.quadrics[b],
            self.editable.positions[a],
            self.editable.positions[b],
        )
        heapq.heappush(self.heap, (cost, a, b, self.versions[a], self.versions[b]))

    def run(self, target_vertices: int) -> Mesh:
        for a, b in self.editable.edges():
            self._push(a, b)

        remaining = self.editable.vertex_count
        while remaining > target_vertices and self.heap:
            _, a, b, version_a, version_b = heapq.heappop(self.heap)
            if not (self.editable.alive[a] and self.editable.alive[b]):
                continue
            if version_a != self.versions[a] or version_b != self.versions[b]:
                continue
            if b not in self.editable.neighbors(a):
                continue
            quadric = self.quadrics[a] + self.quadrics[b]
            _, position = _collapse_target(
                quadric, self.editable.positions[a], self.editable.positions[b]
            )
            if not self.editable.can_collapse(a, b, position, self.min_area):
                continue
            self.editable.collapse(a, b, position)
            self.quadrics[a] = quadric
            self.versions[a] += 1
            remaining -= 1
            for w in sorted(self.editable.neighbors(a)):
                self._push(min(a, w), max(a, w))

        if remaining > target_vertices:
            raise MeshTopologyError(
                f"Decimation stalled at {remaining} vertices "
                f"(target {target_vertices}); no further collapse passes the "
                "manifold guards",
                "decimate",
            )
        return self.editable.to_mesh()


def decimate(mesh: Mesh, target_vertices: int) -> Mesh:
    """
    Reduce a closed manifold mesh to at most `target_vertices` vertices.

    Returns the input unchanged when it is already small enough.

    Raises:
        ParameterError: If the target is below the smallest closed mesh (4 vertices)
        MeshTopologyError: If the input is not an oriented manifold
    """
    if target_vertices < MIN_TARGET_VERTICES:
        raise ParameterError(
            f"target_vertices must be at least {MIN_TARGET_VERTICES}",
            "target_vertices",
            str(target_vertices),
        )
    if mesh.n_vertices <= target_vertices:
        return mesh
    result = DecimationService(mesh).run(target_vertices)
    logger.info(f"Decimated {mesh.n_vertices} -> {result.n_vertices} vertices")
    return result
