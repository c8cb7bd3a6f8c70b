import logging

import numpy as np

from app.core.service_utils import ensure_positive
from app.models.mesh import Mesh
from app.services.mesh_editing import EditableMesh
from app.services.mesh_service import DEGENERATE_AREA, require_manifold

logger = logging.getLogger(__name__)

SPLIT_RATIO = 4.0 / 3.0
COLLAPSE_RATIO = 4.0 / 5.0
MAX_SPLIT_PASSES = 16


class RemeshService:
    """
    Incremental isotropic remeshing.

    Each iteration splits edges longer than 4/3 of the target, collapses edges
    shorter than 4/5 of it onto one endpoint, flips edges towards valence 6 and
    relaxes vertices tangentially. Boundary edges are never collapsed or flipped.
    """

    def __init__(self, mesh: Mesh, target_edge_length: float, iterations: int = 5):
        ensure_positive(target_edge_length, "target_edge_length")
        require_manifold(mesh, "remesh")
        self.target = float(target_edge_length)
        self.high = SPLIT_RATIO * self.target
        self.low = COLLAPSE_RATIO * self.target
        self.iterations = iterations
        self.min_area = max(DEGENERATE_AREA, 1e-6 * self.target**2)
        self.editable = EditableMesh(mesh)

    def split_long_edges(self) -> int:
        total = 0
        for _ in range(MAX_SPLIT_PASSES):
            mesh = self.editable
            long_edges = [
                (mesh.edge_length(a, b), a, b)
                for a, b in mesh.edges()
                if mesh.edge_length(a, b) > self.high
            ]
            if not long_edges:
                break
            for _, a, b in sorted(long_edges, reverse=True):
                if b in mesh.neighbors(a) and mesh.edge_length(a, b) > self.high:
                    mesh.split_edge(a, b)
                    total += 1
        return total

    def collapse_short_edges(self) -> int:
        mesh = self.editable
        short_edges = sorted(
            (mesh.edge_length(a, b), a, b)
            for a, b in mesh.edges()
            if mesh.edge_length(a, b) < self.low
        )
        total = 0
        for _, a, b in short_edges:
            if not (mesh.alive[a] and mesh.alive[b]) or b not in mesh.neighbors(a):
                continue
            if mesh.edge_length(a, b) >= self.low:
                continue
            for keep, drop in ((a, b), (b, a)):
                position = mesh.positions[keep]
                if mesh.can_collapse(keep, drop, position, self.min_area, self.high):
                    mesh.collapse(keep, drop, position)
                    total += 1
                    break
        return total

    def _valence_target(self, v: int) -> int:
        return 4 if self.editable.is_boundary_vertex(v) else 6

    def equalize_valences(self) -> int:
        mesh = self.editable
        total = 0
        for a, b in list(mesh.edges()):
            if b not in mesh.neighbors(a) or mesh.is_boundary_edge(a, b):
                continue
            c, d = mesh.opposite_vertices(a, b)
            ends = (a, b, c, d)
            before = [mesh.degree(v) - self._valence_target(v) for v in ends]
            after = [before[0] - 1, before[1] - 1, before[2] + 1, before[3] + 1]
            if sum(abs(x) for x in after) < sum(abs(x) for x in before):
                if mesh.can_flip(a, b, self.min_area):
                    mesh.flip(a, b)
                    total += 1
        return total

    def tangential_relaxation(self) -> None:
        mesh = self.editable
        for v in range(len(mesh.positions)):
            if not mesh.alive[v] or not mesh.vertex_faces[v]:
                continue
            if mesh.is_boundary_vertex(v):
                continue
            ring = sorted(mesh.neighbors(v))
            centroid = np.mean([mesh.positions[w] for w in ring], axis=0)
            normal = mesh.vertex_normal(v)
            p = mesh.positions[v]
            relaxed = centroid + normal * np.dot(normal, p - centroid)
            faces = [mesh.faces[f] for f in sorted(mesh.vertex_faces[v])]
            if mesh.moves_keep_orientation(faces, {v: relaxed}, self.min_area):
                mesh.positions[v] = relaxed

    def run(self) -> Mesh:
        for iteration in range(self.iterations):
            splits = self.split_long_edges()
            collapses = self.collapse_short_edges()
            flips = self.equalize_valences()
            self.tangential_relaxation()
            logger.debug(
                f"Remesh iteration {iteration}: {splits} splits, "
                f"{collapses} collapses, {flips} flips"
            )
        return self.editable.to_mesh()


def remesh(mesh: Mesh, target_edge_length: float, iterations: int = 5) -> Mesh:
    """
    Remesh towards a uniform edge length.

    Raises:
        ParameterError: If the target length is not positive
        MeshTopologyError: If the input is not an oriented manifold
    """
    result = RemeshService(mesh, target_edge_length, iterations).run()
    logger.info(
        f"Remeshed {mesh.n_vertices} -> {result.n_vertices} vertices "
        f"(target edge {target_edge_length:.4g}, mean {result.mean_edge_length():.4g})"
    )
    return result
