import logging
from typing import Optional, Tuple

import numpy as np
import torch
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from app.core.exceptions import MeshTopologyError
from app.models.loss import LossResult
from app.models.mesh import Adjacency, Mesh
from app.schemas.mesh import MeshValidityReport

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


def face_areas(mesh: Mesh) -> np.ndarray:
    v = mesh.vertices[mesh.faces]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def degenerate_faces(mesh: Mesh) -> np.ndarray:
    """Boolean mask of faces whose area is below the degeneracy tolerance."""
    return face_areas(mesh) < DEGENERATE_AREA


def face_normals(mesh: Mesh) -> np.ndarray:
    """
    Unit normals from the cross product of counter-clockwise edges.

    Degenerate faces get the zero vector; use degenerate_faces() to find them.
    """
    v = mesh.vertices[mesh.faces]
    cross = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    norms = np.linalg.norm(cross, axis=1, keepdims=True)
    keep = 0.5 * norms >= DEGENERATE_AREA
    return np.where(keep, cross / np.where(keep, norms, 1.0), 0.0)


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted average of incident face normals, normalized."""
    v = mesh.vertices[mesh.faces]
    weighted = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    accum = np.zeros_like(mesh.vertices)
    for corner in range(3):
        np.add.at(accum, mesh.faces[:, corner], weighted)
    norms = np.linalg.norm(accum, axis=1, keepdims=True)
    return np.where(norms > 0, accum / np.where(norms > 0, norms, 1.0), 0.0)


def require_neighbors(adj: Adjacency) -> None:
    isolated = np.flatnonzero(adj.degrees == 0)
    if len(isolated):
        raise MeshTopologyError(
            f"Vertex {int(isolated[0])} is isolated "
            f"({len(isolated)} isolated in total)",
            "differential_coords",
        )


def differential_coords(mesh: Mesh, adj: Optional[Adjacency] = None) -> np.ndarray:
    """delta_i = v_i - mean of the neighbor positions (uniform graph Laplacian)."""
    adj = adj or Adjacency.from_mesh(mesh)
    require_neighbors(adj)
    directed = adj.directed_edges
    neighbor_sum = np.zeros_like(mesh.vertices)
    np.add.at(neighbor_sum, directed[:, 0], mesh.vertices[directed[:, 1]])
    return mesh.vertices - neighbor_sum / adj.degrees[:, None]


def laplacian_term(vertices: torch.Tensor, adj: Adjacency) -> torch.Tensor:
    """Differentiable mean squared differential-coordinate norm."""
    directed = torch.as_tensor(adj.directed_edges)
    degrees = torch.as_tensor(adj.degrees, dtype=vertices.dtype)
    neighbor_sum = torch.zeros_like(vertices).index_add(
        0, directed[:, 0], vertices[directed[:, 1]]
    )
    delta = vertices - neighbor_sum / degrees[:, None]
    return (delta**2).sum(dim=1).mean()


def torch_face_normals(
    vertices: torch.Tensor, faces: np.ndarray
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Differentiable unit face normals and face areas; degenerate faces map to zero."""
    f = torch.as_tensor(faces)
    v0, v1, v2 = vertices[f[:, 0]], vertices[f[:, 1]], vertices[f[:, 2]]
    cross = torch.linalg.cross(v1 - v0, v2 - v0, dim=1)
    norms = cross.norm(dim=1, keepdim=True)
    areas = 0.5 * norms.squeeze(1)
    keep = (areas >= DEGENERATE_AREA)[:, None]
    safe = torch.where(keep, norms, torch.ones_like(norms))
    return torch.where(keep, cross / safe, torch.zeros_like(cross)), areas


def consistency_pairs(mesh: Mesh, adj: Adjacency) -> np.ndarray:
    """Shared-edge face pairs with both faces non-degenerate."""
    if len(adj.face_pairs) == 0:
        raise MeshTopologyError("Mesh has no interior edges", "normal_consistency")
    degenerate = degenerate_faces(mesh)
    pairs = adj.face_pairs[~(degenerate[adj.face_pairs].any(axis=1))]
    if len(pairs) == 0:
        raise MeshTopologyError(
            "Every shared-edge face pair touches a degenerate face",
            "normal_consistency",
        )
    return pairs


def normal_consistency_term(
    vertices: torch.Tensor, faces: np.ndarray, pairs: np.ndarray
) -> torch.Tensor:
    normals, _ = torch_face_normals(vertices, faces)
    p = torch.as_tensor(pairs)
    cosine = (normals[p[:, 0]] * normals[p[:, 1]]).sum(dim=1)
    return ((1.0 - cosine) ** 2).mean()


def _with_gradient(mesh: Mesh, term) -> LossResult:
    vertices = torch.tensor(mesh.vertices, dtype=torch.float64, requires_grad=True)
    value = term(vertices)
    (gradient,) = torch.autograd.grad(value, vertices)
    return LossResult(float(value.detach()), gradient.numpy())


def laplacian_loss(mesh: Mesh, adj: Optional[Adjacency] = None) -> LossResult:
    """Mean squared norm of the differential coordinates, with its exact gradient."""
    adj = adj or Adjacency.from_mesh(mesh)
    require_neighbors(adj)
    return _with_gradient(mesh, lambda v: laplacian_term(v, adj))


def normal_consistency_loss(mesh: Mesh, adj: Optional[Adjacency] = None) -> LossResult:
    """Mean (1 - n_i . n_j)^2 over shared-edge face pairs, with its exact gradient."""
    adj = adj or Adjacency.from_mesh(mesh)
    pairs = consistency_pairs(mesh, adj)
    return _with_gradient(mesh, lambda v: normal_consistency_term(v, mesh.faces, pairs))


def _non_manifold_vertex_count(mesh: Mesh, adj: Adjacency) -> int:
    """Vertices whose incident faces do not form a single edge-connected fan."""
    faces = mesh.faces
    n_corners = 3 * len(faces)
    corner_vertex = faces.reshape(-1)

    rows, cols = [], []
    for edge, incident in zip(adj.edges, adj.edge_faces):
        for a, b in zip(incident[:-1], incident[1:]):
            for vertex in edge:
                rows.append(3 * a + int(np.flatnonzero(faces[a] == vertex)[0]))
                cols.append(3 * b + int(np.flatnonzero(faces[b] == vertex)[0]))
    graph = coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n_corners, n_corners)
    )
    _, labels = connected_components(graph, directed=False)
    fans = np.unique(np.stack([corner_vertex, labels], axis=1), axis=0)
    fan_counts = np.bincount(fans[:, 0], minlength=mesh.n_vertices)
    return int((fan_counts > 1).sum())


def validate(mesh: Mesh) -> MeshValidityReport:
    """Exhaustive edge/face scan. Reports problems, never raises."""
    if mesh.n_faces == 0:
        return MeshValidityReport(
            is_manifold=True,
            is_oriented=True,
            boundary_edge_count=0,
            non_manifold_edge_count=0,
            non_manifold_vertex_count=0,
            degenerate_face_count=0,
            duplicate_face_count=0,
            euler_characteristic=mesh.n_vertices,
            n_vertices=mesh.n_vertices,
            n_edges=0,
            n_faces=0,
        )

    adj = Adjacency.from_mesh(mesh)
    counts = np.array([len(f) for f in adj.edge_faces])
    boundary = int((counts == 1).sum())
    non_manifold_edges = int((counts > 2).sum())

    _, face_multiplicity = np.unique(
        np.sort(mesh.faces, axis=1), axis=0, return_counts=True
    )
    duplicates = int((face_multiplicity - 1).sum())

    half_edges = np.concatenate(
        [mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]], mesh.faces[:, [2, 0]]]
    )
    _, directed_multiplicity = np.unique(half_edges, axis=0, return_counts=True)
    oriented = bool((directed_multiplicity == 1).all())

    non_manifold_vertices = _non_manifold_vertex_count(mesh, adj)
    degenerate = int(degenerate_faces(mesh).sum())
    n_edges = len(adj.edges)

    report = MeshValidityReport(
        is_manifold=non_manifold_edges == 0
        and non_manifold_vertices == 0
        and duplicates == 0,
        is_oriented=oriented,
        boundary_edge_count=boundary,
        non_manifold_edge_count=non_manifold_edges,
        non_manifold_vertex_count=non_manifold_vertices,
        degenerate_face_count=degenerate,
        duplicate_face_count=duplicates,
        euler_characteristic=mesh.n_vertices - n_edges + mesh.n_faces,
        n_vertices=mesh.n_vertices,
        n_edges=n_edges,
        n_faces=mesh.n_faces,
    )
    if not report.is_valid:
        logger.debug(f"Invalid mesh: {report.model_dump()}")
    return report


def require_manifold(mesh: Mesh, operation: str) -> MeshValidityReport:
    """Raise MeshTopologyError unless the mesh is an oriented 2-manifold."""
    report = validate(mesh)
    if not (report.is_manifold and report.is_oriented):
        raise MeshTopologyError(
            f"{operation} needs an oriented manifold mesh "
            f"({report.non_manifold_edge_count} non-manifold edges, "
            f"{report.non_manifold_vertex_count} non-manifold vertices, "
            f"{report.duplicate_face_count} duplicate faces, "
            f"oriented={report.is_oriented})",
            operation,
        )
    return report


def hausdorff_distance(first: Mesh, second: Mesh) -> float:
    """Symmetric vertex-to-vertex Hausdorff distance."""
    if first.n_vertices == 0 or second.n_vertices == 0:
        raise MeshTopologyError("Hausdorff distance of an empty mesh", "hausdorff")
    forward, _ = cKDTree(second.vertices).query(first.vertices)
    backward, _ = cKDTree(first.vertices).query(second.vertices)
    return float(max(forward.max(), backward.max()))
