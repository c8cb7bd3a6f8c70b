from dataclasses import dataclass, field
from functools import cached_property
from typing import List

import numpy as np

from app.core.exceptions import MeshTopologyError, ParameterError


@dataclass(frozen=True)
class Mesh:
    """Indexed triangle mesh; counter-clockwise faces have outward normals."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(vertices):
                raise MeshTopologyError(
                    f"Face index out of range for {len(vertices)} vertices", "mesh"
                )
            repeated = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])
            )
            if repeated.any():
                raise MeshTopologyError(
                    f"Face {int(np.argmax(repeated))} references a vertex twice", "mesh"
                )
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise ParameterError(
                f"Vertex array shape {vertices.shape} != {self.vertices.shape}",
                "vertices",
            )
        return Mesh(vertices, self.faces)

    def translated(self, offset) -> "Mesh":
        return Mesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces)

    def rotated_about_vertical(self, angle_deg: float) -> "Mesh":
        """Rotate about the +y axis (right-handed)."""
        a = np.deg2rad(angle_deg)
        rotation = np.array(
            [[np.cos(a), 0.0, np.sin(a)], [0.0, 1.0, 0.0], [-np.sin(a), 0.0, np.cos(a)]]
        )
        return Mesh(self.vertices @ rotation.T, self.faces)

    def edges(self) -> np.ndarray:
        """Unique undirected edges (E, 2), lower index first."""
        if not self.n_faces:
            return np.zeros((0, 2), dtype=np.int64)
        pairs = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        return np.unique(np.sort(pairs, axis=1), axis=0)

    def edge_lengths(self) -> np.ndarray:
        edges = self.edges()
        return np.linalg.norm(
            self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]], axis=1
        )

    def mean_edge_length(self) -> float:
        lengths = self.edge_lengths()
        return float(lengths.mean()) if len(lengths) else 0.0

    def bbox_diagonal(self) -> float:
        if not self.n_vertices:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


@dataclass(frozen=True)
class Adjacency:
    """
    Connectivity derived from a mesh.

    edges: (E, 2) unique edges; edge_faces[e]: faces incident to edge e;
    face_pairs: (P, 2) faces sharing an edge; neighbors[i]: sorted vertex ring of i.
    """

    edges: np.ndarray
    edge_faces: List[np.ndarray]
    face_pairs: np.ndarray
    neighbors: List[np.ndarray] = field(repr=False)

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "Adjacency":
        faces = mesh.faces
        n_faces = len(faces)
        if n_faces == 0:
            return cls(
                np.zeros((0, 2), dtype=np.int64),
                [],
                np.zeros((0, 2), dtype=np.int64),
                [np.zeros(0, dtype=np.int64) for _ in range(mesh.n_vertices)],
            )

        corner_edges = np.concatenate(
            [faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]
        )
        corner_faces = np.tile(np.arange(n_faces), 3)
        edges, inverse = np.unique(
            np.sort(corner_edges, axis=1), axis=0, return_inverse=True
        )
        inverse = inverse.reshape(-1)

        order = np.argsort(inverse, kind="stable")
        boundaries = np.flatnonzero(np.diff(inverse[order])) + 1
        groups = np.split(corner_faces[order], boundaries)
        edge_faces = [np.sort(group) for group in groups]

        pairs = []
        for incident in edge_faces:
            for a, b in zip(incident[:-1], incident[1:]):
                pairs.append((a, b))
        face_pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)

        directed = np.concatenate([edges, edges[:, ::-1]])
        directed = directed[np.lexsort((directed[:, 1], directed[:, 0]))]
        starts = np.searchsorted(directed[:, 0], np.arange(mesh.n_vertices + 1))
        neighbors = [
            directed[starts[i] : starts[i + 1], 1] for i in range(mesh.n_vertices)
        ]
        return cls(edges, edge_faces, face_pairs, neighbors)

    @cached_property
    def directed_edges(self) -> np.ndarray:
        """(2E, 2) rows (i, j) for every neighbor j of i."""
        return np.concatenate([self.edges, self.edges[:, ::-1]])

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.neighbors], dtype=np.int64)

    def is_symmetric(self) -> bool:
        for i, ring in enumerate(self.neighbors):
            for j in ring:
                if i not in self.neighbors[j]:
                    return False
        return True
