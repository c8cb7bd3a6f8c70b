"""
Mutable triangle mesh for local connectivity edits.

Decimation and remeshing apply thousands of local operations (split, collapse, flip)
that would be wasteful on the immutable Mesh. EditableMesh keeps a face table plus a
vertex-to-face index; every operation keeps faces counter-clockwise and the guards
reject edits that would break the 2-manifold property.
"""

import math
from typing import Dict, Iterator, List, Optional, Set, Tuple

import numpy as np

from app.models.mesh import Mesh

Face = Tuple[int, int, int]


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # np.cross for single 3-vectors
    return np.array(
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    )


def _norm(u: np.ndarray) -> float:
    return math.sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])


def _dot(u: np.ndarray, v: np.ndarray) -> float:
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


class EditableMesh:
    def __init__(self, mesh: Mesh):
        self.positions: List[np.ndarray] = [p.copy() for p in mesh.vertices]
        self.alive: List[bool] = [True] * mesh.n_vertices
        self.faces: Dict[int, Face] = {}
        self.vertex_faces: List[Set[int]] = [set() for _ in range(mesh.n_vertices)]
        self._next_face = 0
        for a, b, c in mesh.faces.tolist():
            self.add_face(a, b, c)
        # splits of interior edges, guarded collapses and flips keep a closed mesh
        # closed, so boundary queries can short-circuit
        self.closed = all(len(self.edge_faces(a, b)) == 2 for a, b in self.edges())

    # Face table
    def add_face(self, a: int, b: int, c: int) -> int:
        face_id = self._next_face
        self._next_face += 1
        self.faces[face_id] = (a, b, c)
        for v in (a, b, c):
            self.vertex_faces[v].add(face_id)
        return face_id

    def remove_face(self, face_id: int) -> None:
        for v in self.faces.pop(face_id):
            self.vertex_faces[v].discard(face_id)

    def add_vertex(self, position: np.ndarray) -> int:
        self.positions.append(np.asarray(position, dtype=np.float64))
        self.alive.append(True)
        self.vertex_faces.append(set())
        return len(self.positions) - 1

    @property
    def vertex_count(self) -> int:
        return sum(
            1 for v, live in enumerate(self.alive) if live and self.vertex_faces[v]
        )

    # Queries
    def edge_faces(self, a: int, b: int) -> List[int]:
        return sorted(self.vertex_faces[a] & self.vertex_faces[b])

    def neighbors(self, v: int) -> Set[int]:
        ring: Set[int] = set()
        for face_id in self.vertex_faces[v]:
            ring.update(self.faces[face_id])
        ring.discard(v)
        return ring

    def degree(self, v: int) -> int:
        return len(self.neighbors(v))

    def edges(self) -> Iterator[Tuple[int, int]]:
        seen: Set[Tuple[int, int]] = set()
        for face_id in sorted(self.faces):
            a, b, c = self.faces[face_id]
            for u, w in ((a, b), (b, c), (c, a)):
                key = (u, w) if u < w else (w, u)
                if key not in seen:
                    seen.add(key)
                    yield key

    def edge_length(self, a: int, b: int) -> float:
        return math.dist(self.positions[a], self.positions[b])

    def is_boundary_edge(self, a: int, b: int) -> bool:
        return len(self.edge_faces(a, b)) != 2

    def is_boundary_vertex(self, v: int) -> bool:
        if self.closed:
            return False
        return any(self.is_boundary_edge(v, w) for w in self.neighbors(v))

    def oriented(self, face_id: int, a: int, b: int) -> Optional[Face]:
        """Rotate a face so that (a, b) or (b, a) leads; None if the edge is absent."""
        x, y, z = self.faces[face_id]
        for face in ((x, y, z), (y, z, x), (z, x, y)):
            if {face[0], face[1]} == {a, b}:
                return face
        return None

    def opposite_vertices(self, a: int, b: int) -> List[int]:
        return [self.oriented(f, a, b)[2] for f in self.edge_faces(a, b)]

    def face_normal(
        self, face: Face, moved: Optional[Dict[int, np.ndarray]] = None
    ) -> np.ndarray:
        """Twice the area vector, optionally with some vertices moved."""
        moved = moved or {}
        p = [moved.get(v, self.positions[v]) for v in face]
        return _cross(p[1] - p[0], p[2] - p[0])

    def vertex_normal(self, v: int) -> np.ndarray:
        total = sum(
            (self.face_normal(self.faces[f]) for f in self.vertex_faces[v]),
            np.zeros(3),
        )
        norm = _norm(total)
        return total / norm if norm > 0 else total

    def moves_keep_orientation(
        self, faces: List[Face], moved: Dict[int, np.ndarray], min_area: float
    ) -> bool:
        """True if no listed face flips or shrinks below min_area after the move."""
        for face in faces:
            before = self.face_normal(face)
            after = self.face_normal(face, moved)
            if 0.5 * _norm(after) < min_area or _dot(before, after) <= 0:
                return False
        return True

    # Edits
    def split_edge(self, a: int, b: int) -> int:
        """Insert the midpoint of edge (a, b) and split both incident faces."""
        middle = self.add_vertex(0.5 * (self.positions[a] + self.positions[b]))
        for face_id in self.edge_faces(a, b):
            x, y, z = self.oriented(face_id, a, b)
            self.remove_face(face_id)
            self.add_face(x, middle, z)
            self.add_face(middle, y, z)
        return middle

    def can_collapse(
        self,
        keep: int,
        drop: int,
        position: np.ndarray,
        min_area: float,
        max_edge_length: Optional[float] = None,
    ) -> bool:
        """
        Check the guards for merging `drop` into `keep` at `position`.

        The link condition (the endpoints share exactly the two opposite vertices)
        preserves manifoldness and genus; opposite vertices must keep degree >= 3;
        surviving faces must neither flip nor become degenerate.
        """
        if self.is_boundary_edge(keep, drop):
            return False
        if self.is_boundary_vertex(keep) or self.is_boundary_vertex(drop):
            return False
        opposite = set(self.opposite_vertices(keep, drop))
        if len(opposite) != 2:
            return False
        if self.neighbors(keep) & self.neighbors(drop) != opposite:
            return False
        if any(self.degree(v) <= 3 for v in opposite):
            return False
        if self.degree(keep) + self.degree(drop) - 4 < 3:
            return False
        if max_edge_length is not None:
            for w in self.neighbors(drop) | self.neighbors(keep):
                if w in (keep, drop):
                    continue
                if math.dist(self.positions[w], position) > max_edge_length:
                    return False

        shared = set(self.edge_faces(keep, drop))
        surviving = []
        for face_id in (self.vertex_faces[keep] | self.vertex_faces[drop]) - shared:
            face = tuple(keep if v == drop else v for v in self.faces[face_id])
            surviving.append((self.faces[face_id], face))
        moved = {keep: position, drop: position}
        for original, merged in surviving:
            before = self.face_normal(original)
            after = self.face_normal(merged, moved)
            if 0.5 * _norm(after) < min_area or _dot(before, after) <= 0:
                return False
        return True

    def collapse(self, keep: int, drop: int, position: np.ndarray) -> None:
        for face_id in self.edge_faces(keep, drop):
            self.remove_face(face_id)
        for face_id in sorted(self.vertex_faces[drop]):
            face = tuple(keep if v == drop else v for v in self.faces[face_id])
            self.remove_face(face_id)
            self.add_face(*face)
        self.positions[keep] = np.asarray(position, dtype=np.float64)
        self.alive[drop] = False

    def can_flip(self, a: int, b: int, min_area: float) -> bool:
        faces = self.edge_faces(a, b)
        if len(faces) != 2:
            return False
        (_, _, c), (_, _, d) = (self.oriented(f, a, b) for f in faces)
        if c == d or d in self.neighbors(c):
            return False
        if self.degree(a) <= 3 or self.degree(b) <= 3:
            return False
        first, second = self._flipped_faces(a, b)
        old_normal = self.face_normal(self.faces[faces[0]]) + self.face_normal(
            self.faces[faces[1]]
        )
        for face in (first, second):
            normal = self.face_normal(face)
            if 0.5 * _norm(normal) < min_area:
                return False
            if _dot(normal, old_normal) <= 0:
                return False
        return True

    def _flipped_faces(self, a: int, b: int) -> Tuple[Face, Face]:
        one, two = self.edge_faces(a, b)
        x, y, c = self.oriented(one, a, b)
        _, _, d = self.oriented(two, a, b)
        # (x, y, c) and (y, x, d) become (x, d, c) and (d, y, c)
        return (x, d, c), (d, y, c)

    def flip(self, a: int, b: int) -> None:
        first, second = self._flipped_faces(a, b)
        for face_id in self.edge_faces(a, b):
            self.remove_face(face_id)
        self.add_face(*first)
        self.add_face(*second)

    def to_mesh(self) -> Mesh:
        """Compact live, referenced vertices and renumber faces in creation order."""
        used = sorted({v for face in self.faces.values() for v in face})
        remap = {old: new for new, old in enumerate(used)}
        vertices = np.array([self.positions[v] for v in used]).reshape(-1, 3)
        faces = np.array(
            [[remap[v] for v in self.faces[f]] for f in sorted(self.faces)],
            dtype=np.int64,
        ).reshape(-1, 3)
        return Mesh(vertices, faces)
