import logging
from typing import List, Optional

import numpy as np
import trimesh
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from skimage import measure

from app.core.exceptions import MeshTopologyError, ParameterError
from app.core.service_utils import ensure_in_range, ensure_positive
from app.models.mesh import Mesh
from app.schemas.mesh import (
    BodyPose,
    BodyProxyParams,
    BodyShape,
    CapsuleSegment,
    ProxyKind,
)
from app.services.mesh_service import validate

logger = logging.getLogger(__name__)

REFERENCE_HEIGHT = 1.7


def point_segment_distance(points: np.ndarray, start, end) -> np.ndarray:
    """Distance from each point (N, 3) to the closed segment start-end."""
    a = np.asarray(start, dtype=np.float64)
    d = np.asarray(end, dtype=np.float64) - a
    length_sq = float(d @ d)
    if length_sq == 0.0:
        return np.linalg.norm(points - a, axis=-1)
    t = np.clip(((points - a) @ d) / length_sq, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[..., None] * d), axis=-1)


def segment_segment_distance(p1, q1, p2, q2) -> float:
    """Closest distance between two closed 3D segments."""
    p1, q1, p2, q2 = (np.asarray(x, dtype=np.float64) for x in (p1, q1, p2, q2))
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    eps = 1e-15
    if a <= eps and e <= eps:
        s = t = 0.0
    elif a <= eps:
        s, t = 0.0, float(np.clip(f / e, 0.0, 1.0))
    else:
        c = d1 @ r
        if e <= eps:
            s, t = float(np.clip(-c / a, 0.0, 1.0)), 0.0
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = 0.0
            if denom > eps:
                s = float(np.clip((b * f - c * e) / denom, 0.0, 1.0))
            t = (b * s + f) / e
            if t < 0.0:
                s, t = float(np.clip(-c / a, 0.0, 1.0)), 0.0
            elif t > 1.0:
                s, t = float(np.clip((b - c) / a, 0.0, 1.0)), 1.0
    return float(np.linalg.norm((p1 + d1 * s) - (p2 + d2 * t)))


def _orient_outward(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Reverse every face if the enclosed signed volume is negative."""
    v = vertices[faces]
    volume = np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0
    return faces[:, [0, 2, 1]] if volume < 0 else faces


def body_skeleton(shape: BodyShape, pose: BodyPose) -> List[CapsuleSegment]:
    """
    Capsule skeleton of a standing body centered at the origin, y up, facing +z.

    Proportions scale with height; limb radii additionally with limb_radius_scale.
    Arms and legs abduct in the frontal plane; elbows bend forward, knees backward.
    """
    for name in ("height", "shoulder_width", "hip_width", "limb_radius_scale"):
        ensure_positive(getattr(shape, name), f"shape.{name}")
    h = shape.height
    s = h / REFERENCE_HEIGHT
    limb = s * shape.limb_radius_scale
    top = 0.5 * h
    head_y = top - 0.12 * s
    shoulder_y = 0.32 * h
    hip_y = 0.03 * h
    forward = np.array([0.0, 0.0, 1.0])

    segments = [
        CapsuleSegment(
            start=(0, head_y - 0.02 * s, 0),
            end=(0, head_y + 0.02 * s, 0),
            radius=0.10 * s,
        ),
        CapsuleSegment(
            start=(0, head_y - 0.10 * s, 0), end=(0, shoulder_y, 0), radius=0.05 * s
        ),
        CapsuleSegment(
            start=(0, hip_y + 0.05 * s, 0),
            end=(0, shoulder_y - 0.06 * s, 0),
            radius=0.13 * s,
        ),
        CapsuleSegment(
            start=(-0.5 * shape.shoulder_width, shoulder_y, 0),
            end=(0.5 * shape.shoulder_width, shoulder_y, 0),
            radius=0.06 * limb,
        ),
        CapsuleSegment(
            start=(-0.5 * shape.hip_width, hip_y, 0),
            end=(0.5 * shape.hip_width, hip_y, 0),
            radius=0.09 * limb,
        ),
    ]

    arm = np.deg2rad(pose.arm_abduction_deg)
    elbow = np.deg2rad(pose.elbow_flexion_deg)
    leg = np.deg2rad(pose.leg_abduction_deg)
    knee = np.deg2rad(pose.knee_flexion_deg)
    for side in (1.0, -1.0):
        shoulder = np.array([side * 0.5 * shape.shoulder_width, shoulder_y, 0.0])
        upper = np.array([side * np.sin(arm), -np.cos(arm), 0.0])
        elbow_joint = shoulder + 0.30 * s * upper
        lower = np.cos(elbow) * upper + np.sin(elbow) * forward
        wrist = elbow_joint + 0.27 * s * lower

        hip = np.array([side * 0.5 * shape.hip_width, hip_y, 0.0])
        thigh = np.array([side * np.sin(leg), -np.cos(leg), 0.0])
        knee_joint = hip + 0.42 * s * thigh
        ankle = knee_joint + 0.42 * s * (np.cos(knee) * thigh - np.sin(knee) * forward)

        for start, end, radius in (
            (shoulder, elbow_joint, 0.045 * limb),
            (elbow_joint, wrist, 0.038 * limb),
            (hip, knee_joint, 0.075 * limb),
            (knee_joint, ankle, 0.055 * limb),
        ):
            segments.append(
                CapsuleSegment(start=tuple(start), end=tuple(end), radius=float(radius))
            )
    return segments


def ensure_connected(segments: List[CapsuleSegment]) -> None:
    """
    Raises:
        ParameterError: If the capsule union splits into several pieces
    """
    n = len(segments)
    rows, cols = [], []
    for i in range(n):
        for j in range(i + 1, n):
            gap = segment_segment_distance(
                segments[i].start, segments[i].end, segments[j].start, segments[j].end
            )
            if gap < segments[i].radius + segments[j].radius:
                rows.append(i)
                cols.append(j)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    count, _ = connected_components(graph, directed=False)
    if count != 1:
        raise ParameterError(
            f"Capsule skeleton splits into {count} disconnected pieces", "segments"
        )


class ProxyService:
    """Builds closed genus-0 body-proxy meshes."""

    def __init__(self, params: Optional[BodyProxyParams] = None):
        self.params = params or BodyProxyParams()

    def build(self, kind: Optional[ProxyKind] = None) -> Mesh:
        kind = ProxyKind(kind or self.params.kind)
        if kind == ProxyKind.SPHERE:
            mesh = self.sphere()
        elif kind == ProxyKind.CAPSULE:
            mesh = self.capsule()
        else:
            mesh = self.posed_multi_capsule()
        logger.info(f"Built {kind.value} proxy: {mesh.n_vertices} vertices")
        return mesh

    def sphere(self) -> Mesh:
        p = self.params
        ensure_positive(p.radius, "radius")
        ensure_in_range(p.subdivisions, "subdivisions", 0, 7)
        ico = trimesh.creation.icosphere(subdivisions=p.subdivisions, radius=1.0)
        vertices = np.asarray(ico.vertices, dtype=np.float64)
        vertices /= np.linalg.norm(vertices, axis=1, keepdims=True)
        faces = _orient_outward(vertices, np.asarray(ico.faces, dtype=np.int64))
        return Mesh(p.radius * vertices, faces)

    def capsule(self) -> Mesh:
        p = self.params
        ensure_positive(p.radius, "radius")
        if p.longitude_count < 3 or p.latitude_count < 1 or p.cylinder_rings < 0:
            raise ParameterError(
                "Capsule needs longitude_count >= 3, latitude_count >= 1, "
                "cylinder_rings >= 0",
                "capsule",
            )
        start = np.asarray(p.segment_start, dtype=np.float64)
        end = np.asarray(p.segment_end, dtype=np.float64)
        axis = end - start
        length = ensure_positive(float(np.linalg.norm(axis)), "capsule length")
        axis = axis / length
        helper = np.eye(3)[0] if abs(axis[0]) < 0.9 else np.eye(3)[2]
        e1 = np.cross(axis, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)

        phi = 2.0 * np.pi * np.arange(p.longitude_count) / p.longitude_count
        around = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
        latitudes = (np.pi / 2) * np.arange(1, p.latitude_count + 1) / p.latitude_count

        rings = []
        for theta in latitudes:
            offset = np.cos(theta) * axis + np.sin(theta) * around
            rings.append(end + p.radius * offset)
        for i in range(1, p.cylinder_rings + 1):
            center = end + (start - end) * i / (p.cylinder_rings + 1)
            rings.append(center + p.radius * around)
        for theta in latitudes[::-1]:
            offset = -np.cos(theta) * axis + np.sin(theta) * around
            rings.append(start + p.radius * offset)

        n = p.longitude_count
        top = end + p.radius * axis
        bottom = start - p.radius * axis
        vertices = np.vstack([top[None], *rings, bottom[None]])
        bottom_index = len(vertices) - 1

        faces = []
        for j in range(n):
            faces.append((0, 1 + j, 1 + (j + 1) % n))
        for r in range(len(rings) - 1):
            base, below = 1 + r * n, 1 + (r + 1) * n
            for j in range(n):
                k = (j + 1) % n
                faces.append((base + j, below + j, below + k))
                faces.append((base + j, below + k, base + k))
        last = 1 + (len(rings) - 1) * n
        for j in range(n):
            faces.append((bottom_index, last + (j + 1) % n, last + j))
        faces = np.asarray(faces, dtype=np.int64)
        return Mesh(vertices, _orient_outward(vertices, faces))

    def skeleton(self) -> List[CapsuleSegment]:
        p = self.params
        segments = p.segments or body_skeleton(p.shape, p.pose)
        for i, segment in enumerate(segments):
            ensure_positive(segment.radius, f"segments[{i}].radius")
        ensure_connected(segments)
        return segments

    def distance_field(
        self, points: np.ndarray, segments: List[CapsuleSegment]
    ) -> np.ndarray:
        """Smooth-minimum union of capsule signed distances."""
        k = self.params.blend_radius
        field = None
        for segment in segments:
            d = point_segment_distance(points, segment.start, segment.end)
            d = d - segment.radius
            if field is None:
                field = d
            elif k > 0:
                h = np.maximum(k - np.abs(field - d), 0.0) / k
                field = np.minimum(field, d) - h * h * k * 0.25
            else:
                field = np.minimum(field, d)
        return field

    def posed_multi_capsule(self) -> Mesh:
        p = self.params
        if p.grid_resolution < 8:
            raise ParameterError(
                "grid_resolution must be at least 8",
                "grid_resolution",
                str(p.grid_resolution),
            )
        if p.blend_radius < 0:
            raise ParameterError(
                "blend_radius must be non-negative", "blend_radius", str(p.blend_radius)
            )
        segments = self.skeleton()
        ends = np.array([[s.start, s.end] for s in segments]).reshape(-1, 3)
        radii = np.array([s.radius for s in segments])

        extent = ends.max(axis=0) - ends.min(axis=0) + 2.0 * radii.max()
        spacing = min(float(extent.max()) / p.grid_resolution, float(radii.min()))
        pad = radii.max() + p.blend_radius + 2.0 * spacing
        low = ends.min(axis=0) - pad
        high = ends.max(axis=0) + pad
        counts = np.ceil((high - low) / spacing).astype(int) + 1
        # grid symmetric about the box center
        center = 0.5 * (low + high)
        low = center - 0.5 * spacing * (counts - 1)

        axes = [low[i] + spacing * np.arange(counts[i]) for i in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        field = self.distance_field(grid.reshape(-1, 3), segments)
        field = field.reshape(grid.shape[:3])
        logger.debug(f"Capsule field grid {tuple(counts)} at spacing {spacing:.4g}")

        verts, faces, _, _ = measure.marching_cubes(
            field, level=0.0, spacing=(spacing, spacing, spacing)
        )
        verts = verts.astype(np.float64) + low
        surface = trimesh.Trimesh(verts, faces, process=False)
        surface.remove_unreferenced_vertices()
        vertices = np.asarray(surface.vertices, dtype=np.float64)
        faces = _orient_outward(vertices, np.asarray(surface.faces, dtype=np.int64))

        mesh = Mesh(vertices, faces)
        report = validate(mesh)
        closed_sphere = report.is_closed and report.euler_characteristic == 2
        if not (report.is_manifold and closed_sphere):
            raise MeshTopologyError(
                "Capsule union did not mesh to a closed genus-0 surface "
                f"(euler {report.euler_characteristic}, "
                f"{report.boundary_edge_count} boundary edges)",
                "make_body_proxy",
            )
        return mesh


def make_body_proxy(
    kind: ProxyKind | str, params: Optional[BodyProxyParams] = None
) -> Mesh:
    """
    Build a closed, outward-oriented genus-0 proxy mesh.

    Raises:
        ParameterError: On non-positive dimensions or a disconnected skeleton
    """
    return ProxyService(params).build(ProxyKind(kind))
