from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field

Point3 = Tuple[float, float, float]


class ProxyKind(str, Enum):
    """Procedural body-proxy families."""

    SPHERE = "sphere"
    CAPSULE = "capsule"
    POSED_MULTI_CAPSULE = "posed-multi-capsule"


class CapsuleSegment(BaseModel):
    """One skeleton bone: the set of points within `radius` of segment start-end."""

    start: Point3
    end: Point3
    radius: float


class BodyShape(BaseModel):
    """Body dimensions (world units, y up) expanded into a capsule skeleton."""

    height: float = Field(1.7, description="Crown-to-sole height")
    shoulder_width: float = Field(0.40, description="Distance between shoulder joints")
    hip_width: float = Field(0.20, description="Distance between hip joints")
    limb_radius_scale: float = Field(
        1.0, description="Multiplier on the default limb radii"
    )


class BodyPose(BaseModel):
    """Joint angles in degrees; zero abduction means limbs hang along the body."""

    arm_abduction_deg: float = 55.0
    elbow_flexion_deg: float = 0.0
    leg_abduction_deg: float = 6.0
    knee_flexion_deg: float = 0.0


class BodyProxyParams(BaseModel):
    """
    Parameters for make_body_proxy.

    Dimensions are not constrained here; the proxy service validates them so that
    non-positive values surface as ParameterError.
    """

    kind: ProxyKind = ProxyKind.POSED_MULTI_CAPSULE
    radius: float = Field(1.0, description="Sphere or capsule radius")
    subdivisions: int = Field(3, description="Icosphere subdivision level")
    segment_start: Point3 = (0.0, -0.5, 0.0)
    segment_end: Point3 = (0.0, 0.5, 0.0)
    longitude_count: int = Field(32, description="Capsule ring resolution")
    latitude_count: int = Field(8, description="Rings per capsule hemisphere")
    cylinder_rings: int = Field(8, description="Rings along the capsule shaft")
    shape: BodyShape = BodyShape()
    pose: BodyPose = BodyPose()
    segments: Optional[List[CapsuleSegment]] = Field(
        None, description="Explicit skeleton; overrides shape and pose when given"
    )
    grid_resolution: int = Field(72, description="Level-set grid cells per axis")
    blend_radius: float = Field(0.03, description="Smooth-minimum blend width")


class MeshValidityReport(BaseModel):
    """Result of an exhaustive edge/face scan of a mesh."""

    is_manifold: bool
    is_oriented: bool
    boundary_edge_count: int
    non_manifold_edge_count: int
    non_manifold_vertex_count: int
    degenerate_face_count: int
    duplicate_face_count: int = 0
    euler_characteristic: int
    n_vertices: int
    n_edges: int
    n_faces: int

    @property
    def is_valid(self) -> bool:
        return self.is_manifold and self.is_oriented and self.degenerate_face_count == 0

    @property
    def is_closed(self) -> bool:
        return self.boundary_edge_count == 0

    def to_text(self) -> str:
        """Human-readable report, one field per line."""
        lines = [
            "mesh validity report",
            f"  vertices             {self.n_vertices}",
            f"  edges                {self.n_edges}",
            f"  faces                {self.n_faces}",
            f"  euler characteristic {self.euler_characteristic}",
            f"  manifold             {'yes' if self.is_manifold else 'no'}",
            f"  consistently oriented {'yes' if self.is_oriented else 'no'}",
            f"  boundary edges       {self.boundary_edge_count}",
            f"  non-manifold edges   {self.non_manifold_edge_count}",
            f"  non-manifold vertices {self.non_manifold_vertex_count}",
            f"  degenerate faces     {self.degenerate_face_count}",
            f"  duplicate faces      {self.duplicate_face_count}",
        ]
        return "\n".join(lines)
