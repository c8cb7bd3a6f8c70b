"""
Weak-perspective rasterization of meshes into normal + alpha buffers.

Visibility (which front-facing triangle wins each pixel) is resolved in numpy with a
per-pixel depth test. The shading that depends on vertex positions is then evaluated
in torch so gradients reach the vertices: barycentric normal interpolation for
covered pixels, and, when softness > 0, a sigmoid of the signed pixel distance to the
nearest silhouette edge for alpha.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple

import numpy as np
import torch

from app.core.exceptions import RasterError
from app.models.camera import Camera
from app.models.mesh import Mesh
from app.models.normal_map import BACKGROUND_RGB, NormalMap

logger = logging.getLogger(__name__)

INSIDE_TOLERANCE = 1e-9
SEARCH_RADIUS_SIGMAS = 6.0
DISTANCE_EPS = 1e-12


@dataclass(frozen=True)
class RasterGradients:
    """d loss / d vertices, one 3-vector per vertex."""

    vertices: np.ndarray


@dataclass(frozen=True)
class _Visibility:
    """Winning face per covered pixel (flat pixel indices, ascending)."""

    pixels: np.ndarray
    faces: np.ndarray
    covered: np.ndarray


def _project(
    vertices: torch.Tensor, camera: Camera
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Camera-space positions plus continuous pixel coordinates (col, row)."""
    rotation = torch.as_tensor(camera.rotation(), dtype=vertices.dtype)
    cam = vertices @ rotation.T
    offset_x, offset_y = camera.principal_offset
    ndc_x = camera.scale * cam[:, 0] + offset_x
    ndc_y = camera.scale * cam[:, 1] + offset_y
    col = (ndc_x + 1.0) * 0.5 * camera.width
    row = (1.0 - ndc_y) * 0.5 * camera.height
    return cam, torch.stack([col, row], dim=1)


def _pixel_pairs(
    lows: np.ndarray, highs: np.ndarray, camera: Camera
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Enumerate (primitive, pixel) pairs whose pixel center lies in a bounding box.

    lows/highs are (N, 2) continuous (col, row) bounds per primitive.
    """
    first = np.ceil(lows - 0.5)
    last = np.floor(highs - 0.5)
    col_lo = np.clip(first[:, 0], 0, camera.width).astype(np.int64)
    col_hi = np.clip(last[:, 0], -1, camera.width - 1).astype(np.int64)
    row_lo = np.clip(first[:, 1], 0, camera.height).astype(np.int64)
    row_hi = np.clip(last[:, 1], -1, camera.height - 1).astype(np.int64)
    widths = np.maximum(col_hi - col_lo + 1, 0)
    heights = np.maximum(row_hi - row_lo + 1, 0)
    counts = widths * heights
    owner = np.repeat(np.arange(len(lows)), counts)
    if len(owner) == 0:
        return owner, owner
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(len(owner)) - starts
    cols = col_lo[owner] + local % widths[owner]
    rows = row_lo[owner] + local // widths[owner]
    return owner, rows * camera.width + cols


def _pixel_centers(pixels: np.ndarray, camera: Camera) -> np.ndarray:
    return np.stack(
        [pixels % camera.width + 0.5, pixels // camera.width + 0.5], axis=1
    ).astype(np.float64)


def _edge_function(a, b, q):
    """Twice the signed area of (a, b, q) in pixel coordinates."""
    ab_x, ab_y = b[..., 0] - a[..., 0], b[..., 1] - a[..., 1]
    aq_x, aq_y = q[..., 0] - a[..., 0], q[..., 1] - a[..., 1]
    return ab_x * aq_y - ab_y * aq_x


def _front_facing(pixel_xy: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Counter-clockwise in NDC (y up) means clockwise in pixel rows (y down)."""
    p = pixel_xy[faces]
    return _edge_function(p[:, 0], p[:, 1], p[:, 2]) < 0


def _resolve_visibility(
    pixel_xy: np.ndarray, depth: np.ndarray, faces: np.ndarray, camera: Camera
) -> _Visibility:
    covered = np.zeros(camera.height * camera.width, dtype=bool)
    front = np.flatnonzero(_front_facing(pixel_xy, faces))
    empty = np.zeros(0, dtype=np.int64)
    if len(front) == 0:
        return _Visibility(empty, empty, covered)

    corners = pixel_xy[faces[front]]
    owner, pixels = _pixel_pairs(corners.min(axis=1), corners.max(axis=1), camera)
    if len(owner) == 0:
        return _Visibility(empty, empty, covered)
    face_ids = front[owner]
    q = _pixel_centers(pixels, camera)
    p = pixel_xy[faces[face_ids]]
    area = _edge_function(p[:, 0], p[:, 1], p[:, 2])
    b0 = _edge_function(p[:, 1], p[:, 2], q) / area
    b1 = _edge_function(p[:, 2], p[:, 0], q) / area
    b2 = 1.0 - b0 - b1
    inside = (b0 >= -INSIDE_TOLERANCE) & (b1 >= -INSIDE_TOLERANCE) & (
        b2 >= -INSIDE_TOLERANCE
    )
    pixels, face_ids = pixels[inside], face_ids[inside]
    z = depth[faces[face_ids]]
    pixel_depth = b0[inside] * z[:, 0] + b1[inside] * z[:, 1] + b2[inside] * z[:, 2]

    # nearest (largest camera z) wins; ties go to the lowest face id
    order = np.lexsort((face_ids, -pixel_depth, pixels))
    pixels, face_ids = pixels[order], face_ids[order]
    first = np.unique(pixels, return_index=True)[1]
    pixels, face_ids = pixels[first], face_ids[first]
    covered[pixels] = True
    return _Visibility(pixels, face_ids, covered)


@lru_cache(maxsize=8)
def _cached_edge_topology(
    face_bytes: bytes, n_faces: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    faces = np.frombuffer(face_bytes, dtype=np.int64).reshape(n_faces, 3)
    corner_edges = np.concatenate(
        [faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]
    )
    opposite = np.concatenate([faces[:, 2], faces[:, 0], faces[:, 1]])
    low = corner_edges.min(axis=1)
    high = corner_edges.max(axis=1)
    _, inverse = np.unique(low * (int(faces.max()) + 1) + high, return_inverse=True)
    for array in (corner_edges, opposite, inverse):
        array.setflags(write=False)
    return corner_edges, opposite, inverse.reshape(-1)


def _edge_topology(faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per corner edge (3F rows, face-major within each corner slot): the vertex pair,
    the opposite vertex and the index of the undirected edge. Cached on the face
    table, which stays fixed between remeshes.
    """
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    return _cached_edge_topology(faces.tobytes(), len(faces))


def _silhouette_edges(
    pixel_xy: np.ndarray, faces: np.ndarray, covered: np.ndarray, camera: Camera
) -> np.ndarray:
    """
    Edges separating a front-facing face from a back-facing face (or the boundary),
    kept only where the hard mask is empty one pixel outside the edge.

    Returns (K, 2) vertex index pairs.
    """
    front = _front_facing(pixel_xy, faces)
    corner_edges, opposite, inverse = _edge_topology(faces)
    corner_front = np.tile(front, 3)
    front_count = np.bincount(inverse, weights=corner_front)
    candidate = corner_front & (front_count[inverse] == 1)
    if not candidate.any():
        return np.zeros((0, 2), dtype=np.int64)

    edges = corner_edges[candidate]
    a, b = pixel_xy[edges[:, 0]], pixel_xy[edges[:, 1]]
    c = pixel_xy[opposite[candidate]]
    direction = b - a
    length = np.linalg.norm(direction, axis=1, keepdims=True)
    normal = np.stack([direction[:, 1], -direction[:, 0]], axis=1) / np.maximum(
        length, DISTANCE_EPS
    )
    midpoint = 0.5 * (a + b)
    inward = np.einsum("ij,ij->i", c - midpoint, normal) > 0
    normal[inward] *= -1.0
    beyond = np.floor(midpoint + normal).astype(np.int64)
    in_image = (
        (beyond[:, 0] >= 0)
        & (beyond[:, 0] < camera.width)
        & (beyond[:, 1] >= 0)
        & (beyond[:, 1] < camera.height)
    )
    outside_covered = np.zeros(len(edges), dtype=bool)
    flat = beyond[in_image, 1] * camera.width + beyond[in_image, 0]
    outside_covered[in_image] = covered[flat]
    return edges[~outside_covered]


def _nearest_edges(
    pixel_xy: np.ndarray, edges: np.ndarray, softness: float, camera: Camera
) -> Tuple[np.ndarray, np.ndarray]:
    """Per pixel within the search radius, the index of the closest silhouette edge."""
    empty = np.zeros(0, dtype=np.int64)
    if len(edges) == 0:
        return empty, empty
    radius = SEARCH_RADIUS_SIGMAS * softness
    ends = pixel_xy[edges]
    owner, pixels = _pixel_pairs(
        ends.min(axis=1) - radius, ends.max(axis=1) + radius, camera
    )
    if len(owner) == 0:
        return empty, empty
    q = _pixel_centers(pixels, camera)
    distance = _segment_distance(ends[owner, 0], ends[owner, 1], q, np)
    keep = distance <= radius
    owner, pixels, distance = owner[keep], pixels[keep], distance[keep]
    order = np.lexsort((owner, distance, pixels))
    owner, pixels = owner[order], pixels[order]
    first = np.unique(pixels, return_index=True)[1]
    return pixels[first], owner[first]


def _segment_distance(a, b, q, xp):
    d = b - a
    length_sq = (d * d).sum(-1)
    if xp is torch:
        length_sq = torch.clamp(length_sq, min=DISTANCE_EPS)
    else:
        length_sq = np.maximum(length_sq, DISTANCE_EPS)
    t = ((q - a) * d).sum(-1) / length_sq
    t = torch.clamp(t, 0.0, 1.0) if xp is torch else np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * d
    return xp.sqrt(((q - closest) ** 2).sum(-1) + DISTANCE_EPS)


def _vertex_normals(vertices: torch.Tensor, faces: torch.Tensor) -> torch.Tensor:
    v0, v1, v2 = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    weighted = torch.linalg.cross(v1 - v0, v2 - v0, dim=1)
    accum = torch.zeros_like(vertices)
    for corner in range(3):
        accum = accum.index_add(0, faces[:, corner], weighted)
    norms = accum.norm(dim=1, keepdim=True)
    return accum / torch.clamp(norms, min=DISTANCE_EPS)


def render_tensor(
    vertices: torch.Tensor,
    faces: np.ndarray,
    camera: Camera,
    softness: float = 0.0,
    alpha_only: bool = False,
) -> torch.Tensor:
    """
    Differentiable render of (V, 3) vertex positions into an (H, W, 4) tensor.

    Channels 0-2 hold the encoded camera-space normal (background 0.5 where
    uncovered), channel 3 the alpha coverage.
    """
    camera.validate()
    if softness < 0:
        raise RasterError(
            f"softness must be >= 0, got {softness}", {"softness": softness}
        )
    height, width = camera.height, camera.width
    n_pixels = height * width
    dtype = vertices.dtype if vertices.is_floating_point() else torch.float64
    rgb = torch.full((n_pixels, 3), BACKGROUND_RGB[0], dtype=dtype)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0 or vertices.shape[0] == 0:
        alpha = torch.zeros(n_pixels, dtype=dtype)
        return torch.cat([rgb, alpha[:, None]], dim=1).reshape(height, width, 4)

    cam, pixel_xy = _project(vertices, camera)
    pixel_np = pixel_xy.detach().cpu().numpy()
    depth_np = cam[:, 2].detach().cpu().numpy()
    visibility = _resolve_visibility(pixel_np, depth_np, faces, camera)
    alpha = torch.as_tensor(visibility.covered, dtype=dtype)

    if len(visibility.pixels) and not alpha_only:
        face_t = torch.as_tensor(faces)
        hit = face_t[torch.as_tensor(visibility.faces)]
        q = torch.as_tensor(_pixel_centers(visibility.pixels, camera), dtype=dtype)
        p0, p1, p2 = pixel_xy[hit[:, 0]], pixel_xy[hit[:, 1]], pixel_xy[hit[:, 2]]
        area = _edge_function(p0, p1, p2)
        b0 = _edge_function(p1, p2, q) / area
        b1 = _edge_function(p2, p0, q) / area
        b2 = 1.0 - b0 - b1
        normals = _vertex_normals(vertices, face_t)
        world = (
            b0[:, None] * normals[hit[:, 0]]
            + b1[:, None] * normals[hit[:, 1]]
            + b2[:, None] * normals[hit[:, 2]]
        )
        rotation = torch.as_tensor(camera.rotation(), dtype=dtype)
        view = world @ rotation.T
        view = view / torch.clamp(view.norm(dim=1, keepdim=True), min=DISTANCE_EPS)
        rgb = rgb.index_put((torch.as_tensor(visibility.pixels),), (view + 1.0) * 0.5)

    if softness > 0:
        edges = _silhouette_edges(pixel_np, faces, visibility.covered, camera)
        pixels, owners = _nearest_edges(pixel_np, edges, softness, camera)
        if len(pixels):
            edge_t = torch.as_tensor(edges[owners])
            q = torch.as_tensor(_pixel_centers(pixels, camera), dtype=dtype)
            distance = _segment_distance(
                pixel_xy[edge_t[:, 0]], pixel_xy[edge_t[:, 1]], q, torch
            )
            sign = torch.as_tensor(
                np.where(visibility.covered[pixels], 1.0, -1.0), dtype=dtype
            )
            soft = torch.sigmoid(sign * distance / softness)
            alpha = alpha.index_put((torch.as_tensor(pixels),), soft)

    return torch.cat([rgb, alpha[:, None]], dim=1).reshape(height, width, 4)


def rasterize(mesh: Mesh, camera: Camera, softness: float = 0.0) -> NormalMap:
    """
    Render a NormalMap of the mesh as seen by the camera.

    Raises:
        RasterError: For a degenerate camera or negative softness
    """
    with torch.no_grad():
        vertices = torch.as_tensor(mesh.vertices)
        pixels = render_tensor(vertices, mesh.faces, camera, softness)
    return NormalMap(pixels.numpy())


def rasterize_views(
    mesh: Mesh, cameras: List[Camera], softness: float = 0.0
) -> List[NormalMap]:
    return [rasterize(mesh, camera, softness) for camera in cameras]


def rasterize_backward(
    mesh: Mesh,
    camera: Camera,
    softness: float,
    upstream: np.ndarray,
) -> RasterGradients:
    """
    Chain upstream d loss / d buffer (H, W, 4) back to the vertex positions.

    Raises:
        RasterError: If the upstream buffer shape does not match the render
    """
    expected = (camera.height, camera.width, 4)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != expected:
        raise RasterError(
            f"Upstream gradient shape {upstream.shape} != render shape {expected}",
            {"expected": list(expected), "found": list(upstream.shape)},
        )
    vertices = torch.tensor(mesh.vertices, dtype=torch.float64, requires_grad=True)
    rendered = render_tensor(vertices, mesh.faces, camera, softness)
    if not rendered.requires_grad:
        return RasterGradients(np.zeros_like(mesh.vertices))
    (gradient,) = torch.autograd.grad(
        rendered, vertices, grad_outputs=torch.as_tensor(upstream), allow_unused=True
    )
    if gradient is None:
        return RasterGradients(np.zeros_like(mesh.vertices))
    return RasterGradients(gradient.numpy())


def mirror_iou(front: NormalMap, back: NormalMap, threshold: float = 0.5) -> float:
    """IoU of the front mask against the horizontally flipped back mask."""
    return mask_iou(front.mask(threshold), back.flipped_horizontally().mask(threshold))


def mask_iou(first: np.ndarray, second: np.ndarray) -> float:
    """Intersection over union of two boolean masks; 1.0 when both are empty."""
    if first.shape != second.shape:
        raise RasterError(
            f"Mask shapes differ: {first.shape} vs {second.shape}",
            {"first": list(first.shape), "second": list(second.shape)},
        )
    union = np.logical_or(first, second).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(first, second).sum() / union)
