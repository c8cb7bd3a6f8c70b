"""
Normal-map-driven mesh carving.

The objective compares differentiable renders of the candidate mesh against target
normal maps (normal and mask terms), keeps the side silhouettes from shrinking inside
the proxy's side masks, and regularizes with the Laplacian and normal-consistency
terms. The loop is coarse to fine: Adam steps on the vertex positions, with a remesh
every `remesh_interval` iterations that shrinks the step size and the sides weight and
ramps the regularizers up.
"""

import logging
from collections import deque
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from app.core.artifacts import write_obj
from app.core.exceptions import (
    DivergenceError,
    MeshTopologyError,
    ParameterError,
    RasterError,
)
from app.models.camera import Camera
from app.models.carve import CarveResult, CarveTargets, SideView, TargetView
from app.models.loss import LossResult
from app.models.mesh import Adjacency, Mesh
from app.models.normal_map import NormalMap
from app.schemas.carve import CarveConfig, LossWeights
from app.services.mesh_service import (
    consistency_pairs,
    laplacian_term,
    normal_consistency_term,
    require_manifold,
    require_neighbors,
    validate,
)
from app.services.raster_service import rasterize, render_tensor
from app.services.remesh_service import remesh

logger = logging.getLogger(__name__)

DEFAULT_SOFTNESS = 1.5
DEFAULT_THRESHOLD = 0.5
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
GRADIENT_WINDOW = 50
SIDE_YAWS = (90.0, -90.0)


def _check_resolution(first: np.ndarray, second: np.ndarray, name: str) -> None:
    if first.shape[:2] != second.shape[:2]:
        raise RasterError(
            f"{name}: buffer resolution {first.shape[:2]} != {second.shape[:2]}",
            {"first": list(first.shape[:2]), "second": list(second.shape[:2])},
        )


def _require_binary(mask: np.ndarray) -> None:
    if not np.isin(mask, (0, 1)).all():
        raise ParameterError("Proxy side mask must be binary", "proxy_side_mask")


# Differentiable terms over rendered buffers


def normal_term(
    rendered: torch.Tensor, target: np.ndarray, threshold: float = DEFAULT_THRESHOLD
) -> torch.Tensor:
    """
    Mean per-pixel L1 distance between decoded normals over the pixels where both
    alphas exceed the threshold; zero when that intersection is empty.
    """
    target = np.asarray(target, dtype=np.float64)
    covered = rendered[..., 3].detach().numpy() > threshold
    overlap = covered & (target[..., 3] > threshold)
    if not overlap.any():
        return rendered.sum() * 0.0
    index = torch.as_tensor(overlap)
    decoded = rendered[..., :3][index] * 2.0 - 1.0
    decoded = decoded / torch.clamp(decoded.norm(dim=1, keepdim=True), min=1e-12)
    expected = torch.as_tensor(
        NormalMap(target).normals()[overlap], dtype=rendered.dtype
    )
    return (decoded - expected).abs().sum(dim=1).mean()


def mask_term(rendered_alpha: torch.Tensor, target_alpha: np.ndarray) -> torch.Tensor:
    """Mean squared alpha difference over all pixels."""
    target = torch.as_tensor(np.asarray(target_alpha), dtype=rendered_alpha.dtype)
    return ((rendered_alpha - target) ** 2).mean()


def side_term(rendered_alpha: torch.Tensor, proxy_mask: np.ndarray) -> torch.Tensor:
    """Sum of (1 - alpha)^2 over the proxy mask; pixels outside it cost nothing."""
    mask = torch.as_tensor(np.asarray(proxy_mask), dtype=rendered_alpha.dtype)
    return (mask * (1.0 - rendered_alpha) ** 2).sum()


def _buffer_loss(term, buffer: np.ndarray) -> LossResult:
    tensor = torch.tensor(np.asarray(buffer, dtype=np.float64), requires_grad=True)
    value = term(tensor)
    if not value.requires_grad:
        return LossResult(float(value), np.zeros_like(tensor.detach().numpy()))
    (gradient,) = torch.autograd.grad(value, tensor)
    return LossResult(float(value.detach()), gradient.numpy())


def normal_loss(
    rendered: NormalMap, target: NormalMap, threshold: float = DEFAULT_THRESHOLD
) -> LossResult:
    """
    Normal loss with its gradient with respect to the rendered (H, W, 4) buffer.

    Raises:
        RasterError: If the two maps differ in resolution
    """
    _check_resolution(rendered.pixels, target.pixels, "normal_loss")
    return _buffer_loss(
        lambda r: normal_term(r, target.pixels, threshold), rendered.pixels
    )


def mask_loss(rendered_alpha: np.ndarray, target_alpha: np.ndarray) -> LossResult:
    _check_resolution(np.asarray(rendered_alpha), np.asarray(target_alpha), "mask_loss")
    return _buffer_loss(lambda a: mask_term(a, target_alpha), rendered_alpha)


def side_loss(
    rendered_side_alpha: np.ndarray, proxy_side_mask: np.ndarray
) -> LossResult:
    """
    One-sided anti-shrink penalty against a binary proxy side mask.

    Raises:
        RasterError: If the buffers differ in resolution
        ParameterError: If the proxy mask is not binary
    """
    proxy_side_mask = np.asarray(proxy_side_mask)
    _check_resolution(np.asarray(rendered_side_alpha), proxy_side_mask, "side_loss")
    _require_binary(proxy_side_mask)
    return _buffer_loss(lambda a: side_term(a, proxy_side_mask), rendered_side_alpha)


# Full objective


def objective(
    vertices: torch.Tensor,
    mesh: Mesh,
    targets: CarveTargets,
    weights: LossWeights,
    adj: Adjacency,
    softness: float = DEFAULT_SOFTNESS,
    threshold: float = DEFAULT_THRESHOLD,
    view_indices: Optional[Sequence[int]] = None,
) -> torch.Tensor:
    """
    Weighted sum of the five carving terms as a differentiable function of vertices.

    Normal and mask terms are averaged over the selected target views (all views by
    default); side terms are summed over the side views. Zero-weight terms are not
    evaluated.
    """
    total = torch.zeros((), dtype=vertices.dtype)
    indices = range(len(targets.views)) if view_indices is None else view_indices
    views = [targets.views[i] for i in indices]

    if views and (weights.normal > 0 or weights.mask > 0):
        normal_sum = torch.zeros((), dtype=vertices.dtype)
        mask_sum = torch.zeros((), dtype=vertices.dtype)
        for view in views:
            rendered = render_tensor(vertices, mesh.faces, view.camera, softness)
            target = view.normal_map.pixels
            if weights.normal > 0:
                normal_sum = normal_sum + normal_term(rendered, target, threshold)
            if weights.mask > 0:
                mask_sum = mask_sum + mask_term(rendered[..., 3], target[..., 3])
        weighted = weights.normal * normal_sum + weights.mask * mask_sum
        total = total + weighted / len(views)

    if weights.sides > 0:
        for side in targets.side_views:
            alpha = render_tensor(
                vertices, mesh.faces, side.camera, softness, alpha_only=True
            )[..., 3]
            total = total + weights.sides * side_term(alpha, side.mask)

    if weights.laplacian > 0:
        total = total + weights.laplacian * laplacian_term(vertices, adj)

    if weights.normal_reg > 0:
        current = Mesh(vertices.detach().numpy(), mesh.faces)
        pairs = consistency_pairs(current, adj)
        total = total + weights.normal_reg * normal_consistency_term(
            vertices, mesh.faces, pairs
        )
    return total


def total_loss(
    mesh: Mesh,
    targets: CarveTargets,
    weights: LossWeights,
    softness: float = DEFAULT_SOFTNESS,
    threshold: float = DEFAULT_THRESHOLD,
) -> LossResult:
    """
    Value and vertex gradient of the weighted carving objective.

    Raises:
        MeshTopologyError: From the regularizers (isolated vertex, no interior edges)
    """
    adj = Adjacency.from_mesh(mesh)
    if weights.laplacian > 0:
        require_neighbors(adj)
    vertices = torch.tensor(mesh.vertices, dtype=torch.float64, requires_grad=True)
    value = objective(vertices, mesh, targets, weights, adj, softness, threshold)
    if not value.requires_grad:
        return LossResult(float(value), np.zeros_like(mesh.vertices))
    (gradient,) = torch.autograd.grad(value, vertices, allow_unused=True)
    if gradient is None:
        return LossResult(float(value.detach()), np.zeros_like(mesh.vertices))
    return LossResult(float(value.detach()), gradient.numpy())


# Schedule


def schedule(
    config: CarveConfig, iteration: int, bbox_diagonal: Optional[float] = None
) -> Tuple[LossWeights, float]:
    """
    Loss weights and step size in force at `iteration`.

    With k remeshes done so far, the step size is initial * (1 - step_decay)^k and the
    sides weight initial * (1 - sides_decay)^k. The laplacian and normal_reg weights
    move linearly from their stage-0 values to their final values, reaching the final
    value in the last stage.
    """
    if not 0 <= iteration < config.total_iterations:
        raise ParameterError(
            f"iteration must lie in [0, {config.total_iterations})",
            "iteration",
            str(iteration),
        )
    initial = config.initial_step_size
    if initial is None:
        if not bbox_diagonal:
            raise ParameterError(
                "initial_step_size unset and no bounding-box diagonal given",
                "initial_step_size",
            )
        initial = 1e-3 * bbox_diagonal

    stage = iteration // config.remesh_interval
    ramp = stage / (config.stage_count - 1) if config.stage_count > 1 else 0.0
    base = config.weights
    weights = base.model_copy(
        update={
            "sides": base.sides * (1.0 - config.sides_decay_per_remesh) ** stage,
            "laplacian": base.laplacian
            + (config.laplacian_final - base.laplacian) * ramp,
            "normal_reg": base.normal_reg
            + (config.normal_reg_final - base.normal_reg) * ramp,
        }
    )
    return weights, initial * (1.0 - config.step_decay_per_remesh) ** stage


# Targets


def dual_targets(
    front: NormalMap,
    back: NormalMap,
    base: Camera,
    proxy: Optional[Mesh] = None,
    threshold: float = DEFAULT_THRESHOLD,
) -> CarveTargets:
    """
    First-stage targets: the front map at the base yaw, the back map 180 degrees
    around, and (when a proxy is given) its hard left/right silhouettes.
    """
    views = [
        TargetView(base, front),
        TargetView(base.with_yaw(base.yaw + 180.0), back),
    ]
    side_views: List[SideView] = []
    if proxy is not None:
        for offset in SIDE_YAWS:
            camera = base.with_yaw(base.yaw + offset)
            mask = rasterize(proxy, camera).mask(threshold).astype(np.float64)
            side_views.append(SideView(camera, mask))
    return CarveTargets(views, side_views)


def ring_targets(cameras: Sequence[Camera], maps: Sequence[NormalMap]) -> CarveTargets:
    """Second-stage targets: one refined map per ring camera."""
    if len(cameras) != len(maps):
        raise ParameterError(
            f"{len(cameras)} cameras for {len(maps)} maps", "views", str(len(maps))
        )
    return CarveTargets([TargetView(c, m) for c, m in zip(cameras, maps)])


# Optimization loop


class CarveService:
    """Coarse-to-fine optimization of a mesh against CarveTargets."""

    def __init__(
        self,
        targets: CarveTargets,
        config: CarveConfig,
        second_stage: bool = False,
        dump_dir: Optional[Path] = None,
    ):
        if second_stage:
            if config.weights.sides != 0:
                raise ParameterError(
                    "Second-stage carving requires weights.sides = 0",
                    "weights.sides",
                    str(config.weights.sides),
                )
            if len(targets.views) < 2:
                raise ParameterError(
                    "Second-stage carving needs a multi-view ring of targets",
                    "views",
                    str(len(targets.views)),
                )
        self.targets = targets
        self.config = config
        self.second_stage = second_stage
        self.dump_dir = dump_dir
        self.rng = np.random.default_rng(config.seed)
        self.gradient_norms: deque = deque(maxlen=GRADIENT_WINDOW)

    def remesh_target(self, mesh: Mesh) -> float:
        """
        A fraction of the current mean edge, never below `min_edge_pixels` pixels and
        never so short that the vertex count (which scales with the inverse square of
        the edge length) would pass `max_vertices`. Remeshing never coarsens.
        """
        mean = mesh.mean_edge_length()
        pixel = self.targets.views[0].camera.pixel_size_world()
        pixel_floor = self.config.min_edge_pixels * pixel
        budget_floor = mean * np.sqrt(mesh.n_vertices / self.config.max_vertices)
        target = max(mean * self.config.remesh_edge_factor, pixel_floor, budget_floor)
        return min(mean, target)

    def _clip(self, gradient: torch.Tensor) -> None:
        norm = float(gradient.norm())
        if self.gradient_norms:
            median = float(np.median(self.gradient_norms))
            limit = self.config.gradient_clip_factor * median
            if limit > 0 and norm > limit:
                gradient.mul_(limit / norm)
        self.gradient_norms.append(norm)

    def _optimizer(self, vertices: torch.Tensor, step: float) -> torch.optim.Adam:
        return torch.optim.Adam([vertices], lr=step, betas=ADAM_BETAS, eps=ADAM_EPS)

    def _dump(self, mesh: Mesh, stage: int) -> None:
        if self.config.dump_intermediate and self.dump_dir is not None:
            tag = "refine" if self.second_stage else "carve"
            write_obj(mesh, Path(self.dump_dir) / f"{tag}_stage{stage}.obj")

    def _checked(self, mesh: Mesh) -> Mesh:
        """
        Validate the carved mesh. An oriented manifold whose only defect is
        degenerate faces gets one cleanup remesh at its mean edge length.

        Raises:
            MeshTopologyError: If the mesh is still invalid
        """
        report = validate(mesh)
        if not report.is_valid and report.is_manifold and report.is_oriented:
            logger.warning(
                f"{report.degenerate_face_count} degenerate faces after carving, "
                "remeshing"
            )
            mesh = remesh(mesh, mesh.mean_edge_length())
            report = validate(mesh)
        if not report.is_valid:
            logger.error(f"Carved mesh failed validation:\n{report.to_text()}")
            raise MeshTopologyError("Carved mesh failed validation", "carve")
        return mesh

    def run(self, initial: Mesh) -> CarveResult:
        """
        Raises:
            MeshTopologyError: If the initial mesh is not an oriented manifold, or
                the carved mesh fails validation
            DivergenceError: If the loss becomes non-finite
        """
        require_manifold(initial, "carve")
        config = self.config
        diagonal = initial.bbox_diagonal()
        _, step = schedule(config, 0, diagonal)

        mesh = initial
        adj = Adjacency.from_mesh(mesh)
        vertices = torch.tensor(mesh.vertices, dtype=torch.float64, requires_grad=True)
        optimizer = self._optimizer(vertices, step)
        history: List[float] = []
        remesh_count = 0
        logger.info(
            f"Carving {mesh.n_vertices} vertices against "
            f"{len(self.targets.views)} views for {config.total_iterations} iterations"
            f"{' (second stage)' if self.second_stage else ''}"
        )

        progress = tqdm(range(config.total_iterations), desc="carve", leave=False)
        for iteration in progress:
            if iteration > 0 and iteration % config.remesh_interval == 0:
                current = Mesh(vertices.detach().numpy(), mesh.faces)
                self._dump(current, remesh_count)
                mesh = remesh(current, self.remesh_target(current))
                remesh_count += 1
                adj = Adjacency.from_mesh(mesh)
                vertices = torch.tensor(
                    mesh.vertices, dtype=torch.float64, requires_grad=True
                )
                optimizer = self._optimizer(vertices, step)
                self.gradient_norms.clear()

            weights, step = schedule(config, iteration, diagonal)
            for group in optimizer.param_groups:
                group["lr"] = step
            view = int(self.rng.integers(len(self.targets.views)))

            optimizer.zero_grad()
            value = objective(
                vertices,
                mesh,
                self.targets,
                weights,
                adj,
                config.softness,
                config.alpha_threshold,
                view_indices=[view],
            )
            if not torch.isfinite(value):
                logger.error(f"Carve loss {float(value)} at iteration {iteration}")
                raise DivergenceError("carve", "iteration", iteration)
            if value.requires_grad:
                value.backward()
                if vertices.grad is not None:
                    if not torch.isfinite(vertices.grad).all():
                        logger.error(f"Non-finite gradient at iteration {iteration}")
                        raise DivergenceError("carve", "iteration", iteration)
                    self._clip(vertices.grad)
                    optimizer.step()
            history.append(float(value.detach()))
            logger.debug(
                f"carve iteration {iteration}: view {view}, loss {history[-1]:.6g}"
            )

        result = self._checked(Mesh(vertices.detach().numpy(), mesh.faces))
        self._dump(result, remesh_count)
        logger.info(
            f"Carve finished: {result.n_vertices} vertices, {remesh_count} remeshes, "
            f"final loss {history[-1]:.6g}"
        )
        return CarveResult(result, history, remesh_count, step)


def carve(
    initial: Mesh,
    targets: CarveTargets,
    config: CarveConfig,
    second_stage: bool = False,
    dump_dir: Optional[Path] = None,
) -> Mesh:
    """Deform `initial` towards the targets; see CarveService.run."""
    return CarveService(targets, config, second_stage, dump_dir).run(initial).mesh
