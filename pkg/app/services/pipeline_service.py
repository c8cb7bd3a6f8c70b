"""
Orchestration of the full pipeline: synthetic data, denoiser training, dual map
generation, carving, multi-view refinement, guided completion, rendering and
evaluation. Every written artifact is recorded in the run manifest.
"""

import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from app.core.artifacts import (
    ManifestRecorder,
    read_nmap,
    read_obj,
    write_normal_map,
    write_obj,
    write_report,
)
from app.core.config import Settings
from app.core.exceptions import (
    DomainException,
    ParameterError,
    PipelineStageError,
    RasterError,
)
from app.core.service_utils import ensure_exists
from app.models.camera import Camera, camera_ring, crop_camera, opposite_view
from app.models.diffusion import Condition, Denoiser
from app.models.mesh import Mesh
from app.models.normal_map import NormalMap, pack_dual, unpack_dual
from app.models.training import TrainExample
from app.schemas.denoiser import DenoiserArchitecture
from app.schemas.diffusion import ResampleParams
from app.schemas.pipeline import EvalReport, ViewRingParams
from app.services.carve_service import CarveService, dual_targets, ring_targets
from app.services.dataset_service import read_dataset, synth_dataset, write_dataset
from app.services.decimation_service import decimate
from app.services.denoiser_service import (
    TorchDenoiser,
    load_checkpoint,
    retrieval_audit,
    save_checkpoint,
    train,
)
from app.services.diffusion_service import (
    FRONT_CHANNELS,
    guided_dual_complete,
    resample,
    sample,
    sample_separate,
    schedule_from_params,
)
from app.services.eval_service import (
    eval_cameras,
    evaluate_against_renders,
    evaluate_meshes,
    write_eval_report,
)
from app.services.mesh_service import validate
from app.services.proxy_service import make_body_proxy
from app.services.raster_service import rasterize

logger = logging.getLogger(__name__)

T = TypeVar("T")


class PipelineService:
    """One run of the pipeline, rooted at settings.out_dir."""

    def __init__(self, settings: Settings):
        self.settings = settings
        self.schedule = schedule_from_params(settings.schedule)
        self.recorder = ManifestRecorder(settings.seed, settings.out_dir)
        self._proxy: Optional[Mesh] = None

    # helpers

    @property
    def out_dir(self) -> Path:
        return self.settings.out_dir

    @property
    def camera(self) -> Camera:
        return self.settings.base_camera()

    def rng(self, stream: int = 0) -> np.random.Generator:
        """Seeded generator; separate stages draw from separate streams."""
        return np.random.default_rng([self.settings.seed, stream])

    def proxy(self) -> Mesh:
        if self._proxy is None:
            proxy = self.settings.proxy
            self._proxy = make_body_proxy(proxy.kind, proxy)
        return self._proxy

    def condition(self, camera: Camera) -> Condition:
        """Proxy normal map seen from `camera`, in sample space."""
        return Condition.of(rasterize(self.proxy(), camera).to_sample())

    @property
    def architecture(self) -> DenoiserArchitecture:
        """Configured network shape, built for the configured chain length."""
        return self.settings.architecture.model_copy(
            update={"timesteps": self.schedule.timesteps}
        )

    def denoiser(self) -> TorchDenoiser:
        path = self.settings.resolve(self.settings.paths.checkpoint)
        path = ensure_exists(path, "Checkpoint")
        return TorchDenoiser(load_checkpoint(path, self.architecture))

    def check_resolution(self, normal_map: NormalMap, name: str) -> None:
        expected = (self.settings.resolution, self.settings.resolution)
        if normal_map.resolution != expected:
            raise RasterError(
                f"{name} resolution {normal_map.resolution} != configured {expected}",
                {"expected": list(expected), "found": list(normal_map.resolution)},
            )

    def write_map(
        self, stage: str, normal_map: NormalMap, stem: Path
    ) -> Tuple[Path, Path]:
        paths = write_normal_map(normal_map, stem)
        self.recorder.record(stage, *paths)
        return paths

    def write_mesh(self, stage: str, mesh: Mesh, path: Path) -> Path:
        write_obj(mesh, path)
        report_path = path.with_name("validity.txt")
        report_path.write_text(validate(mesh).to_text() + "\n", encoding="utf-8")
        self.recorder.record(stage, path, report_path)
        return path

    def write_eval(self, stage: str, report: EvalReport, path: Path) -> Path:
        write_eval_report(report, path, stage)
        self.recorder.record(stage, path)
        return path

    def finish(self) -> Path:
        path = self.recorder.write(self.out_dir / "manifest.json")
        count = len(self.recorder.manifest.entries)
        logger.info(f"Wrote manifest with {count} entries")
        return path

    # commands

    def synth_data(self) -> List[TrainExample]:
        s = self.settings
        examples = synth_dataset(
            s.dataset.n_examples, s.resolution, s.dataset, self.rng(1), self.camera
        )
        written = write_dataset(examples, s.resolve(s.paths.dataset_dir), s.seed)
        self.recorder.record("synth-data", *written)
        return examples

    def train(self, examples: Optional[Sequence[TrainExample]] = None) -> List[float]:
        s = self.settings
        if examples is None:
            examples = read_dataset(s.resolve(s.paths.dataset_dir))
        result = train(examples, self.architecture, s.training, self.schedule, s.seed)
        path = save_checkpoint(result.model, s.resolve(s.paths.checkpoint))
        self.recorder.record("train", path)
        audit = retrieval_audit(
            TorchDenoiser(result.model), examples, self.schedule, s.guidance, s.seed
        )
        logger.info(
            f"Loss {result.loss_curve[0]:.4g} -> {result.loss_curve[-1]:.4g}, "
            f"retrieval {audit:.0%}"
        )
        return result.loss_curve

    def generate(
        self, separate: bool = False, strength: Optional[float] = None
    ) -> Tuple[NormalMap, NormalMap]:
        s = self.settings
        guidance = s.guidance
        if strength is not None:
            guidance = guidance.model_copy(update={"strength": strength})
        shape = (2 * FRONT_CHANNELS, s.resolution, s.resolution)
        draw = sample_separate if separate else sample
        denoiser = self.denoiser()
        cond = self.condition(self.camera)
        x0 = draw(denoiser, cond, self.schedule, guidance, shape, self.rng(2))
        front, back = unpack_dual(x0)
        out = self.out_dir / "generated"
        self.write_map("generate", front, out / "front")
        self.write_map("generate", back, out / "back")
        return front, back

    def carve(
        self,
        front: NormalMap,
        back: NormalMap,
        side_loss: bool = True,
    ) -> Mesh:
        s = self.settings
        self.check_resolution(front, "Front map")
        self.check_resolution(back, "Back map")
        config = s.carve
        if not side_loss:
            weights = config.weights.model_copy(update={"sides": 0.0})
            config = config.model_copy(update={"weights": weights})
        proxy = self.proxy()
        initial = decimate(proxy, config.initial_vertices)
        targets = dual_targets(front, back, self.camera, proxy, config.alpha_threshold)
        out = self.out_dir / "carve"
        result = CarveService(targets, config, dump_dir=out).run(initial)
        self.write_mesh("carve", result.mesh, out / "mesh.obj")
        return result.mesh

    def _refine_cameras(self, ring: ViewRingParams) -> List[Camera]:
        if ring.n_views % 2:
            raise ParameterError(
                "Refinement needs an even number of views", "n_views", str(ring.n_views)
            )
        return camera_ring(ring.n_views, ring.yaw_step, self.camera)

    def _crop_cameras(self) -> List[Camera]:
        crop = self.settings.crop
        if crop is None:
            return []
        front = crop_camera(self.camera, crop.center, crop.extent)
        back = crop_camera(
            self.camera.with_yaw(self.camera.yaw + 180.0), crop.center, crop.extent
        )
        return [front, back]

    def refine_views(
        self,
        mesh: Mesh,
        cameras: Sequence[Camera],
        denoiser: Denoiser,
        resample_params: Optional[ResampleParams] = None,
    ) -> List[NormalMap]:
        """
        Resample each opposite pair (i, i + n/2) as one dual sample conditioned on
        the proxy seen from view i; returns the refined map of every view.
        """
        s = self.settings
        params = resample_params or s.resample
        n = len(cameras)
        renders = [rasterize(mesh, camera) for camera in cameras]
        refined: Dict[int, NormalMap] = {}
        rng = self.rng(3)
        for i in range(n // 2):
            j = opposite_view(i, n)
            dual = pack_dual(renders[i], renders[j])
            result = resample(
                dual,
                denoiser,
                self.condition(cameras[i]),
                params,
                self.schedule,
                s.guidance,
                rng,
            )
            refined[i], refined[j] = unpack_dual(result)
        logger.info(f"Resampled {n // 2} opposite view pairs")
        return [refined[i] for i in range(n)]

    def refine(
        self,
        mesh: Mesh,
        ring: Optional[ViewRingParams] = None,
        resample_params: Optional[ResampleParams] = None,
        stage: str = "refine",
    ) -> Mesh:
        s = self.settings
        cameras = self._refine_cameras(ring or s.ring)
        denoiser = self.denoiser()
        maps = self.refine_views(mesh, cameras, denoiser, resample_params)
        crops = self._crop_cameras()
        if crops:
            cameras = cameras + crops
            maps = maps + self.refine_views(mesh, crops, denoiser, resample_params)
        out = self.out_dir / stage
        for index, normal_map in enumerate(maps):
            self.write_map(stage, normal_map, out / "views" / f"view_{index:02d}")
        targets = ring_targets(cameras, maps)
        result = CarveService(
            targets, s.second_stage_carve(), second_stage=True, dump_dir=out
        ).run(mesh)
        self.write_mesh(stage, result.mesh, out / "mesh.obj")
        return result.mesh

    def guided(
        self, front: NormalMap, harmonization_steps: Optional[int] = None
    ) -> Tuple[NormalMap, NormalMap]:
        s = self.settings
        guidance = s.guidance
        if harmonization_steps is not None:
            guidance = guidance.model_copy(
                update={"harmonization_steps": harmonization_steps}
            )
        self.check_resolution(front, "Front map")
        denoiser = self.denoiser()
        _, back_sample = guided_dual_complete(
            front.to_sample(),
            denoiser,
            self.condition(self.camera),
            self.schedule,
            guidance,
            self.rng(4),
            harmonization_steps=guidance.harmonization_steps,
        )
        back = NormalMap.from_sample(back_sample)
        out = self.out_dir / "guided"
        self.write_map("guided", front, out / "front")
        self.write_map("guided", back, out / "back")
        return front, back

    def render(
        self, mesh: Mesh, ring: Optional[ViewRingParams] = None
    ) -> List[NormalMap]:
        ring = ring or self.settings.ring
        cameras = camera_ring(ring.n_views, ring.yaw_step, self.camera)
        maps = [rasterize(mesh, camera) for camera in cameras]
        for index, normal_map in enumerate(maps):
            stem = self.out_dir / "renders" / f"view_{index:02d}"
            self.write_map("render", normal_map, stem)
        return maps

    def evaluate(
        self, mesh: Mesh, reference: Path | str, name: str = "eval"
    ) -> EvalReport:
        """
        Compare a mesh against a reference OBJ, or against a directory of NMAP renders
        taken over the evaluation ring.
        """
        s = self.settings
        cameras = eval_cameras(self.camera, s.eval_ring)
        reference = ensure_exists(reference, "Reference")
        if reference.is_dir():
            maps = [read_nmap(p) for p in sorted(reference.glob("*.nmap"))]
            if len(maps) != len(cameras):
                raise ParameterError(
                    f"{len(maps)} reference renders for {len(cameras)} views",
                    "reference",
                    str(reference),
                )
            report = evaluate_against_renders(mesh, maps, cameras, s.alpha_threshold)
        else:
            reference_mesh = read_obj(reference)
            report = evaluate_meshes(mesh, reference_mesh, cameras, s.alpha_threshold)
        self.write_eval(name, report, self.out_dir / name / "report.txt")
        return report

    def _sweep_grid(self) -> List[Tuple[str, ViewRingParams, ResampleParams]]:
        s = self.settings
        grid = []
        for t0, repeats in s.sweep.resample_grid:
            params = s.resample.model_copy(update={"t0": t0, "repeats": repeats})
            grid.append((f"t0={t0},K={repeats}", s.ring, params))
        for n_views, yaw_step in s.sweep.ring_grid:
            ring = ViewRingParams(n_views=n_views, yaw_step=yaw_step)
            grid.append((f"views={n_views},step={yaw_step}", ring, s.resample))
        return grid

    def sweep(self, mesh: Mesh) -> Path:
        """Refinement ablations over the (t0, K) and view-ring grids."""
        s = self.settings
        cameras = eval_cameras(self.camera, s.eval_ring)
        rows = []
        for index, (label, ring, params) in enumerate(self._sweep_grid()):
            logger.info(f"Sweep setting {label}")
            refined = self.refine(mesh, ring, params, stage=f"sweep/{index:02d}")
            report = evaluate_meshes(refined, mesh, cameras, s.alpha_threshold)
            rows.append(
                {
                    "setting": label,
                    "mean_iou": report.mean_iou,
                    "mean_angular_error_deg": report.mean_angular_error_deg,
                }
            )
        path = write_report(
            self.out_dir / "sweep" / "report.txt",
            "sweep",
            rows,
            {"n_settings": len(rows)},
        )
        self.recorder.record("sweep", path)
        return path

    def _stage(self, name: str, action: Callable[[], T]) -> T:
        logger.info(f"Stage {name}")
        try:
            return action()
        except DomainException as exc:
            logger.error(f"Stage {name} failed: {exc.message}")
            raise PipelineStageError(name, exc) from exc

    def e2e(self) -> EvalReport:
        """synth-data, train, generate, carve, refine, eval; then the manifest."""
        examples = self._stage("synth-data", self.synth_data)
        self._stage("train", lambda: self.train(examples))
        front, back = self._stage("generate", self.generate)
        carved = self._stage("carve", lambda: self.carve(front, back))
        refined = self._stage("refine", lambda: self.refine(carved))
        report = self._stage(
            "eval", lambda: self._e2e_eval(refined, carved, front, back)
        )
        self.finish()
        return report

    def _e2e_eval(
        self, refined: Mesh, carved: Mesh, front: NormalMap, back: NormalMap
    ) -> EvalReport:
        """
        Refined against carved over the evaluation ring, plus how well the carved
        mesh reproduces the generated front/back pair.
        """
        s = self.settings
        cameras = eval_cameras(self.camera, s.eval_ring)
        report = evaluate_meshes(refined, carved, cameras, s.alpha_threshold)
        self.write_eval("eval", report, self.out_dir / "eval" / "report.txt")
        pair = [self.camera, self.camera.with_yaw(self.camera.yaw + 180.0)]
        fit = evaluate_against_renders(carved, [front, back], pair, s.alpha_threshold)
        self.write_eval("eval", fit, self.out_dir / "eval" / "fit.txt")
        return report
