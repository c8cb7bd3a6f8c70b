from app.models.camera import Camera, camera_ring, crop_camera, opposite_view
from app.models.carve import CarveResult, CarveTargets, SideView, TargetView
from app.models.diffusion import Condition, Denoiser, VarianceSchedule
from app.models.loss import LossResult
from app.models.mesh import Adjacency, Mesh
from app.models.normal_map import NormalMap, pack_dual, unpack_dual
from app.models.training import TrainExample, TrainResult

__all__ = [
    "Camera",
    "camera_ring",
    "crop_camera",
    "opposite_view",
    "Mesh",
    "Adjacency",
    "NormalMap",
    "pack_dual",
    "unpack_dual",
    "TargetView",
    "SideView",
    "CarveTargets",
    "CarveResult",
    "LossResult",
    "VarianceSchedule",
    "Condition",
    "Denoiser",
    "TrainExample",
    "TrainResult",
]
