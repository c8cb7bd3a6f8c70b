from .carve import CarveConfig, LossWeights
from .denoiser import DatasetEntry, DatasetIndex, DenoiserArchitecture, TrainConfig
from .diffusion import GuidanceParams, ResampleParams, ScheduleParams
from .mesh import (
    BodyPose,
    BodyProxyParams,
    BodyShape,
    CapsuleSegment,
    MeshValidityReport,
    ProxyKind,
)
from .pipeline import (
    CameraParams,
    CropParams,
    DatasetParams,
    EvalReport,
    EvalRingParams,
    ManifestEntry,
    PathsConfig,
    RunManifest,
    SweepParams,
    ViewMetrics,
    ViewRingParams,
)
from .responses import (
    DecimateRequest,
    EvaluationRequest,
    EvaluationResponse,
    MeshPayload,
    RenderRequest,
    RenderResponse,
    ServiceInfoResponse,
    ViewRequest,
)

__all__ = [
    # Mesh and proxy schemas
    "ProxyKind",
    "CapsuleSegment",
    "BodyShape",
    "BodyPose",
    "BodyProxyParams",
    "MeshValidityReport",
    # Carving schemas
    "LossWeights",
    "CarveConfig",
    # Diffusion and denoiser schemas
    "ScheduleParams",
    "GuidanceParams",
    "ResampleParams",
    "DenoiserArchitecture",
    "TrainConfig",
    "DatasetEntry",
    "DatasetIndex",
    # Pipeline schemas
    "CameraParams",
    "ViewRingParams",
    "EvalRingParams",
    "CropParams",
    "DatasetParams",
    "PathsConfig",
    "ViewMetrics",
    "EvalReport",
    "ManifestEntry",
    "RunManifest",
    "SweepParams",
    # Request and response schemas
    "MeshPayload",
    "ViewRequest",
    "DecimateRequest",
    "RenderRequest",
    "RenderResponse",
    "EvaluationRequest",
    "EvaluationResponse",
    "ServiceInfoResponse",
]
