from .carve_service import CarveService
from .denoiser_service import TorchDenoiser
from .pipeline_service import PipelineService
from .proxy_service import ProxyService

__all__ = [
    "ProxyService",
    "CarveService",
    "TorchDenoiser",
    "PipelineService",
]
