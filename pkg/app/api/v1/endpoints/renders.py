from fastapi import APIRouter

from app.schemas.responses import RenderRequest, RenderResponse
from app.services.raster_service import rasterize

router = APIRouter()


@router.post("/", response_model=RenderResponse)
def render_view(request: RenderRequest):
    """Normal map of the mesh seen from one yaw of the weak-perspective camera."""
    camera = request.base_camera(request.yaw)
    normal_map = rasterize(request.mesh.to_mesh(), camera, request.softness)
    return RenderResponse.from_normal_map(normal_map, request.threshold)
