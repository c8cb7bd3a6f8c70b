from fastapi import APIRouter

from app.schemas.mesh import BodyProxyParams, MeshValidityReport
from app.schemas.responses import DecimateRequest, MeshPayload
from app.services.decimation_service import decimate
from app.services.mesh_service import validate
from app.services.proxy_service import make_body_proxy

router = APIRouter()


@router.post("/proxy", response_model=MeshPayload)
def build_proxy(params: BodyProxyParams):
    """Closed genus-0 body proxy of the requested kind."""
    return MeshPayload.from_mesh(make_body_proxy(params.kind, params))


@router.post("/validate", response_model=MeshValidityReport)
def validate_mesh(mesh: MeshPayload):
    return validate(mesh.to_mesh())


@router.post("/decimate", response_model=MeshPayload)
def decimate_mesh(request: DecimateRequest):
    mesh = decimate(request.mesh.to_mesh(), request.target_vertices)
    return MeshPayload.from_mesh(mesh)
