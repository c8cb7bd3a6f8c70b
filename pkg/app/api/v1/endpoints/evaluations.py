from fastapi import APIRouter

from app.schemas.responses import EvaluationRequest, EvaluationResponse
from app.services.eval_service import eval_cameras, evaluate_meshes

router = APIRouter()


@router.post("/", response_model=EvaluationResponse)
def evaluate(request: EvaluationRequest):
    """Per-view silhouette IoU and normal angular error over the yaw ring."""
    cameras = eval_cameras(request.base_camera(), request.ring)
    report = evaluate_meshes(
        request.mesh.to_mesh(), request.reference.to_mesh(), cameras, request.threshold
    )
    return EvaluationResponse.from_report(report)
