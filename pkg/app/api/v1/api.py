from fastapi import APIRouter

from app.api.v1.endpoints import evaluations, meshes, renders

api_router = APIRouter()

api_router.include_router(meshes.router, prefix="/meshes", tags=["meshes"])
api_router.include_router(renders.router, prefix="/renders", tags=["renders"])
api_router.include_router(
    evaluations.router, prefix="/evaluations", tags=["evaluations"]
)
