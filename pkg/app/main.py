from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.api.v1.api import api_router
from app.core.exception_handlers import EXCEPTION_HANDLERS
from app.schemas.responses import ServiceInfoResponse

API_TITLE = "Dual normal-map carving API"
API_VERSION = "0.1.0"

app = FastAPI(
    title=API_TITLE,
    description="Body proxies, mesh validation and decimation, rendering, evaluation",
    version=API_VERSION,
)

# Register exception handlers
for exception_class, handler in EXCEPTION_HANDLERS.items():
    app.add_exception_handler(exception_class, handler)


app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(api_router, prefix="/api/v1")


@app.get("/", response_model=ServiceInfoResponse)
def read_root():
    return ServiceInfoResponse(message=API_TITLE, version=API_VERSION)


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
