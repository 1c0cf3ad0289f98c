from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.api import detectors, evaluation, metafeatures
from app.core.config import settings
from app.core.log import configure_logging

configure_logging(settings.log_level)

_DEV = settings.environment == "development"

app = FastAPI(
    title="Streambench API",
    description="Online anomaly detectors and their evaluation harness over HTTP",
    version="1.0.0",
    docs_url="/docs" if _DEV else None,
    redoc_url="/redoc" if _DEV else None,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:3000", "http://localhost:8888"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(detectors.router)
app.include_router(evaluation.router)
app.include_router(metafeatures.router)


@app.get("/health")
async def health():
    return {"status": "ok", "service": "streambench"}
