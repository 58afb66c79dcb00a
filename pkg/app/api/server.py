"""FastAPI application setup."""
from contextlib import asynccontextmanager

from fastapi import FastAPI

from app.api.admin_routes import router as admin_router
from app.api.routes import router
from app.deps import get_steering_service
from app.monitoring.logger import configure_logging, logger
from app.utils.config import get_settings

settings = get_settings()
configure_logging(settings.service_name, settings.log_level)


@asynccontextmanager
async def lifespan(app: FastAPI):
    health = get_steering_service().health()
    logger.info("service started", extra={"ctx_status": health["status"], "ctx_model": health["default_model"]})
    yield


app = FastAPI(title=settings.service_name, version="0.1.0", lifespan=lifespan)
app.include_router(router)
app.include_router(admin_router)


@app.get("/")
def root() -> dict[str, str]:
    return {"service": settings.service_name, "env": settings.env}


__all__ = ["app"]
