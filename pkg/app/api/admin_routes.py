"""Admin routes for decoder checkpoint management."""
from typing import Any, Callable, Dict

from fastapi import APIRouter, Depends, HTTPException

from app.deps import get_steering_service
from app.services.steering_service import SteeringService

router = APIRouter(prefix="/admin/models", tags=["admin"])


def _guarded(action: Callable[[], Any]) -> Any:
    try:
        return action()
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.get("")
def list_models(service: SteeringService = Depends(get_steering_service)) -> Dict[str, Any]:
    return service.list_models()


@router.get("/{version}")
def describe_model(version: str, service: SteeringService = Depends(get_steering_service)) -> Dict[str, Any]:
    """Config, parameter count and checksum of a version (loads it if needed)."""

    return _guarded(lambda: service.model(version).metadata())


@router.post("/{version}/load")
def load_model(version: str, service: SteeringService = Depends(get_steering_service)) -> Dict[str, str]:
    _guarded(lambda: service.load_model(version))
    return {"status": "loaded", "version": version}


@router.post("/{version}/promote")
def promote_model(version: str, service: SteeringService = Depends(get_steering_service)) -> Dict[str, str]:
    _guarded(lambda: service.promote_model(version))
    return {"status": "promoted", "version": version}


@router.delete("/{version}")
def unload_model(version: str, service: SteeringService = Depends(get_steering_service)) -> Dict[str, str]:
    _guarded(lambda: service.unload_model(version))
    return {"status": "unloaded", "version": version}


__all__ = ["router"]
