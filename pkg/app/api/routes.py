"""API routes for steering and evaluation."""
from typing import Any, Dict, Optional

from fastapi import APIRouter, Depends, HTTPException

from app.api.schemas import EvalRequest, SteerRequest, flat_entries
from app.deps import get_steering_service
from app.harness.dataset import RocSample, gen_dataset
from app.numcore import NumericError
from app.services.steering_service import SteeringService
from app.steering.config import SteeringConfig
from app.steering.visprompt import parse_prompt

router = APIRouter()


@router.get("/health")
def health(service: SteeringService = Depends(get_steering_service)) -> Dict[str, Any]:
    return service.health()


@router.get("/metrics")
def metrics(service: SteeringService = Depends(get_steering_service)) -> Dict[str, Any]:
    return dict(service.metrics_snapshot())


def _resolve_sample(request: SteerRequest, grid: int) -> RocSample:
    if request.sample is not None:
        return RocSample.from_dict(request.sample)
    return gen_dataset(request.index + 1, request.seed, g=grid)[request.index]


@router.post("/steer")
def steer(
    request: SteerRequest,
    version: Optional[str] = None,
    service: SteeringService = Depends(get_steering_service),
) -> Dict[str, Any]:
    try:
        model = service.model(version)
        sample = _resolve_sample(request, model.config.grid)
        prompt = parse_prompt(request.prompt) if request.prompt is not None else None
        cfg = SteeringConfig.from_flat(flat_entries(request.config))
        return service.steer(sample, request.optimizer, cfg, prompt, request.debias, model_version=version)
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except NumericError as e:
        raise HTTPException(status_code=500, detail=f"numeric failure: {e}")
    except (ValueError, KeyError) as e:
        raise HTTPException(status_code=400, detail=str(e))


@router.post("/eval")
def submit_eval(
    request: EvalRequest,
    version: Optional[str] = None,
    service: SteeringService = Depends(get_steering_service),
) -> Dict[str, Any]:
    try:
        gd = SteeringConfig.from_flat(flat_entries(request.gd_config))
        adam = SteeringConfig.from_flat(flat_entries(request.adam_config))
        service.model(version)
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    job_id = service.submit_eval(request.n, request.seed, request.modes, gd, adam, request.eta, model_version=version)
    return {"job_id": job_id, "status": "submitted"}


@router.get("/eval/{job_id}")
def eval_status(job_id: str, service: SteeringService = Depends(get_steering_service)) -> Dict[str, Any]:
    result = service.eval_status(job_id)
    if result["status"] == "not_found":
        raise HTTPException(status_code=404, detail="Job not found")
    return result


__all__ = ["router"]
