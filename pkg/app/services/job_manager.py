import concurrent.futures
import json
import threading
import time
import uuid
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

from app.monitoring.logger import logger


class JobManager:
    """Runs evaluation jobs on a thread pool and keeps their state as JSON on disk."""

    def __init__(self, max_workers: int = 2, storage_dir: Union[str, Path] = "data/jobs") -> None:
        self.executor = concurrent.futures.ThreadPoolExecutor(max_workers=max_workers)
        self.storage_dir = Path(storage_dir)
        self.storage_dir.mkdir(parents=True, exist_ok=True)
        self._jobs: Dict[str, concurrent.futures.Future] = {}
        self._lock = threading.Lock()

    def submit(self, fn: Callable[..., Any], *args: Any, **kwargs: Any) -> str:
        job_id = str(uuid.uuid4())
        self._save_job_state(job_id, {"status": "pending", "submitted_at": time.time()})

        def wrapped_fn() -> Any:
            self._save_job_state(job_id, {"status": "running", "started_at": time.time()})
            try:
                result = fn(*args, **kwargs)
            except Exception as exc:
                logger.exception("evaluation job failed", extra={"ctx_job_id": job_id})
                self._save_job_state(
                    job_id,
                    {"status": "failed", "completed_at": time.time(), "error": f"{type(exc).__name__}: {exc}"},
                )
                raise
            self._save_job_state(job_id, {"status": "completed", "completed_at": time.time(), "result": result})
            return result

        future = self.executor.submit(wrapped_fn)
        self._jobs[job_id] = future
        return job_id

    def wait(self, job_id: str, timeout: Optional[float] = None) -> None:
        """Block until an in-process job finishes; failures stay recorded in the job state."""

        future = self._jobs.get(job_id)
        if future is not None:
            concurrent.futures.wait([future], timeout=timeout)

    def status(self, job_id: str) -> str:
        state = self._load_job_state(job_id)
        if state:
            return state.get("status", "unknown")
        return "not_found"

    def state(self, job_id: str) -> Optional[Dict[str, Any]]:
        return self._load_job_state(job_id)

    def result(self, job_id: str) -> Optional[Any]:
        state = self._load_job_state(job_id)
        if state and state.get("status") == "completed":
            return state.get("result")
        return None

    def shutdown(self) -> None:
        self.executor.shutdown(wait=True)

    def _path(self, job_id: str) -> Path:
        return self.storage_dir / f"{job_id}.json"

    def _save_job_state(self, job_id: str, updates: Dict[str, Any]) -> None:
        file_path = self._path(job_id)
        with self._lock:
            current_state: Dict[str, Any] = {}
            if file_path.exists():
                try:
                    with open(file_path, "r", encoding="utf-8") as f:
                        current_state = json.load(f)
                except (OSError, ValueError):
                    logger.warning("unreadable job state, rewriting", extra={"ctx_job_id": job_id})
            current_state.update(updates)
            current_state["updated_at"] = time.time()
            try:
                with open(file_path, "w", encoding="utf-8") as f:
                    json.dump(current_state, f, default=str)
            except OSError as exc:
                logger.error("failed to save job state", extra={"ctx_job_id": job_id, "ctx_error": str(exc)})

    def _load_job_state(self, job_id: str) -> Optional[Dict[str, Any]]:
        file_path = self._path(job_id)
        if not file_path.exists():
            return None
        with self._lock:
            try:
                with open(file_path, "r", encoding="utf-8") as f:
                    return json.load(f)
            except (OSError, ValueError):
                return None


__all__ = ["JobManager"]
