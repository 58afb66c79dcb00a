"""Model registry for loading versioned decoder checkpoints."""
from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Dict, List

from app.models.checkpoint import load_checkpoint
from app.models.toy_decoder import ModelConfig, ToyDecoder
from app.monitoring.logger import logger


class ModelRegistry:
    """Loads models from ``<registry_path>/<version>/``.

    A version directory holds a ``model.json`` manifest and, once trained, a
    ``model.bin`` checkpoint. Without a checkpoint the manifest's config is
    initialized untrained.
    """

    def __init__(self, registry_path: Path, default_version: str = "v1") -> None:
        self.registry_path = Path(registry_path)
        self._loaded_models: Dict[str, ToyDecoder] = {}
        self._default_version = default_version
        self._lock = threading.RLock()

    @property
    def default_version(self) -> str:
        with self._lock:
            return self._default_version

    def list_loaded_versions(self) -> List[str]:
        with self._lock:
            return list(self._loaded_models.keys())

    def list_available_versions(self) -> List[str]:
        if not self.registry_path.exists():
            return []
        return sorted(p.name for p in self.registry_path.iterdir() if p.is_dir())

    def set_default_version(self, version: str) -> None:
        """Promote a version to be the default, loading it if needed."""
        with self._lock:
            if version not in self._loaded_models:
                self.load(version)
            self._default_version = version

    def load(self, version: str) -> ToyDecoder:
        with self._lock:
            if version in self._loaded_models:
                return self._loaded_models[version]

            version_dir = self.registry_path / version
            checkpoint = version_dir / "model.bin"
            manifest = version_dir / "model.json"
            if checkpoint.exists():
                model = load_checkpoint(checkpoint, version=version)
            elif manifest.exists():
                with open(manifest, "r", encoding="utf-8") as f:
                    payload = json.load(f)
                model = ToyDecoder.initialize(ModelConfig.from_dict(payload.get("config", {})), version=version)
                logger.warning(
                    "no checkpoint for version, using untrained weights",
                    extra={"ctx_version": version, "ctx_checksum": model.checksum()},
                )
            else:
                raise FileNotFoundError(f"Model artifact not found for version {version}")

            self._loaded_models[version] = model
            return model

    def unload(self, version: str) -> None:
        with self._lock:
            if version == self._default_version:
                raise ValueError(f"Cannot unload the default version ({version})")
            self._loaded_models.pop(version, None)


__all__ = ["ModelRegistry"]
