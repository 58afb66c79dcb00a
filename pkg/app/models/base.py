"""Model abstraction for steerable multimodal decoders."""
from abc import ABC, abstractmethod
from typing import Any, Dict, Optional, Sequence

import numpy as np

from app.numcore import Tensor


class MultimodalDecoder(ABC):
    """A frozen decoder consuming a visual-token prefix followed by text tokens."""

    version: str

    @abstractmethod
    def embed_image(self, image: Any, p_v: Optional[Tensor] = None) -> Tensor:
        """Return visual token embeddings, optionally offset by a latent modifier."""

    @abstractmethod
    def forward(
        self,
        e_v: Tensor,
        text: Sequence[int],
        attn_bias: Optional[np.ndarray] = None,
    ) -> Any:
        """Run the decoder over ``[e_v, embed(text)]`` and record attention."""

    @abstractmethod
    def checksum(self) -> str:
        """Return a digest of the frozen parameters."""

    @abstractmethod
    def metadata(self) -> Dict[str, Any]:
        """Return model metadata such as version and architecture."""
