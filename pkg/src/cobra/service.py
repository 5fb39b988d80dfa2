import logging
import os
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from .analysis import CostReport, attention_cost
from .checkpoint import load_checkpoint
from .config import EvalConfig, RunConfig, load_config
from .data import model_inputs
from .errors import DimensionError, UsageError
from .model import CobraModel
from .objective import Hypothesis

logger = logging.getLogger(__name__)


class DecodeRequest(BaseModel):
    audio: List[List[float]] = Field(min_length=1, description="Audio feature frames (F_a × audio_in_dim)")
    video: Optional[List[List[float]]] = Field(default=None, description="Video feature frames (F_v × video_in_dim)")
    beam: Optional[int] = Field(default=None, ge=1, description="Overrides eval.beam")
    ctc_weight: Optional[float] = Field(default=None, ge=0.0, le=1.0, description="Overrides eval.ctc_weight")


class StatusResponse(BaseModel):
    loaded: bool
    variant: Optional[str] = None
    label: Optional[str] = None
    strategy: Optional[str] = None
    checkpoint: Optional[str] = None
    loaded_at: Optional[datetime] = None
    model: Dict[str, Any] = Field(default_factory=dict)


class InferenceService:
    """Holds one loaded model and answers status, cost and decode queries."""

    def __init__(self):
        self.config: RunConfig = load_config(None)
        self.model: Optional[CobraModel] = None
        self.checkpoint: Optional[str] = None
        self.loaded_at: Optional[datetime] = None

    def load(self, config_path: Optional[str], checkpoint_path: Optional[str]) -> None:
        self.config = load_config(config_path)
        if checkpoint_path:
            self.model = load_checkpoint(checkpoint_path, expected=self.config.model)
            self.checkpoint = str(checkpoint_path)
            self.loaded_at = datetime.now()
            logger.info(f"Serving {self.model.cfg.run_label} model from {checkpoint_path}")

    def load_from_env(self) -> None:
        """Read COBRA_CONFIG and COBRA_CHECKPOINT; with no checkpoint the service runs without a model."""
        self.load(os.environ.get("COBRA_CONFIG"), os.environ.get("COBRA_CHECKPOINT"))

    def status(self) -> StatusResponse:
        if self.model is None:
            return StatusResponse(loaded=False)
        return StatusResponse(
            loaded=True,
            variant=self.model.cfg.variant.value,
            label=self.model.cfg.run_label,
            strategy=self.model.cfg.strategy.value,
            checkpoint=self.checkpoint,
            loaded_at=self.loaded_at,
            model=self.model.cfg.model_dump(mode="json"),
        )

    def cost(self, f_m: int, f_b: int, scheme: str) -> CostReport:
        return attention_cost(f_m, f_b, scheme, self.config.bench.d_model)

    def decode(self, request: DecodeRequest) -> Optional[Hypothesis]:
        if self.model is None:
            return None
        cfg = self.model.cfg
        audio = np.asarray(request.audio, dtype=np.float64)
        if audio.ndim != 2 or audio.shape[1] != cfg.audio_in_dim:
            raise DimensionError(f"audio must be F_a × {cfg.audio_in_dim}, got {audio.shape}")
        video = None
        if self.model.video is not None:
            if request.video is None:
                raise UsageError("this model needs video frames")
            video = np.asarray(request.video, dtype=np.float64)
            if video.ndim != 2 or video.shape[1] != cfg.video_in_dim:
                raise DimensionError(f"video must be F_v × {cfg.video_in_dim}, got {video.shape}")
        overrides = {k: v for k, v in (("beam", request.beam), ("ctc_weight", request.ctc_weight)) if v is not None}
        eval_cfg = EvalConfig(**{**self.config.eval.model_dump(), **overrides})
        return self.model.decode(*model_inputs(audio, video), eval_cfg)
