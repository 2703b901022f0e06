"""
Report schemas written by eval, bench and train
"""

from typing import Any, Dict, List, Optional
import json

from pydantic import BaseModel, ConfigDict, Field


class ClassMetrics(BaseModel):
    """Metrics of one class; ap is None when the class has no ground truth"""

    class_id: int
    name: str
    ap: Optional[float] = None
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    n_gt: int = 0


class LatencyStats(BaseModel):
    """Per-image wall-clock time of detect (forward + decode + NMS) in milliseconds"""

    mean_ms: float
    median_ms: float
    p95_ms: float
    min_ms: float
    max_ms: float
    count: int


class EvalReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    classes: List[ClassMetrics]
    mAP: Optional[float] = None
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    iou_threshold: float = 0.5
    score_threshold: float = 0.25
    n_images: int = 0
    latency: Optional[LatencyStats] = None
    effective: Dict[str, Any] = Field(default_factory=dict)

    def to_json(self) -> str:
        """Stable, diffable serialization (sorted keys)"""
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


class TrainLogRecord(BaseModel):
    """Mean loss terms of one epoch"""

    model_config = ConfigDict(populate_by_name=True)

    epoch: int
    box: float
    objectness: float
    no_objectness: float
    class_loss: float = Field(alias="class")
    total: float
    val_mAP: Optional[float] = None
