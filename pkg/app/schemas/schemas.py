import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import settings
from app.core.stream import WindowSpec


# ── Harness configuration ─────────────────────────────────────────────────────

class RunConfig(BaseModel):
    datasets: list[str]
    detectors: list[str]
    window_size: int = Field(default_factory=lambda: settings.window_size, ge=1)
    window_slide: int = Field(default_factory=lambda: settings.window_slide, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [settings.base_seed + i for i in range(settings.n_runs)])
    budget: int = Field(default_factory=lambda: settings.tuning_budget, ge=1)
    out: str = Field(default_factory=lambda: settings.output_dir)
    label_column: str = Field(default_factory=lambda: settings.label_column)
    grids: dict[str, dict[str, list]] = Field(default_factory=dict)

    @field_validator("detectors")
    @classmethod
    def detectors_registered(cls, value: list[str]) -> list[str]:
        from app.services.detectors import REGISTRY

        unknown = [name for name in value if name not in REGISTRY]
        if unknown:
            raise ValueError(f"detectors without a registered grid: {unknown}")
        if not value:
            raise ValueError("at least one detector is required")
        return value

    @model_validator(mode="after")
    def grids_match_detectors(self) -> "RunConfig":
        stray = sorted(set(self.grids) - set(self.detectors))
        if stray:
            raise ValueError(f"grid overrides for detectors not in the run: {stray}")
        if self.window_slide > self.window_size:
            raise ValueError(f"window_slide {self.window_slide} exceeds window_size {self.window_size}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        return self

    @property
    def window(self) -> WindowSpec:
        return WindowSpec(self.window_size, self.window_slide)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.model_validate(json.loads(Path(path).read_text()))


# ── Reports ───────────────────────────────────────────────────────────────────

class BenchReport(BaseModel):
    detector: str
    dataset: str
    params: dict[str, Any] = {}
    seed: Optional[int] = None
    map: Optional[float] = Field(default=None, ge=0, le=1)
    auc: Optional[float] = Field(default=None, ge=0, le=1)
    train_seconds: float = Field(default=0.0, ge=0)
    update_seconds: float = Field(default=0.0, ge=0)
    update_seconds_std: float = Field(default=0.0, ge=0)
    n_windows: int = 0
    n_excluded: int = 0
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None

    def as_row(self) -> dict[str, Any]:
        row = self.model_dump()
        row["params"] = json.dumps(self.params, sort_keys=True)
        return row


class TuningResult(BaseModel):
    detector: str
    dataset: str
    params: dict[str, Any]
    map: float
    seed: int
    trials: list[dict[str, Any]] = []


class MetaFeatureVector(BaseModel):
    dataset: str
    n_samples: int = Field(gt=0)
    n_features: int = Field(gt=0)
    anomaly_ratio: float = Field(gt=0, lt=1)
    center_distance: float
    anomaly_to_normal: Optional[float] = None
    value_space: dict[str, Optional[float]] = {}
    outliers_3sd: int = 0
    correlated_pairs: int = 0

    def as_row(self) -> dict[str, Any]:
        row = self.model_dump(exclude={"value_space"})
        row.update(self.value_space)
        return row


# ── Bench service ─────────────────────────────────────────────────────────────

class DetectorOut(BaseModel):
    name: str
    online: bool
    orientation: str
    window_type: Optional[str] = None
    deterministic: bool
    grid_sizes: dict[str, int]


class ScoreRequest(BaseModel):
    samples: list[list[float]]
    labels: Optional[list[int]] = None
    window_size: int = Field(default_factory=lambda: settings.window_size, ge=1)
    window_slide: int = Field(default_factory=lambda: settings.window_slide, ge=1)
    train_size: Optional[int] = Field(default=None, ge=1)
    params: dict[str, Any] = {}
    seed: int = 0

    @model_validator(mode="after")
    def labels_align(self) -> "ScoreRequest":
        if self.labels is not None and len(self.labels) != len(self.samples):
            raise ValueError(f"{len(self.labels)} labels for {len(self.samples)} samples")
        return self


class WindowScores(BaseModel):
    index: int
    ordinals: list[int]
    scores: list[float]
    ap: Optional[float] = None
    auc: Optional[float] = None


class ScoreResponse(BaseModel):
    detector: str
    params: dict[str, Any]
    windows: list[WindowScores]
    map: Optional[float] = None


class RankRequest(BaseModel):
    table: dict[str, dict[str, float]]
    alpha: float = 0.05


class RankResponse(BaseModel):
    mean_ranks: dict[str, float]
    friedman: float
    p_value: float
    critical_distance: float


class ParetoPoint(BaseModel):
    label: str
    update_seconds: float = Field(ge=0)
    map: float


class ParetoRequest(BaseModel):
    points: list[ParetoPoint]


class MetaFeatureRequest(BaseModel):
    samples: list[list[float]]
    labels: list[int]
    name: str = "request"
