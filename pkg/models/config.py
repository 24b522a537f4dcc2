from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Variant(str, Enum):
    """Architecture selector."""

    HUAPA = "huapa"
    HUA = "hua"
    HPA = "hpa"
    NO_ATTENTION = "no-attention"
    LOCAL_ATTENTION = "local-attention"


# Weighted-loss configurations (λ1, λ2, λ3) studied for the combined strategy
LAMBDA_PRESETS: Dict[str, Tuple[float, float, float]] = {
    "joint-only": (1.0, 0.0, 0.0),
    "user-aux": (0.7, 0.3, 0.0),
    "product-aux": (0.7, 0.0, 0.3),
    "full": (0.4, 0.3, 0.3),
}


class ModelDims(BaseModel):
    model_config = ConfigDict(extra="forbid")

    word: int = Field(200, gt=0)
    user: int = Field(200, gt=0)
    product: int = Field(200, gt=0)
    hidden: int = Field(100, gt=0, description="LSTM hidden size per direction")
    attention: int = Field(100, gt=0)
    classes: int = Field(5, ge=2, description="10 for IMDB-style data, 5 for Yelp-style data")


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(0.005, gt=0)
    lambda1: float = 0.4
    lambda2: float = 0.3
    lambda3: float = 0.3
    lambda_preset: Optional[str] = None
    batch_size: int = Field(32, gt=0)
    max_epochs: int = Field(10, gt=0)
    patience: int = Field(3, ge=0)
    seed: int = 1
    clip_norm: Optional[float] = Field(None, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    init_range: float = Field(0.01, gt=0)
    eval_jobs: int = Field(1, gt=0)
    progress: bool = False
    dims: ModelDims = Field(default_factory=ModelDims)

    @model_validator(mode="before")
    @classmethod
    def apply_lambda_preset(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("lambda_preset"):
            preset = data["lambda_preset"]
            if preset not in LAMBDA_PRESETS:
                raise ValueError(f"unknown lambda_preset '{preset}', expected one of {sorted(LAMBDA_PRESETS)}")
            data = {**data}
            data["lambda1"], data["lambda2"], data["lambda3"] = LAMBDA_PRESETS[preset]
        return data

    @model_validator(mode="after")
    def check_lambdas(self) -> "TrainConfig":
        if min(self.lambdas) < 0:
            raise ValueError(f"loss weights must be non-negative, got {self.lambdas}")
        if sum(self.lambdas) == 0:
            raise ValueError("at least one loss weight must be positive")
        return self

    @property
    def lambdas(self) -> Tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)


class RunConfig(BaseSettings):
    """Everything one reproducible run needs: training knobs, data options and file paths."""

    model_config = SettingsConfigDict(
        env_prefix="HUAPA_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    train_path: Optional[Path] = None
    dev_path: Optional[Path] = None
    test_path: Optional[Path] = None
    embeddings_path: Optional[Path] = None
    output_dir: Path = Path("runs/huapa")

    variant: Variant = Variant.HUAPA
    sentence_delimiter: str = "<sssss>"
    field_separator: str = "\t\t"
    lowercase: bool = True
    min_frequency: int = Field(2, ge=1)
    max_sentences: int = Field(40, gt=0)
    max_words: int = Field(50, gt=0)
    log_level: str = "INFO"

    train: TrainConfig = Field(default_factory=TrainConfig)
