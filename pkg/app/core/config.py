from pathlib import Path
from pydantic_settings import BaseSettings

_ENV_FILE = Path(__file__).resolve().parent.parent.parent / ".env"


class Settings(BaseSettings):
    window_size: int = 128
    window_slide: int = 64
    train_fraction: float = 0.5
    val_fraction: float = 0.1
    test_fraction: float = 0.4
    tuning_budget: int = 30
    n_runs: int = 30
    base_seed: int = 0
    label_column: str = "is_anomaly"
    output_dir: str = "results"
    random_failure_threshold: float = 0.6
    cms_depth: int = 4
    cms_width: int = 2 ** 14
    max_workers: int = 1
    log_level: str = "INFO"
    environment: str = "development"

    class Config:
        env_prefix = "STREAMBENCH_"
        env_file = str(_ENV_FILE)
        env_file_encoding = "utf-8"

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.val_fraction, self.test_fraction)


settings = Settings()
