from pathlib import Path

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Logging
    log_level: str = "INFO"
    show_progress: bool = True

    # Artifacts
    output_dir: Path = Path("runs")

    # Numerics
    storage_dtype: str = "float32"
    eval_batch_size: int = 256  # forward-pass chunk for accuracy / curves
    ig_batch_size: int = 50  # interpolation points per integrated-gradients pass

    class Config:
        env_file = "../.env"  # Root .env file
        env_prefix = "FPA_"
        case_sensitive = False
        extra = "allow"


# Global settings instance
settings = Settings()
