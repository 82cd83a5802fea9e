from __future__ import annotations

import os

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="COALRATES_",
        extra="ignore",
        env_file=".env",
        env_file_encoding="utf-8",
    )

    # 0 means one worker per CPU.
    threads: int = 0
    block_size: int = 4096

    output_dir: str = "data/runs"
    exact_max_loci: int = 30

    log_level: str = "INFO"
    progress_interval_seconds: float = 5.0

    def worker_count(self) -> int:
        if self.threads > 0:
            return self.threads
        return os.cpu_count() or 1


settings = Settings()
