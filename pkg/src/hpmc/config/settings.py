from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="HPMC_",
        env_file=".env",
        env_file_encoding="utf-8",
        # Allow extra fields to avoid validation errors
        extra="ignore",
    )

    # Logging
    log_level: str = "INFO"

    # Worker pool for replicates; None falls back to the physical core count
    threads: int | None = None  # Set via HPMC_THREADS

    # Experiment defaults (spec files and CLI flags override these)
    output_dir: str = "./results"
    default_seed: int = 2024
    default_replicates: int = 50
    default_budget: int = 200_000

    # Telemetry configuration
    telemetry_enabled: bool = False
    telemetry_endpoint: str = "http://localhost:4318"
    telemetry_service_name: str = "hpmc-bench"
    telemetry_service_version: str = "0.1.0"

    def default_threads(self) -> int:
        """Thread count used when neither the CLI nor the environment sets one."""
        if self.threads is not None and self.threads > 0:
            return self.threads
        try:
            import psutil

            return psutil.cpu_count(logical=False) or 1
        except ImportError:
            return 1


settings = Settings()
