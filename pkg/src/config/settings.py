from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables or .env file

    Variables carry the ``LUNGRISK_`` prefix, e.g. ``LUNGRISK_LOG_LEVEL=DEBUG``.
    """
    model_config = SettingsConfigDict(
        env_prefix="LUNGRISK_",
        env_file=".env",
        extra="ignore",
    )

    # Logging settings
    LOG_LEVEL: str = Field("INFO")
    LOG_FORMAT: str = Field("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    # Batch settings
    DEFAULT_THREADS: int = Field(1, ge=1)


def get_settings() -> Settings:
    """
    Get process settings
    """
    return Settings()
