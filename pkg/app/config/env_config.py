import sys
from typing import Literal
from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

class EnvConfig(BaseSettings):
    """
    Environment configuration for the motion identification toolchain.

    This module defines the process-level settings, validates them using Pydantic,
    and exports them for use throughout the application.

    Usage:
    - Import `env` to access validated environment variables
    - Run-specific knobs (paths, model sizes, seeds) live in RunConfig, not here
    """

    # Application environment
    ENVIRONMENT: Literal["development", "production", "test"] = "development"

    # Preprocessing cache (content-addressed windows)
    XRID_CACHE_DIR: str = Field(default=".xrid_cache", min_length=1)

    # Logging / progress
    XRID_LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    XRID_PROGRESS: bool = True

    # Default worker cap when --threads is not given
    XRID_THREADS: int = Field(default=1, ge=1, le=256)

    model_config = {
        "env_file": ".env",
        "case_sensitive": True,
        "extra": "ignore",
    }

# Create and validate environment configuration
try:
    env = EnvConfig()
except ValidationError as e:
    print("Environment validation errors:", file=sys.stderr)
    for error in e.errors():
        print(f"  - {error['loc'][0]}: {error['msg']}", file=sys.stderr)
    sys.exit(1)
