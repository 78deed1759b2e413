import os
from typing import List, Optional, Union, Any
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import field_validator

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data")


class Settings(BaseSettings):
    PROJECT_NAME: str = "pcodeguard"

    # Output & Logging
    OUTPUT_DIR: str = "results"
    LOG_DIR: str = "data/logs"
    LOG_LEVEL: str = "INFO"

    # Register layout (Ghidra x86-64 SLEIGH offsets by default)
    REGISTER_MAP_PATH: str = os.path.join(DATA_DIR, "x86_64_registers.json")

    # Exploration budgets
    MAX_STEPS: int = 100_000
    MAX_FORKS: int = 64
    MAX_DEPTH: int = 16
    WORKERS: int = 1

    # Solver
    SOLVER_BACKEND: str = "auto"
    SOLVER_PATH: Optional[str] = None
    SOLVER_TIMEOUT_MS: int = 5000
    ENUMERATION_BIT_LIMIT: int = 20

    # Guest memory layout
    STACK_BASE: int = 0x7FFF_0000_0000
    STACK_SIZE: int = 0x10000
    SENTINEL_RETURN: int = 0xDEAD_0000_0000
    HEAP_BASE: int = 0x1000_0000
    MMAP_BASE: int = 0x7F00_0000_0000

    # Updated type hints to Union[List[str], str] so env vars stay comma-separated text
    NOOP_CALLOTHERS: Union[List[str], str] = ["lock", "unlock", "pause", "nop"]

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="PCODEGUARD_",
        case_sensitive=True,
        extra="ignore",
    )

    @field_validator("NOOP_CALLOTHERS", mode="before")
    @classmethod
    def split_comma_separated_string(cls, v: Any) -> List[str]:
        if isinstance(v, str):
            if not v.strip():
                return []
            return [i.strip().lower() for i in v.split(",") if i.strip()]
        if isinstance(v, list):
            return [str(i).lower() for i in v]
        return []

    @field_validator("SOLVER_BACKEND", mode="before")
    @classmethod
    def normalize_backend(cls, v: Any) -> str:
        value = str(v or "auto").strip().lower()
        if value not in ("auto", "enumeration", "z3", "smtlib"):
            raise ValueError(f"unknown solver backend '{v}'")
        return value


settings = Settings()
