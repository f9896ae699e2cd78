from dataclasses import dataclass

from app import config


@dataclass(frozen=True)
class Settings:
    results_dir: str


def get_settings() -> Settings:
    """Dependency exposing the environment settings to the routes"""
    return Settings(results_dir=config.RESULTS_DIR)
