import os
from typing import List

from app.exceptions import ConfigError


def int_env(name: str, default: int, minimum: int = 1) -> int:
    """整数の環境変数。解釈できない値は変数名つきの ConfigError"""
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw.strip())
    except ValueError:
        raise ConfigError(f"環境変数 {name} は整数である必要があります: {raw!r}") from None
    return max(minimum, value)


LOG_DIR = os.getenv("NI_DESIGN_LOG_DIR", "logs")
LOG_LEVEL = os.getenv("NI_DESIGN_LOG_LEVEL", "INFO").upper()
WORKERS = int_env("NI_DESIGN_WORKERS", 1)
API_ORIGINS: List[str] = [
    origin.strip()
    for origin in os.getenv("NI_DESIGN_API_ORIGINS", "http://localhost:3000").split(",")
    if origin.strip()
]
