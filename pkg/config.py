"""
Runtime configuration read from the environment (and a local .env file).
"""
import os
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict

# Load environment variables from .env file
load_dotenv()

ROOT = Path(__file__).parent
DEFAULT_REGISTRY = ROOT / "fixtures" / "registry"
DEFAULT_TERMS = ROOT / "fixtures" / "value_sets"
DEFAULT_LISTEN = "127.0.0.1:8000"
DEFAULT_MAX_UPLOAD_BYTES = 20 * 1024 * 1024
DEFAULT_CACHE_TTL = 86400


class Settings(BaseModel):
    model_config = ConfigDict(frozen=True)

    registry_root: Path = DEFAULT_REGISTRY
    terms: str = str(DEFAULT_TERMS)     # fixture directory or http(s) base URL
    listen: str = DEFAULT_LISTEN
    max_upload_bytes: int = DEFAULT_MAX_UPLOAD_BYTES
    cors_origins: tuple[str, ...] = ("*",)
    ranker: str = "default"             # default | anthropic | embedding
    cache_ttl: int = DEFAULT_CACHE_TTL

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0] or "127.0.0.1"

    @property
    def port(self) -> int:
        _, _, port = self.listen.rpartition(":")
        return int(port) if port.isdigit() else 8000


def load_settings(**overrides) -> Settings:
    """Build Settings from SHEETCHECK_* variables; keyword overrides win when not None"""
    env = os.environ
    values = {
        "registry_root": env.get("SHEETCHECK_REGISTRY", str(DEFAULT_REGISTRY)),
        "terms": env.get("SHEETCHECK_TERMS", str(DEFAULT_TERMS)),
        "listen": env.get("SHEETCHECK_LISTEN", DEFAULT_LISTEN),
        "max_upload_bytes": int(env.get("SHEETCHECK_MAX_UPLOAD_BYTES", DEFAULT_MAX_UPLOAD_BYTES)),
        "cors_origins": tuple(
            o.strip() for o in env.get("SHEETCHECK_CORS_ORIGINS", "*").split(",") if o.strip()
        ),
        "ranker": env.get("SHEETCHECK_RANKER", "default"),
        "cache_ttl": int(env.get("SHEETCHECK_CACHE_TTL", DEFAULT_CACHE_TTL)),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Settings(**values)
