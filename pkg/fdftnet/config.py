from pathlib import Path
import os
from typing import Dict, Any
from dotenv import load_dotenv

from . import __version__

# Load environment variables
load_dotenv()

class Config:
    # Base paths
    BASE_DIR = Path(__file__).resolve().parent
    LOG_DIR = Path(os.getenv("FDFT_LOG_DIR", os.path.expanduser("~/.fdftnet/logs")))
    LOG_FILE_PATH = str(LOG_DIR / "audit.log")
    RUN_LOG_FILE_PATH = str(LOG_DIR / "fdftnet.log")

    PROJECT_NAME = "DA-FDFtNet desk-scale toolkit"
    VERSION = __version__

    # Logging
    LOG_LEVEL = os.getenv("FDFT_LOG_LEVEL", "INFO")

    # Reproducibility
    DEFAULT_SEED = int(os.getenv("FDFT_SEED", "0"))

    # Evaluation sharding
    EVAL_WORKERS = int(os.getenv("FDFT_EVAL_WORKERS", "1"))

    # Checkpoint format
    CHECKPOINT_MAGIC = b"DAFT"
    CHECKPOINT_VERSION = 1
    SUPPORTED_CHECKPOINT_VERSIONS = frozenset({1})

    # Dataset layout
    DATASET_ROLES = ("train", "validation", "test", "finetune")
    CLASS_DIRS = {"real": 0, "fake": 1}

    @classmethod
    def get_settings(cls) -> Dict[str, Any]:
        """Get all settings as a JSON-friendly dictionary."""
        settings = {}
        for name, value in vars(cls).items():
            if name.startswith('_') or callable(value) or isinstance(value, classmethod):
                continue
            if isinstance(value, Path):
                value = str(value)
            elif isinstance(value, bytes):
                value = value.decode("ascii")
            elif isinstance(value, (set, frozenset, tuple)):
                value = sorted(value) if isinstance(value, (set, frozenset)) else list(value)
            settings[name] = value
        return settings

    @classmethod
    def get_log_path(cls, filename: str) -> Path:
        """Get the full path for a file inside the log directory."""
        return cls.LOG_DIR / filename

# Create singleton instance
config = Config()
