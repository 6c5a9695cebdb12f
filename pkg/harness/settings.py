"""
Environment Settings

Process-wide settings read from the environment (and a ``.env`` file when one
is present) plus the logging setup shared by every command.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


@dataclass
class Settings:
    log_level: str = 'INFO'
    log_file: Optional[str] = 'logs/writer_id.log'
    output_dir: str = 'runs'
    workers: int = 1
    seed: int = 0

    @classmethod
    def from_env(cls, dotenv_path: Optional[str] = None) -> 'Settings':
        """Read FDWI_* variables, letting a ``.env`` file fill in anything unset."""
        load_dotenv(dotenv_path, override=False)
        log_file = os.getenv('FDWI_LOG_FILE', cls.log_file)
        return cls(
            log_level=os.getenv('FDWI_LOG_LEVEL', cls.log_level).upper(),
            log_file=log_file or None,
            output_dir=os.getenv('FDWI_OUTPUT_DIR', cls.output_dir),
            workers=max(1, int(os.getenv('FDWI_WORKERS', str(cls.workers)))),
            seed=int(os.getenv('FDWI_SEED', str(cls.seed))),
        )


def configure_logging(settings: Settings) -> None:
    """basicConfig at the configured level, with an extra file handler when a log file is set."""
    level = getattr(logging, settings.log_level, logging.INFO)
    handlers = [logging.StreamHandler()]
    if settings.log_file:
        path = Path(settings.log_file)
        path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(path, encoding='utf-8'))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)
