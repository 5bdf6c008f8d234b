from dataclasses import dataclass
from typing import Optional


@dataclass
class DataConfig:
    """Where datasets are read from and how verbose the package logs."""

    data_dir: Optional[str] = None
    """Root directory used for relative dataset paths when the run config does not name one."""
    log_level: str = "INFO"
    """Name of the log level of the 'dentlab' logger."""
