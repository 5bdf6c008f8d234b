from dentlab.internal.common.app_logging import setup_logging, LogLevel
from dentlab.internal.common.config import EnvDataConfig

setup_logging(LogLevel.parse(EnvDataConfig().log_level), "dentlab")
