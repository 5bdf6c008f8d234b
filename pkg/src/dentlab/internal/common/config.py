import os

from dentlab.config import DataConfig


class EnvDataConfig(DataConfig):
    """Retrieve the data configuration from environment variables."""

    def __init__(self, prefix: str = ""):
        """Create the data configuration and retrieve values from env vars.

        :param prefix: Prefix to the name environment variables.
        """
        super().__init__(
            data_dir=os.environ.get(f"{prefix}DENTLAB_DATA_DIR", DataConfig.data_dir),
            log_level=os.environ.get(f"{prefix}LOG_LEVEL", DataConfig.log_level),
        )
