import os

LOG_LEVEL = os.environ.get("LOG_LEVEL", "INFO")
"""You can set the log level to DEBUG to see more detailed logs."""

TRIM_LOG_OBJECT_LENGTH = int(os.getenv("TRIM_LOG_OBJECT_LENGTH", 1000))
"""Trim the (str) length of logged objects to avoid long logs, set to -1 to disable trimming and log full objects."""

LEXSTRESS_CONFIG = os.getenv("LEXSTRESS_CONFIG")
"""Path of a YAML run config to use when `--config` is not given."""

LEXSTRESS_WORKERS = int(os.getenv("LEXSTRESS_WORKERS", 1))
"""Default number of workers for featurization and decoding."""

EXIT_RUNTIME_ERROR = 1
"""Exit code for runtime failures (non-finite loss, invariant violations)"""

EXIT_INPUT_ERROR = 2
"""Exit code for bad inputs (unreadable files, out-of-vocabulary words, invalid configuration)"""
