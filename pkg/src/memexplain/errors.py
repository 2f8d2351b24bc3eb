"""Exception taxonomy shared across modules.

CLI exit-code mapping: DataError -> 1, ConfigError (incl. CheckpointError) -> 2.
"""


class DataError(Exception):
    """Broken input data: manifests, images, masks, annotation bundles."""


class ConfigError(Exception):
    """Inconsistent or invalid configuration."""


class CheckpointError(ConfigError):
    """Corrupt, version-mismatched or config-mismatched checkpoint blob."""
