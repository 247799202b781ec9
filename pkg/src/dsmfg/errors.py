"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, RefusalError -> 3,
MissingArtifactError -> 4.
"""


class DsmfgError(Exception):
    pass


class ConfigError(DsmfgError):
    """Invalid configuration (bad key, missing seed, missing input file)."""


class RefusalError(DsmfgError):
    """Numerical refusal: the request is well-formed but unsafe to compute
    (grid too coarse, tree cap exceeded, iteration failed to contract)."""


class MissingArtifactError(DsmfgError):
    """A required solver artifact is absent or stale on disk."""
