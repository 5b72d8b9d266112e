"""Exception types shared across the package.

The CLI maps these onto process exit codes: invalid input or configuration
exits 2, a missing upstream artifact exits 3, and a failed convergence
diagnostic exits 4.
"""


class InputError(ValueError):
    """Malformed input data or an invalid configuration value."""


class MissingArtifactError(FileNotFoundError):
    """A required upstream artifact (posterior, dataset, ...) is absent."""


class DiagnosticsError(RuntimeError):
    """Convergence diagnostics failed and were not explicitly overridden."""
