"""Exception hierarchy shared by the library and the CLI."""


class MpalError(Exception):
    """Base class for all package errors."""


class UsageError(MpalError, ValueError):
    """A function was called with arguments violating its preconditions."""


class ConfigError(MpalError):
    """An experiment configuration is invalid (CLI exit code 2)."""


class SizeCapError(ConfigError):
    """A restricted Hamiltonian would exceed the dense-matrix row cap."""


class DiagnosticError(MpalError):
    """A numerical routine failed its self-checks (CLI exit code 3).

    ``context`` carries whatever provenance is needed to replay the instance.
    """

    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = dict(context or {})


class InternalConsistencyError(DiagnosticError):
    """A constructive geometric lemma failed its own exhaustive re-check."""
