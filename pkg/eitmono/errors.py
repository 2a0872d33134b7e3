"""
Error types shared by every eitmono module.

Messages start with the module that raised them ("mesh: ...", "forward: ...")
so the command-line front end can report them verbatim.
"""


class EITMonoError(Exception):
    """Base class for all eitmono failures."""


class ValidationError(EITMonoError, ValueError):
    """A precondition, input file or configuration value is invalid."""


class SolverError(EITMonoError, RuntimeError):
    """A factorization, solve or quadrature failed numerically."""
