"""Exception types shared across the package."""


class SimlabError(Exception):
    """Base class for all package errors."""


class ConfigError(SimlabError):
    """Invalid or inconsistent configuration (bad field, bad file)."""


class DynamicsError(SimlabError):
    """Model evaluation produced an unusable state (non-finite, degenerate quaternion)."""


class OcpError(SimlabError):
    """The optimal control solve failed (bad linearization, infeasible QP)."""
