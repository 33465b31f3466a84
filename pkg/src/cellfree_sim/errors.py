"""Exception types shared across the simulator.

Two failure classes matter to callers: bad user input (rejected before any
computation starts) and numerical trouble inside a computation. The CLI maps
them to distinct exit codes.
"""


class ConfigError(ValueError):
    """Invalid configuration or experiment input."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or produced an unusable result."""
