"""Exception hierarchy shared across the simulator."""


class SimulatorError(Exception):
    """Base class for all simulator-specific failures."""


class ConfigError(SimulatorError):
    """Invalid configuration or incompatible tensor shapes."""


class CapacityError(ConfigError):
    """A memory group was asked to hold more bytes than it has."""


class DataFormatError(SimulatorError):
    """Malformed input data (dataset files, labels, non-finite values)."""


class MacModeError(SimulatorError):
    """A MAC operation was issued while the unit is in the other mode."""
