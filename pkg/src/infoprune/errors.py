"""Exception hierarchy shared across the package."""


class InfoPruneError(Exception):
    pass


class DimensionError(InfoPruneError, ValueError):
    pass


class InputError(InfoPruneError, ValueError):
    pass


class StateError(InfoPruneError, RuntimeError):
    pass


class ConfigError(InfoPruneError, ValueError):
    pass


class CouplingError(InfoPruneError, ValueError):
    def __init__(self, message, group=()):
        super().__init__(message)
        self.group = tuple(group)


class DegenerateLayerError(InfoPruneError, ValueError):
    pass


class FormatError(InfoPruneError, ValueError):
    pass


class PlanningError(InfoPruneError, ValueError):
    def __init__(self, message, tightest=None):
        super().__init__(message)
        self.tightest = tightest


class CapacityError(InfoPruneError, ValueError):
    pass


class NormalizationError(InfoPruneError, ValueError):
    pass
