"""Exception types shared across the simulator."""


class SimError(Exception):
    """Base class for every error raised by onionsim."""


class ParameterError(SimError, ValueError):
    pass


class GenerationError(SimError, RuntimeError):
    """A random construction failed after its retry budget."""


class NodeNotFound(SimError, LookupError):
    pass


class CollisionError(SimError, ValueError):
    pass


class PolicyError(SimError, ValueError):
    pass


class UndefinedMetric(SimError, ValueError):
    pass


class ReplacementImpossible(SimError, RuntimeError):
    """Every virtual of a host is soaped, so there is nobody to bootstrap from."""


class ConfigError(SimError, ValueError):
    """Experiment config failed validation; ``errors`` lists every problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
