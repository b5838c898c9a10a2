class ByzSimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(ByzSimError, ValueError):
    pass


class UnsupportedMetricError(ByzSimError):
    pass


class DataFormatError(ByzSimError):
    pass


class TopologyError(ByzSimError):
    pass


class NoPathError(TopologyError):
    pass


class RuleInapplicableError(ByzSimError):
    pass


class AttackError(ByzSimError):
    pass
