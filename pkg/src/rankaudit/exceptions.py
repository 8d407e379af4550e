"""Exception hierarchy. Exit codes used by the CLI hang off the class."""


class RankAuditError(Exception):
    exit_code = 1


class ConfigError(RankAuditError, ValueError):
    exit_code = 2


class DataError(RankAuditError, ValueError):
    exit_code = 3


class SearchFailedError(RankAuditError, RuntimeError):
    exit_code = 4


class UndefinedMetricError(RankAuditError, ValueError):
    """A per-user metric has no defined value for this user."""


class UndefinedGroupError(RankAuditError, ValueError):
    """No member of a group has a defined value for the metric."""
