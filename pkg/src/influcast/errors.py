"""Exception hierarchy shared across the package.

Exit codes used by the CLI: 2 for configuration problems, 3 for data
problems, 4 for numerical failures.
"""


class InflucastError(Exception):
    exit_code = 1


class ConfigError(InflucastError):
    """Invalid configuration value or command-line flag."""

    exit_code = 2


class DataError(InflucastError):
    """Malformed or unusable input data."""

    exit_code = 3


class NumericalError(InflucastError):
    """A numerical procedure failed to produce a usable result."""

    exit_code = 4


class CascadeParseError(DataError):
    """Raised for malformed or rejected records in a cascade stream."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class TrainingDivergedError(NumericalError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: loss is not finite")


class EvaluationDomainError(DataError):
    """Raised when a model and an evaluation data set share no nodes."""

    def __init__(self, missing_nodes):
        self.missing_nodes = sorted(missing_nodes, key=str)
        preview = ", ".join(str(n) for n in self.missing_nodes[:10])
        more = "" if len(self.missing_nodes) <= 10 else f" (+{len(self.missing_nodes) - 10} more)"
        super().__init__(f"evaluation data has no overlap with the model; missing nodes: {preview}{more}")
