"""Exception hierarchy shared by all stages.

Each class carries the CLI exit code used when it escapes to the command line.
"""


class DiecError(Exception):
    exit_code = 1


class ParameterError(DiecError, ValueError):
    exit_code = 2


class ShapeError(DiecError, ValueError):
    exit_code = 2


class FormatError(DiecError, ValueError):
    exit_code = 3


class SingularityError(DiecError, ArithmeticError):
    exit_code = 4


class DegenerateClusterError(DiecError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, clusters=()):
        super().__init__(message)
        self.clusters = tuple(clusters)
