"""Exception types shared across the package."""


class DivergenceError(RuntimeError):
    """A simulated quantity left the finite range.

    ``time`` is the simulation time (s) or step index at which the failure
    was detected, when known.
    """

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class SolvabilityError(ValueError):
    """The regression problem has no unique solution."""


class ConfigError(ValueError):
    """An experiment or parameter file failed validation.

    ``problems`` lists one ``(field, message)`` pair per offending field.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.problems))
