"""Error types shared across the solvers and the experiment harness."""


class SolverError(RuntimeError):
    """An iterative solver produced a non-finite value or broke down.

    The message names the offending stage (u-step, d-step, multiplier
    update, conjugate gradient iteration, ...) so failures are traceable.
    """


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""
