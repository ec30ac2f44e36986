"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (bad shape, level, index...)."""


class NumericError(FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, level, epoch, detail=""):
        self.level = level
        self.epoch = epoch
        msg = f"loss diverged at level {level}, epoch {epoch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class IngestionError(ValueError):
    """A dataset file is malformed."""

    def __init__(self, path, offset, reason):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path} (offset {offset}): {reason}")


class InfeasibleRateError(RuntimeError):
    """No coding level satisfies the latency budget."""

    def __init__(self, min_tau, tau):
        self.min_tau = min_tau
        self.tau = tau
        super().__init__(
            f"no feasible coding level for tau={tau:g} s; "
            f"level 1 needs tau >= {min_tau:g} s"
        )


class ConfigError(ValueError):
    """An experiment configuration failed validation."""
