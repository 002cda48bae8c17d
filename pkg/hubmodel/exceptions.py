class HubModelError(Exception):
    """Base class for errors raised by the hub model library."""


class InvalidParameterError(HubModelError, ValueError):
    pass


class UndefinedInputError(HubModelError, ValueError):
    pass


class ImpossibleDataError(HubModelError):
    """The observed groups have probability zero under the given parameters."""

    def __init__(self, t, message=None):
        self.t = t
        super().__init__(
            message or f"Groups are impossible under the parameters at t={t}"
        )


class NumericalFailureError(HubModelError):
    def __init__(self, parameter, message=None):
        self.parameter = parameter
        super().__init__(
            message or f"Non-finite expected log-likelihood while updating {parameter}"
        )


class FormatError(HubModelError, ValueError):
    """A data file could not be parsed. ``line`` is 1-based."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where = f"{where}{line}: " if where else f"line {line}: "
        elif where:
            where = f"{where} "
        super().__init__(f"{where}{message}")


class BootstrapError(HubModelError):
    pass
