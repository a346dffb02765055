class EmdRegError(Exception):
    """
    Base class of every error raised by emdreg.

    The command line maps each family onto an exit code, and reports the
    module-qualified ``code`` of the concrete class, e.g. ``lasso.NoConvergence``
    or ``cli.utils.ParseError``.
    """

    exit_code = 1

    @property
    def code(self) -> str:
        module = self.__class__.__module__
        if module.startswith("emdreg."):
            module = module[len("emdreg.") :]
        return f"{module}.{self.__class__.__name__}"


class ConfigError(EmdRegError):
    exit_code = 2


class DataError(EmdRegError):
    exit_code = 3


class NumericalError(EmdRegError):
    exit_code = 4
