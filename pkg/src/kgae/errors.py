"""Exception types raised across the package."""


class KGAEError(Exception):
    pass


class DimensionError(KGAEError, ValueError):
    pass


class ContractError(KGAEError, RuntimeError):
    """A caller violated an operation's precondition."""


class ConfigError(KGAEError, ValueError):
    pass


class NumericError(KGAEError, ArithmeticError):
    pass


class ShortfallError(KGAEError, ValueError):
    def __init__(self, requested, found):
        super().__init__(f"requested {requested} phrases but only {found} distinct phrases were found")
        self.requested = requested
        self.found = found


class SchemaError(KGAEError, ValueError):
    pass


class LoadError(KGAEError, KeyError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("checkpoint is missing parameters: " + ", ".join(self.missing))

    def __str__(self):
        return self.args[0]
