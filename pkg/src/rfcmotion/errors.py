class ContractError(ValueError):
    """A call violated a documented precondition (shape, index, mode)."""


class ModelError(ValueError):
    pass


class ParseError(ModelError):
    pass


class StructureError(ModelError):
    pass


class ValidationError(ModelError):
    pass


class IntegrationDivergedError(FloatingPointError):
    """The simulated state became non-finite."""


class ConfigError(ValueError):
    pass
