class Error(Exception):
    pass


class PrepareError(Error):
    pass


class DimensionError(Error):
    pass


class DomainError(Error, ValueError):
    pass


class BudgetError(Error):
    pass


class NotCollapsedError(Error):
    pass


class OutputExistsError(Error):
    pass
