"""Exception types shared across the package.

The CLI maps these onto exit codes: input problems (``DataError``) exit 2,
artifact mismatches exit 3 and numeric failures exit 4.
"""


class DataError(ValueError):
    """Bad input data or configuration."""


class ParseError(DataError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class ValidationError(DataError):
    pass


class UnsplittableError(DataError):
    """A user has too few interactions for a warmup/mask/target split."""


class SamplingError(DataError):
    """Triplet sampling prerequisites are not met."""


class ArtifactMismatch(RuntimeError):
    """A model, trace or shortlist was produced by a different model version."""


class NumericalError(ArithmeticError):
    pass
