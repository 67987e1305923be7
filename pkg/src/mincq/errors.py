"""Exception types shared across the package."""


class MincqError(Exception):
    """Base class for all package errors."""


class InvalidProblem(MincqError):
    """QP data is malformed: dimension mismatch, non-PSD quadratic, bad bounds."""


class OracleTooLarge(MincqError):
    """Brute-force enumeration requested on a problem with more than 3 variables."""


class SolverFailure(MincqError):
    """The QP backend stopped without certifying optimality."""


class DimensionError(MincqError):
    """Vector/matrix sizes do not line up."""


class InvalidMargin(MincqError):
    """Target margin must be strictly positive."""


class MarginInfeasible(MincqError):
    """The margin equality cannot be met inside the weight box.

    Carries the largest first margin moment any feasible weighting can reach.
    """

    def __init__(self, mu: float, max_achievable: float):
        self.mu = mu
        self.max_achievable = max_achievable
        super().__init__(
            f"margin {mu!r} infeasible; maximum achievable first moment "
            f"is {max_achievable!r}"
        )


class ClassMissing(MincqError):
    """Ranking losses need at least one positive and one negative example."""


class PairwiseTooLarge(MincqError):
    """m+ * m- exceeds the slack-variable guard for the full pairwise program."""


class NoPositives(MincqError):
    """Average precision is undefined without positive examples."""


class DegenerateWeights(MincqError):
    """All per-voter average precisions are zero; weights cannot be normalized."""


class RankOutOfRange(MincqError):
    """Precision@j requested for j outside 1..m."""


class EmptyInput(MincqError):
    """An aggregate was requested over an empty collection."""


class NoFeasibleCell(MincqError):
    """Every grid cell of a cross-validation search was infeasible."""


class ParseError(MincqError):
    """A CSV cell could not be parsed; carries row and column."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        if row is not None or column is not None:
            message = f"{message} (row {row}, column {column!r})"
        super().__init__(message)


class InvalidValue(MincqError):
    """A parsed value is NaN/inf or an out-of-domain label."""


class SchemaError(MincqError):
    """CSV header is unusable: duplicate or missing columns."""


class UnsupportedSchema(MincqError):
    """A model file has an unknown schema version or missing fields."""
