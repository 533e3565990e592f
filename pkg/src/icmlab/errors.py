"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: contract violations exit 2,
numeric aborts exit 3, corrupt serialized data exits 4.
"""


class IcmError(Exception):
    """Base class for all package errors."""


class ContractError(IcmError):
    """A documented precondition or usage rule was violated."""


class ShapeError(ContractError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op: str, shape_a, shape_b, detail: str = ""):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        msg = f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericError(IcmError):
    """A non-finite value appeared where the pipeline requires finite math."""


class TrainAbort(NumericError):
    """Training hit a non-finite loss and stopped."""

    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch = epoch
        self.batch = batch
        msg = f"non-finite loss at epoch {epoch}, batch {batch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class FormatError(IcmError):
    """A serialized artifact does not follow its documented byte format."""


class PnmError(ContractError):
    """Malformed PPM/PGM input (reported with a byte offset)."""


class BitstreamError(FormatError):
    """Corrupt, truncated, or mislabeled compressed bitstream."""


class CheckpointError(FormatError):
    """Corrupt or truncated model checkpoint."""
