"""Exception types raised across the package."""


class PatchTrajError(Exception):
    """Base class for all package errors."""


class ConfigError(PatchTrajError, ValueError):
    """Invalid configuration or out-of-range argument."""


class ParseError(PatchTrajError, ValueError):
    """Malformed record in a trajectory file."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class ContractError(PatchTrajError, ValueError):
    """Tensor shapes that violate an operation's contract."""


class TrainingDiverged(PatchTrajError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, batch_index: int, seed: int, dump_path=None):
        self.epoch = epoch
        self.batch_index = batch_index
        self.seed = seed
        self.dump_path = dump_path
        msg = f"non-finite loss at epoch {epoch}, batch {batch_index} (seed {seed})"
        if dump_path is not None:
            msg += f"; batch dumped to {dump_path}"
        super().__init__(msg)
