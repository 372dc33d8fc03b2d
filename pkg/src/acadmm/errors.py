"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """A vector, shard, or parameter violates an interface contract."""


class ParseError(ValueError):
    """Malformed LIBSVM input; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ProtocolError(RuntimeError):
    """Coordinator/worker message contract violation (missing or duplicate node)."""


class SubproblemError(RuntimeError):
    """A worker subproblem failed; aborts the run with node id and iteration."""

    def __init__(self, node: int, iteration: int, message: str):
        super().__init__(f"node {node}, iteration {iteration}: {message}")
        self.node = node
        self.iteration = iteration
