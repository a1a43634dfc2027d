"""Exception hierarchy.  The CLI maps each family to an exit code."""


class RelevalError(Exception):
    exit_code = 3


class InputError(RelevalError, ValueError):
    """Bad or inconsistent input data (exit code 1)."""

    exit_code = 1


class ProtocolViolation(InputError):
    """Annotation rounds that break the two-then-three collection protocol."""


class UnresolvedLabel(ProtocolViolation):
    """Rounds 1 and 2 disagree but no third round was collected."""


class JudgeError(RelevalError):
    """A single judgment could not be produced."""

    exit_code = 2

    def __init__(self, message: str, *, raw: str | None = None, attempts: int = 1):
        super().__init__(message)
        self.raw = raw
        self.attempts = attempts


class Unparseable(JudgeError):
    def __init__(self, raw: str, attempts: int = 1):
        super().__init__("unparseable", raw=raw, attempts=attempts)


class CacheMiss(JudgeError):
    def __init__(self, key: str):
        super().__init__("miss")
        self.key = key


class TransportError(JudgeError):
    """Remote call failed after the retry budget was spent."""


class InvariantViolation(RelevalError):
    exit_code = 3
