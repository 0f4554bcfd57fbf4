"""Exception base class and the verdict type returned by verifiers."""

from dataclasses import dataclass
from typing import Optional


class SiliconHealthError(Exception):
    """Base class for domain failures (CLI exit status 1)."""


class ConfigError(SiliconHealthError):
    """Invalid configuration or usage (CLI exit status 2)."""


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: Optional[str] = None

    def __bool__(self):
        return self.ok


ACCEPT = Verdict(True)


def reject(reason: str) -> Verdict:
    return Verdict(False, reason)
