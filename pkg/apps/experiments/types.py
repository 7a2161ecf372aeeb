from dataclasses import dataclass, field
from typing import Any, Optional


@dataclass(frozen=True)
class Failure:
    """One declared assertion that did not hold."""

    check: str
    message: str
    value: Optional[float] = None
    tolerance: Optional[float] = None

    def as_dict(self) -> dict[str, Any]:
        return {"check": self.check, "message": self.message, "value": self.value, "tolerance": self.tolerance}


@dataclass
class RunResult:
    subcommand: str
    files: list[str] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    failures: list[Failure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def fail(self, check: str, message: str, value: Optional[float] = None, tolerance: Optional[float] = None):
        self.failures.append(Failure(check=check, message=message, value=value, tolerance=tolerance))

    def merge(self, other: "RunResult") -> None:
        self.files.extend(other.files)
        self.summary[other.subcommand] = other.summary
        self.failures.extend(other.failures)
