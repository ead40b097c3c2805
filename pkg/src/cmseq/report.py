from dataclasses import dataclass, field
from typing import Any, Hashable, Optional


@dataclass
class Check:
    name: str
    passed: Optional[bool]
    residuals: dict[Hashable, float] = field(default_factory=dict)
    tolerance: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ""

    @property
    def residual(self) -> float:
        return max(self.residuals.values(), default=0.0)

    def __bool__(self):
        # skipped checks count as successful
        return self.passed is not False

    def to_dict(self) -> dict[str, Any]:
        info: dict[str, Any] = {'passed': self.passed,
                                'residual': self.residual,
                                'residuals': {str(key): value for key, value in self.residuals.items()}}
        if self.tolerance is not None:
            info['tolerance'] = self.tolerance
        if self.threshold is not None:
            info['threshold'] = self.threshold
        if self.detail:
            info['detail'] = self.detail
        return info


class Report(list[Check]):
    __slots__ = 'title', 'summary'

    def __init__(self, *args, title: str = "", summary: Optional[dict[str, Any]] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.title = title
        self.summary: dict[str, Any] = summary or {}

    def __bool__(self):
        return all(self)

    def __getitem__(self, key):
        if isinstance(key, str):
            try:
                return next(check for check in self if check.name == key)
            except StopIteration as exc:
                raise KeyError(key) from exc
        return super().__getitem__(key)

    def to_dict(self) -> dict[str, Any]:
        return {**self.summary,
                'passed': bool(self),
                'residuals': {check.name: check.residual for check in self},
                'checks': {check.name: check.to_dict() for check in self}}
