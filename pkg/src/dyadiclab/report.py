"""Verification records shared by the checks, the suites and the CLI."""

from __future__ import annotations

import json
import math
import platform
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Optional


def _jsonable(x: Any) -> Any:
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}" if x.denominator != 1 else int(x.numerator)
    if isinstance(x, float):
        return x if math.isfinite(x) else str(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item") and callable(x.item):
        return _jsonable(x.item())
    return x


def _slack(lhs, rhs):
    try:
        lhs, rhs = float(lhs), float(rhs)
    except (TypeError, ValueError):
        return None
    if lhs == 0:
        return math.inf if rhs > 0 else None
    return rhs / lhs


def environment() -> dict:
    """Library versions that determine numerical output (no host or time data)."""
    import numpy
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__,
            "dyadiclab": __version__}


@dataclass
class CheckRecord:
    name: str
    ok: bool
    lhs: Any = None
    rhs: Any = None
    error: Any = None
    details: dict = field(default_factory=dict)
    kind: str = "exact"        # exact | bound | report-only
    slack: Any = None          # bound / measured for bound checks

    def to_json(self) -> dict:
        return _jsonable(asdict(self))


@dataclass
class VerificationReport:
    """An ordered list of named checks; ``ok`` is their conjunction."""

    title: str
    checks: list[CheckRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def failures(self) -> list[CheckRecord]:
        return [c for c in self.checks if not c.ok]

    def add(self, name: str, ok: bool, lhs=None, rhs=None, error=None, kind: Optional[str] = None,
            **details) -> CheckRecord:
        slack = details.pop("slack", None)
        if kind is None:
            kind = "bound" if rhs is not None else "exact"
        if slack is None and kind == "bound":
            slack = _slack(lhs, rhs)
        rec = CheckRecord(name, bool(ok), lhs, rhs, error, details, kind, slack)
        self.checks.append(rec)
        return rec

    def extend(self, other: "VerificationReport", prefix: Optional[str] = None) -> None:
        for c in other.checks:
            if prefix:
                c = CheckRecord(f"{prefix}/{c.name}", c.ok, c.lhs, c.rhs, c.error, c.details, c.kind, c.slack)
            self.checks.append(c)

    def summary(self) -> str:
        return f"{self.title}: {len(self.checks) - len(self.failures)}/{len(self.checks)} checks passed"

    def slack_summary(self) -> dict:
        """Per check family (name after any "prefix: " part), count, violations and minimal slack."""
        out: dict[str, dict] = {}
        for c in self.checks:
            if c.kind != "bound":
                continue
            fam = c.name.split("/")[-1].split(": ")[-1].strip()
            row = out.setdefault(fam, {"count": 0, "violations": 0, "min_slack": None})
            row["count"] += 1
            row["violations"] += 0 if c.ok else 1
            if c.slack is not None:
                s = float(c.slack)
                row["min_slack"] = s if row["min_slack"] is None else min(row["min_slack"], s)
        return out

    def to_json(self) -> dict:
        return {
            "title": self.title,
            "ok": self.ok,
            "num_checks": len(self.checks),
            "num_failures": len(self.failures),
            "meta": _jsonable(self.meta),
            "checks": [c.to_json() for c in self.checks],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def merge(title: str, reports: Iterable[VerificationReport]) -> VerificationReport:
    out = VerificationReport(title)
    for r in reports:
        out.extend(r, prefix=r.title)
    return out
