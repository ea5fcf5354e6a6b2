"""Verification reports: one entry per checked condition, merged by worst margin."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConditionResult:
    """Outcome of one condition.

    ``worst_margin`` is signed: nonnegative means satisfied at the tightest
    sample, negative is the size of the worst violation.  ``witness`` holds
    the sample (or grid point) attaining it.
    """

    name: str
    passed: bool
    worst_margin: float
    witness: dict | None = None
    checked: int = 0
    detail: str = ""

    def witness_text(self):
        if not self.witness:
            return "-"
        parts = []
        for k, v in self.witness.items():
            arr = np.atleast_1d(np.asarray(v, dtype=float))
            parts.append(f"{k}=" + ("[" + ",".join(f"{a:.6g}" for a in arr) + "]" if arr.size != 1 else f"{arr[0]:.6g}"))
        return " ".join(parts)


@dataclass
class Report:
    title: str
    results: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def __bool__(self):
        return self.passed

    def __getitem__(self, name):
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def add(self, result):
        self.results.append(result)
        return result

    def extend(self, other):
        self.results.extend(other.results)
        return self

    def first_failure(self):
        return next((r for r in self.results if not r.passed), None)

    def to_kv(self):
        """Machine-readable ``key: value`` lines."""
        lines = [f"report: {self.title}", f"passed: {str(self.passed).lower()}"]
        for k, v in self.meta.items():
            lines.append(f"meta.{k}: {v}")
        for r in self.results:
            p = f"{self.title}.{r.name}"
            lines.append(f"{p}.passed: {str(r.passed).lower()}")
            lines.append(f"{p}.worst_margin: {_num(r.worst_margin)}")
            lines.append(f"{p}.checked: {r.checked}")
            lines.append(f"{p}.witness: {r.witness_text()}")
            if r.detail:
                lines.append(f"{p}.detail: {r.detail}")
        return "\n".join(lines) + "\n"

    def to_text(self):
        """Human-readable table."""
        rows = [(r.name, "PASS" if r.passed else "FAIL", _num(r.worst_margin), str(r.checked), r.witness_text())
                for r in self.results]
        head = ("condition", "status", "worst margin", "checked", "witness")
        widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(head)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        out = [f"== {self.title} ==", fmt.format(*head), fmt.format(*("-" * w for w in widths))]
        out += [fmt.format(*row) for row in rows]
        for k, v in self.meta.items():
            out.append(f"{k}: {v}")
        out.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(out) + "\n"


def _num(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{v:.6g}"
