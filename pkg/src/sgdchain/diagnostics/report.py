"""Diagnostics report assembly and serialisation (JSON, flat CSV, text summary)."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .checks import BoundCheck
from .claims import resolve
from .estimators import ConcentrationEstimate

CSV_FIELDS = ["claim_id", "empirical", "bound", "lower", "relation", "margin", "pass", "mc_error", "allowance",
              "flags", "notes"]


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null, tuples to lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


@dataclass
class DiagnosticsReport:
    spec_summary: dict[str, Any]
    beta: float | list[float] | None
    checks: list[BoundCheck] = field(default_factory=list)
    estimates: list[ConcentrationEstimate] = field(default_factory=list)
    fits: dict[str, Any] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)
    kind: str = ""
    notes: list[str] = field(default_factory=list)

    def add(self, items) -> None:
        if isinstance(items, BoundCheck):
            items = [items]
        for c in items:
            resolve(c.claim_id)
            self.checks.append(c)
            if c.estimate is not None:
                self.estimates.append(c.estimate)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[BoundCheck]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self, include_data: bool = True) -> dict[str, Any]:
        checks = []
        for c in self.checks:
            d = c.to_dict()
            if include_data and c.data:
                d["data"] = c.data
            checks.append(d)
        return _clean({
            "kind": self.kind,
            "spec": self.spec_summary,
            "beta": self.beta,
            "all_passed": self.passed,
            "n_checks": len(self.checks),
            "n_failed": len(self.failures),
            "checks": checks,
            "estimates": [e.to_dict() for e in self.estimates],
            "fits": self.fits,
            "provenance": self.provenance,
            "notes": self.notes,
        })

    def to_json(self, timestamp: bool = True) -> str:
        doc = self.to_dict()
        if timestamp:
            doc["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for c in self.checks:
            d = _clean(c.to_dict())
            d["flags"] = ";".join(d["flags"])
            d = {k: ("" if v is None else (repr(v) if isinstance(v, float) else v)) for k, v in d.items()}
            w.writerow(d)
        return buf.getvalue()

    def summary_lines(self) -> list[str]:
        lines = []
        for c in self.checks:
            status = "INFO" if c.relation == "info" else ("PASS" if c.passed else "FAIL")
            rel = {"le": "<=", "eq": "==", "in": "in", "info": "~"}[c.relation]
            if c.relation == "in":
                target = f"[{c.lower:.6g}, {c.bound:.6g}]"
            else:
                target = f"{c.bound:.6g}"
            extra = f" (+/- {c.allowance:.3g})" if c.allowance else ""
            flags = f" [{', '.join(c.flags)}]" if c.flags else ""
            lines.append(f"{status} {c.claim_id}: {c.empirical:.6g} {rel} {target}{extra}{flags}")
        return lines

    def summary(self) -> str:
        head = f"{self.kind}: {len(self.checks)} checks, {len(self.failures)} failed"
        return "\n".join([head] + self.summary_lines()) + "\n"


def strip_timestamp(text: str) -> str:
    """Report JSON without its timestamp field, for determinism comparisons."""
    doc = json.loads(text)
    doc.pop("timestamp", None)
    return json.dumps(doc, sort_keys=True, indent=2)
