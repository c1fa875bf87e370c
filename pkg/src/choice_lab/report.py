"""Check reports shared by every verification module.

A ``DerivativeReport`` compares a left-hand side (usually a numerical
derivative of a choice probability) with a right-hand side formula.  A
component passes when any of

* ``abs_err <= tol_abs``
* ``rel_err <= tol_rel``
* ``abs_err <= k_se * mc_se``

holds.  A report passes when every component passes, or at least one when
``combine="any"``.  Reports in ``"differ"`` mode invert the question: they
pass when the two sides are separated by more than ``k_se * mc_se`` (used for
negative controls and nonidentification gaps).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

EQUAL = "equal"
DIFFER = "differ"

STATUS_OK = "ok"
STATUS_SKIPPED = "skipped"
STATUS_PRECONDITION = "precondition_failed"

CSV_FIELDS = (
    "label", "x", "component", "lhs", "rhs", "mc_se",
    "abs_err", "rel_err", "pass", "config_hash", "seed", "draws",
)


def config_hash(doc) -> str:
    """Short stable hash of a JSON-serialisable document."""
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _fmt(value) -> str:
    # repr of a Python float round-trips exactly, so identical runs give identical bytes
    return repr(float(value))


@dataclass(eq=False)
class DerivativeReport:
    label: str
    x: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    mc_se: np.ndarray | None = None
    tol_rel: float = 0.01
    tol_abs: float = 1e-8
    k_se: float = 3.0
    mode: str = EQUAL
    status: str = STATUS_OK
    note: str = ""
    combine: str = "all"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, float))
        self.lhs = np.atleast_1d(np.asarray(self.lhs, float))
        self.rhs = np.atleast_1d(np.asarray(self.rhs, float))
        if self.lhs.shape != self.rhs.shape:
            raise ValueError(f"lhs shape {self.lhs.shape} != rhs shape {self.rhs.shape}")
        se = np.zeros_like(self.lhs) if self.mc_se is None else np.asarray(self.mc_se, float)
        self.mc_se = np.broadcast_to(se, self.lhs.shape).copy()
        if self.mode not in (EQUAL, DIFFER):
            raise ValueError(f"unknown report mode {self.mode!r}")
        if self.combine not in ("all", "any"):
            raise ValueError(f"unknown combine rule {self.combine!r}")

    @property
    def abs_err(self) -> np.ndarray:
        return np.abs(self.lhs - self.rhs)

    @property
    def rel_err(self) -> np.ndarray:
        denom = np.abs(self.rhs)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            rel = np.where(denom > 0, self.abs_err / denom, np.where(self.abs_err > 0, np.inf, 0.0))
        return rel

    @property
    def component_pass(self) -> np.ndarray:
        if self.status != STATUS_OK:
            return np.zeros(self.lhs.shape, bool)
        if self.mode == DIFFER:
            return self.abs_err > self.k_se * self.mc_se
        return (
            (self.abs_err <= self.tol_abs)
            | (self.rel_err <= self.tol_rel)
            | (self.abs_err <= self.k_se * self.mc_se)
        )

    @property
    def passed(self) -> bool:
        if self.status != STATUS_OK:
            return False
        reduce = np.any if self.combine == "any" else np.all
        return bool(reduce(self.component_pass))

    @property
    def counts_as_failure(self) -> bool:
        """Skipped checks and guarded preconditions are reported, not failed."""
        return self.status == STATUS_OK and not self.passed

    def rows(self) -> list[dict]:
        x_text = ";".join(_fmt(v) for v in self.x)
        out = []
        passed = self.component_pass
        for idx in np.ndindex(self.lhs.shape):
            out.append({
                "label": self.label,
                "x": x_text,
                "component": ".".join(str(i) for i in idx),
                "lhs": _fmt(self.lhs[idx]),
                "rhs": _fmt(self.rhs[idx]),
                "mc_se": _fmt(self.mc_se[idx]),
                "abs_err": _fmt(self.abs_err[idx]),
                "rel_err": _fmt(self.rel_err[idx]),
                "pass": self.status if self.status != STATUS_OK else str(bool(passed[idx])).lower(),
                "config_hash": str(self.metadata.get("config_hash", "")),
                "seed": str(self.metadata.get("seed", "")),
                "draws": str(self.metadata.get("draws", "")),
            })
        return out

    def summary(self) -> dict:
        return {
            "label": self.label,
            "x": self.x.tolist(),
            "lhs": self.lhs.tolist(),
            "rhs": self.rhs.tolist(),
            "mc_se": self.mc_se.tolist(),
            "max_abs_err": float(np.max(self.abs_err)),
            "max_rel_err": float(np.max(np.where(np.isfinite(self.rel_err), self.rel_err, -1.0)))
            if np.any(np.isfinite(self.rel_err)) else None,
            "mode": self.mode,
            "status": self.status,
            "pass": self.passed,
            "note": self.note,
            "metadata": self.metadata,
        }

    def with_metadata(self, **meta) -> "DerivativeReport":
        self.metadata = {**self.metadata, **meta}
        return self


def combined_se(*ses) -> np.ndarray:
    """Standard error of a difference of independent estimates."""
    return np.sqrt(sum(np.asarray(s, float) ** 2 for s in ses))


def reports_to_csv(reports: Iterable[DerivativeReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        writer.writerows(rep.rows())
    return buf.getvalue()


def reports_to_json(reports: Iterable[DerivativeReport]) -> str:
    reports = list(reports)
    doc = {
        "n_reports": len(reports),
        "n_pass": sum(r.passed for r in reports),
        "n_fail": sum(r.counts_as_failure for r in reports),
        "n_not_applicable": sum(r.status != STATUS_OK for r in reports),
        "reports": [r.summary() for r in reports],
    }
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def format_table(reports: Iterable[DerivativeReport]) -> str:
    """Plain-text summary, one line per report."""
    lines = [f"{'label':<28} {'x':<22} {'max_abs_err':>12} {'max_rel_err':>12} {'result':>20}"]
    for r in reports:
        x = ",".join(f"{v:.3g}" for v in r.x)
        rel = r.rel_err[np.isfinite(r.rel_err)]
        result = r.status if r.status != STATUS_OK else ("PASS" if r.passed else "FAIL")
        lines.append(
            f"{r.label:<28} {x:<22} {np.max(r.abs_err):>12.3e} "
            f"{(np.max(rel) if rel.size else float('nan')):>12.3e} {result:>20}"
        )
    return "\n".join(lines) + "\n"
