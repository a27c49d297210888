"""Uniform check reports: one record per verified identity."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class CheckReport:
    check: str
    parameters: dict
    status: str                      # "pass" or "fail"
    max_residual: str = "0"
    residuals_by_cutoff: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_obj(self) -> dict:
        return {
            "check": self.check,
            "parameters": self.parameters,
            "status": self.status,
            "max_residual": self.max_residual,
            "residuals_by_cutoff": self.residuals_by_cutoff,
            "failures": self.failures,
        }


def exact_report(check: str, parameters: dict, failures: list) -> CheckReport:
    return CheckReport(
        check=check,
        parameters=parameters,
        status="fail" if failures else "pass",
        max_residual="nonzero" if failures else "0",
        failures=failures,
    )
