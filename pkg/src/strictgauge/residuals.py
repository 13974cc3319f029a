"""Named residual families and the verdicts built from them."""
from __future__ import annotations

from dataclasses import dataclass, field

from . import expr as ex
from .calculus import components_of, field_residual


@dataclass
class ResidualFamily:
    name: str
    residuals: dict
    verdict: bool | None = None
    worst: float = 0.0
    witness: dict | None = None
    failing: list = field(default_factory=list)

    @property
    def passed(self):
        return self.verdict is True

    def summary(self):
        first = None
        if self.failing:
            key, comp = self.failing[0]
            t = self.residuals[key]
            first = {"key": _key_text(key), "component": list(comp), "value": ex.to_text(ex.canonical(components_of(t)[comp]))} \
                if not ex.has_step(components_of(t)[comp]) else {"key": _key_text(key), "component": list(comp)}
        return {
            "verdict": {True: "pass", False: "fail", None: "inconclusive"}[self.verdict],
            "components": len(self.residuals),
            "failing": [[_key_text(k), list(c)] for k, c in self.failing],
            "worst_sampled": round(float(self.worst), 15),
            "witness": self.witness,
            "first_failure": first,
        }


def _key_text(key):
    if isinstance(key, tuple):
        return ",".join(str(k) for k in key)
    return str(key)


def evaluate_family(name, residuals, chart, mode="auto", tol=1e-9, points=32, pts=None):
    """Check every residual field of a family against zero."""
    fam = ResidualFamily(name, dict(residuals))
    verdict = True
    for key, t in fam.residuals.items():
        ok, worst, witness, failing = field_residual(t, chart, mode, tol, points, pts)
        fam.worst = max(fam.worst, worst)
        if ok is False:
            verdict = False
            fam.failing.extend((key, comp) for comp in failing)
            if fam.witness is None:
                fam.witness = witness
        elif ok is None and verdict is True:
            verdict = None
    fam.verdict = verdict
    return fam


@dataclass
class ConditionReport:
    families: dict = field(default_factory=dict)
    strictness: str = "not-checked"
    strictness_residuals: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def add(self, fam):
        self.families[fam.name] = fam
        return fam

    @property
    def overall(self):
        if all(f.verdict is True for f in self.families.values()):
            return "gauging-pass"
        return "fail"

    @property
    def passed(self):
        return self.overall == "gauging-pass"

    def verdict(self, name):
        return self.families[name].verdict

    def to_dict(self):
        return {
            "overall": self.overall,
            "strictness": self.strictness,
            "conditions": {k: f.summary() for k, f in sorted(self.families.items())},
            "notes": list(self.notes),
        }
