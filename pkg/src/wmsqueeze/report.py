"""Result record shared by the analytic engines and the exact oracle."""

from dataclasses import dataclass, field, replace
from math import log10


def to_db(xi_sq):
    """Squeezing in decibels, ``-10 log10(xi_sq)`` (positive means squeezed)."""
    return -10.0 * log10(xi_sq)


@dataclass(frozen=True)
class SqueezingReport:
    xi_sq: float
    xi_db: float
    mean_pa: float
    success_prob: float
    enhancement_db_vs_qnd: float
    diagnostics: tuple = field(default=(), compare=False)

    @classmethod
    def build(cls, xi_sq, mean_pa=0.0, success_prob=1.0, qnd_xi_sq=None, diagnostics=()):
        enh = float("nan") if qnd_xi_sq is None else 10.0 * log10(qnd_xi_sq / xi_sq)
        return cls(
            xi_sq=float(xi_sq),
            xi_db=to_db(xi_sq),
            mean_pa=float(mean_pa),
            success_prob=float(success_prob),
            enhancement_db_vs_qnd=enh,
            diagnostics=tuple(diagnostics),
        )

    def with_diagnostics(self, *flags):
        return replace(self, diagnostics=self.diagnostics + tuple(flags))

    def with_success_prob(self, p):
        return replace(self, success_prob=float(p))
