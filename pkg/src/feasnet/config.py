"""Shared numeric tolerances and the infinity sentinel.

Every module routes its tolerances through one :class:`NumericConfig` so the
test suite has a single source of truth.
"""

from dataclasses import dataclass

# Bounds with magnitude >= INF are treated as absent.  The sentinel never
# enters a big-M constant; encodings compute their own certified bounds.
INF = 1e20


@dataclass(frozen=True)
class NumericConfig:
    feasibility_tol: float = 1e-7
    equality_tol: float = 1e-9
    optimality_tol: float = 1e-6
    int_tol: float = 1e-6

    def require_finite(self, arr, name: str) -> None:
        import numpy as np

        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contains non-finite entries")


DEFAULT_CONFIG = NumericConfig()


def is_free(bound: float) -> bool:
    """True when a scalar bound is the +/-INF sentinel (or beyond)."""
    return abs(bound) >= INF
