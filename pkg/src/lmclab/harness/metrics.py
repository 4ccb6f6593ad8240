from __future__ import annotations

from ..errors import DomainError


def harmonic_mean(a: float, b: float) -> float:
    """``2ab / (a + b)`` for non-negative ``a``, ``b`` not both zero."""
    a, b = float(a), float(b)
    if a < 0 or b < 0:
        raise DomainError(f"harmonic mean needs non-negative inputs, got {a}, {b}")
    if a + b == 0:
        raise DomainError("harmonic mean is undefined when both inputs are 0")
    return 2.0 * a * b / (a + b)
