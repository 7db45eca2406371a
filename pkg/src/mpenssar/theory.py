"""Computable constants behind the order-selection consistency bound.

Only the explicit quantities are evaluated here: the Lipschitz constant
``K``, the exponential rates ``K1..K4``, the sample-size thresholds
``n1, n2, n3`` and the numeric value of the misselection bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .errors import ContractError, PreconditionViolatedError
from .signature import sig_dim

__all__ = ["TheoryConstants", "theory_constants", "misselection_bound", "BoundReport",
           "format_report"]

_INPUTS = ("K_Y", "K_X", "K_neighb", "alpha", "Q", "P", "sigma2", "L_gap")


def _s(P: int, m: int) -> int:
    # s_P(0) = 0 so that m* = 1 stays well defined
    return 0 if m == 0 else sig_dim(P, m)


@dataclass(frozen=True)
class TheoryConstants:
    K_Y: float
    K_X: float
    K_neighb: float
    alpha: float
    Q: int
    P: int
    sigma2: float
    L_gap: float
    m_star: int
    kappa: float
    K_pen: float
    K: float
    K1: float
    K2: float
    K3: float
    K4: float
    n1: int
    n2: int | None
    n3: int
    m: int
    delta: float | None = None

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_kappa(kappa: float) -> None:
    if not 0.0 < kappa < 0.5:
        raise ContractError(f"kappa must lie in (0, 1/2), got {kappa}")


def _ceil_int(x: float) -> int:
    if not math.isfinite(x):
        raise ContractError(f"threshold is not finite ({x}); inputs out of range")
    return max(1, math.ceil(x))


def theory_constants(K_Y, K_X, K_neighb, alpha, Q, P, sigma2, L_gap, *, m_star: int,
                     kappa: float = 0.4, K_pen: float = 1.0, m: int | None = None,
                     delta: float | None = None) -> TheoryConstants:
    """Evaluate ``K, K1..K4, n1, n2, n3``.

    ``m`` enters ``n2`` and ``n3`` and defaults to ``m_star - 1`` (with
    ``s_P(0) = 0``). ``n2`` is only computed when ``delta`` is given.
    """
    _check_kappa(kappa)
    vals = dict(K_Y=K_Y, K_X=K_X, K_neighb=K_neighb, alpha=alpha, Q=Q, P=P, sigma2=sigma2,
                L_gap=L_gap, K_pen=K_pen)
    for name, v in vals.items():
        # K_X only enters through exp(K_X), so zero is admissible
        lo_ok = v >= 0 if name == "K_X" else v > 0
        if not (math.isfinite(v) and lo_ok):
            raise ContractError(f"{name} must be positive and finite, got {v}")
    if m_star < 1:
        raise ContractError(f"m_star must be >= 1, got {m_star}")
    m = m_star - 1 if m is None else m
    if not 0 <= m < m_star:
        raise ContractError(f"m must satisfy 0 <= m < m_star, got {m}")
    P, Q = int(P), int(Q)

    eK = math.exp(K_X)
    A = K_neighb * K_Y * Q**1.5 + eK * alpha
    K = 2.0 * (K_Y + K_neighb * K_Y * Q**1.5 + eK * alpha)
    s_star, s_next = _s(P, m_star), _s(P, m_star + 1)
    c = 1.0 - math.sqrt(s_star / s_next)
    K1 = K_pen**2 * c**2 / (9216.0 * K**2 * A**2)
    K2 = K_pen**2 * c**2 / (8.0 * K_Y**4)
    K3 = c**2 * K_pen**2 / 8.0 * min(1.0 / K_Y**4, 1.0 / (1152.0 * K**2 * A**2))
    K4 = min(1.0 / (2304.0 * K**2 * A**2), 1.0 / (2.0 * K_Y**4))

    sqpi = math.sqrt(math.pi)
    base1 = ((math.sqrt(s_next) - math.sqrt(s_star)) / math.sqrt(s_next)) * K_pen / (
        864.0 * K * sqpi * (alpha * eK + K_neighb * K_Y * Q**2.5 / math.sqrt(s_next))
    )
    n1 = _ceil_int(base1 ** (1.0 / (kappa - 0.5)))

    inner = alpha * eK * math.sqrt(_s(P, m) * math.pi) + K_neighb * K_Y * Q**2.5 * sqpi
    n2 = None
    if delta is not None:
        if not delta > 0:
            raise ContractError(f"delta must be positive, got {delta}")
        n2 = _ceil_int((432.0 * K * inner) ** 2 / delta**2)

    t1 = 1728.0 * K * inner / L_gap
    t2 = 2.0 * K_pen * math.sqrt(s_star) / L_gap
    if t1**2 < 1.0:
        n3 = _ceil_int(t2 ** (1.0 / kappa))
    else:
        n3 = _ceil_int(max(t1, t2) ** (1.0 / kappa))

    return TheoryConstants(float(K_Y), float(K_X), float(K_neighb), float(alpha), Q, P,
                           float(sigma2), float(L_gap), int(m_star), float(kappa), float(K_pen),
                           K, K1, K2, K3, K4, n1, n2, n3, int(m), delta)


@dataclass(frozen=True)
class BoundReport:
    raw: float
    clamped: float
    first_term: float
    tail_sum: float
    remainder: float
    n: int
    tail_terms: int


def misselection_bound(c: TheoryConstants, n: int, *, tail_terms: int = 20,
                       check_thresholds: bool = True) -> BoundReport:
    """Upper bound on the probability of selecting a wrong order.

    The infinite tail over ``m > m*`` is cut after ``tail_terms`` terms;
    ``remainder`` is the next (first omitted) term.
    """
    _check_kappa(c.kappa)
    if n < 1 or tail_terms < 0:
        raise ContractError("n must be >= 1 and tail_terms >= 0")
    if check_thresholds and n < max(c.n1, c.n3):
        raise PreconditionViolatedError(n, c.n1, c.n3)
    first = 148.0 * c.m_star * math.exp(-n * c.K4 / 16.0 * c.L_gap**2)
    rate = c.K3 * n ** (1.0 - 2.0 * c.kappa)
    tail = 74.0 * math.fsum(
        math.exp(-rate * sig_dim(c.P, mm)) for mm in range(c.m_star + 1, c.m_star + tail_terms + 1)
    )
    rem = 74.0 * math.exp(-rate * sig_dim(c.P, c.m_star + tail_terms + 1))
    raw = first + tail
    return BoundReport(raw, min(1.0, max(0.0, raw)), first, tail, rem, int(n), int(tail_terms))


def format_report(c: TheoryConstants, bound: BoundReport | None = None) -> str:
    """INI-style report naming every input and derived constant."""
    lines = ["[inputs]"]
    for name in _INPUTS + ("m_star", "kappa", "K_pen", "m", "delta"):
        lines.append(f"{name} = {getattr(c, name)!r}")
    lines.append("")
    lines.append("[derived]")
    for name in ("K", "K1", "K2", "K3", "K4", "n1", "n2", "n3"):
        lines.append(f"{name} = {getattr(c, name)!r}")
    if bound is not None:
        lines += ["", "[bound]"]
        for name in ("n", "tail_terms", "raw", "clamped", "first_term", "tail_sum", "remainder"):
            lines.append(f"{name} = {getattr(bound, name)!r}")
    return "\n".join(lines) + "\n"
