"""Closed-form utility and privacy analytics for the longitudinal protocols."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ue_params
from .errors import DegenerateMechanismError, ParameterError
from .longitudinal import PrivacyBudget
from .server import LongitudinalParams, lgrr_params, loloha_params, losue_params, lsue_params


@dataclass(frozen=True)
class VarianceInput:
    p1: float
    q1: float
    p2: float
    q2: float
    n: int
    f: float = 0.0

    def __post_init__(self):
        for name in ("p1", "q1", "p2", "q2"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ParameterError(f"{name} must be a probability, got {value}")
        if self.p1 == self.q1 or self.p2 == self.q2:
            raise DegenerateMechanismError("p == q in one of the rounds")
        if self.n < 1:
            raise ParameterError("n must be at least 1")
        if not 0 <= self.f <= 1:
            raise ParameterError("f must lie in [0, 1]")


def _variance(p1, q1, p2, q2, n, f):
    gamma = f * (2 * p1 * p2 - 2 * p1 * q2 + 2 * q2 - 1) + p2 * q1 + q2 * (1 - q1)
    return gamma * (1 - gamma) / (n * (p1 - q1) ** 2 * (p2 - q2) ** 2)


def exact_variance(inp: VarianceInput) -> float:
    """Variance of the two-round estimator at true frequency ``inp.f``."""
    return _variance(inp.p1, inp.q1, inp.p2, inp.q2, inp.n, inp.f)


def approx_variance(p1: float, q1: float, p2: float, q2: float, n: int) -> float:
    """Variance at f = 0, the usual proxy for comparing protocols."""
    return exact_variance(VarianceInput(p1, q1, p2, q2, n, 0.0))


def losue_closed_form_variance(eps_1: float, n: int) -> float:
    """L-OSUE approximate variance 4 e^eps_1 / (n (e^eps_1 - 1)^2)."""
    e1 = math.exp(eps_1)
    return 4 * e1 / (n * (e1 - 1) ** 2)


def dbit_approx_variance(b: int, d: int, n: int, eps_inf: float) -> float:
    """Compact dBitFlipPM approximate variance b / (2 d n sinh(eps_inf / 2))."""
    return b / (2 * d * n * math.sinh(eps_inf / 2))


def dbit_variance(b: int, d: int, n: int, eps_inf: float, f: float = 0.0) -> float:
    """Variance of the dBitFlipPM bucket estimator with effective size n d / b.

    Each user reports a given bucket's bit with probability d / b, so the
    count is binomial with success probability r = (d / b)(q + f (p - q)).
    """
    params = ue_params(eps_inf, b, "symmetric")
    p, q = params.p, params.q
    r = d / b * (q + f * (p - q))
    n_eff = n * d / b
    return n * r * (1 - r) / (n_eff * (p - q)) ** 2


PROTOCOL_ALIASES = {
    "rappor": "lsue",
    "lsue": "lsue",
    "l-sue": "lsue",
    "losue": "losue",
    "l-osue": "losue",
    "lgrr": "lgrr",
    "l-grr": "lgrr",
    "loloha": "loloha",
    "biloloha": "biloloha",
    "ololoha": "ololoha",
    "dbitflippm": "dbitflippm",
}


def canonical_protocol(name: str) -> str:
    try:
        return PROTOCOL_ALIASES[name.lower()]
    except KeyError:
        raise ParameterError(f"unknown protocol {name!r}") from None


def resolve_g(protocol: str, budget: PrivacyBudget, g: int | None = None) -> int:
    """g for the LOLOHA variants: 2, the optimal value, or the given one."""
    protocol = canonical_protocol(protocol)
    if protocol == "biloloha":
        return 2
    if protocol == "ololoha":
        return optimal_g(budget.eps_inf, budget.alpha)
    if g is None:
        raise ParameterError("plain LOLOHA needs an explicit g")
    return int(g)


def channel_params(protocol: str, budget: PrivacyBudget, k: int | None = None,
                   g: int | None = None) -> LongitudinalParams:
    """Estimator parameters (p1, q1, p2, q2) for any two-round protocol."""
    protocol = canonical_protocol(protocol)
    if protocol in ("loloha", "biloloha", "ololoha"):
        return loloha_params(resolve_g(protocol, budget, g), budget)
    if k is None:
        raise ParameterError(f"{protocol} needs the domain size k")
    if protocol == "lsue":
        return lsue_params(k, budget)
    if protocol == "losue":
        return losue_params(k, budget)
    if protocol == "lgrr":
        return lgrr_params(k, budget)
    raise ParameterError(f"{protocol} has no two-round channel")


def protocol_approx_variance(protocol: str, eps_inf: float, alpha: float, n: int,
                             k: int | None = None, g: int | None = None) -> float:
    budget = PrivacyBudget.from_alpha(eps_inf, alpha)
    prm = channel_params(protocol, budget, k=k, g=g)
    return approx_variance(prm.p1, prm.q1, prm.p2, prm.q2, n)


def _optimal_g_inner(eps_inf: float, alpha: float) -> float:
    if not eps_inf > 0:
        raise ParameterError(f"eps_inf must be positive, got {eps_inf}")
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    a = math.exp(eps_inf)
    b = math.exp(alpha * eps_inf)
    if a == b:
        raise ParameterError("a == b: eps_1 equals eps_inf numerically")
    disc = a**4 - 14 * a**2 + 12 * a * b * (1 - a * b) + 12 * a**3 * b + 1
    if disc < 0:
        raise ParameterError(f"negative discriminant {disc} at eps_inf={eps_inf}, alpha={alpha}")
    return (1 - a**2 + math.sqrt(disc)) / (6 * (a - b))


def optimal_g_continuous(eps_inf: float, alpha: float) -> float:
    """Real-valued stationary point of the LOLOHA approximate variance in g."""
    return 1 + _optimal_g_inner(eps_inf, alpha)


def optimal_g(eps_inf: float, alpha: float) -> int:
    """Variance-minimizing integer g (closed form, rounded half up), at least 2."""
    inner = _optimal_g_inner(eps_inf, alpha)
    return 1 + max(1, math.floor(inner + 0.5))


def brute_force_g(eps_inf: float, alpha: float, g_max: int | None = None) -> int:
    """Smallest g in 2..g_max minimizing the LOLOHA approximate variance.

    n only scales the variance, so it is fixed to 1.
    """
    if g_max is None:
        g_max = max(500, 2 * math.floor(math.exp(eps_inf)))
    budget = PrivacyBudget.from_alpha(eps_inf, alpha)
    gs = np.arange(2, g_max + 1)
    variances = np.array([
        approx_variance(*_astuple(loloha_params(int(g), budget)), 1) for g in gs
    ])
    return int(gs[np.argmin(variances)])


def _astuple(prm: LongitudinalParams):
    return prm.p1, prm.q1, prm.p2, prm.q2


@dataclass(frozen=True)
class OptimalGCheck:
    eps_inf: float
    alpha: float
    g_formula: int
    g_brute: int
    g_continuous: float
    status: str  # "match", "rounding-boundary" or "mismatch"


def check_optimal_g(eps_inf: float, alpha: float, g_max: int | None = None) -> OptimalGCheck:
    """Compare the closed form against brute force.

    A disagreement counts as a rounding boundary when both answers are the
    two integers bracketing the continuous optimum.
    """
    g_formula = optimal_g(eps_inf, alpha)
    g_brute = brute_force_g(eps_inf, alpha, g_max)
    cont = optimal_g_continuous(eps_inf, alpha)
    if g_formula == g_brute:
        status = "match"
    elif {g_formula, g_brute} <= {max(2, math.floor(cont)), max(2, math.ceil(cont))}:
        status = "rounding-boundary"
    else:
        status = "mismatch"
    return OptimalGCheck(eps_inf, alpha, g_formula, g_brute, cont, status)


def utility_bound(n: int, k: int, beta: float, p1: float, q1_prime: float,
                  p2: float, q2: float) -> float:
    """Max-over-values absolute error bound holding w.p. at least 1 - beta."""
    if not 0 < beta < 1:
        raise ParameterError(f"beta must lie in (0, 1), got {beta}")
    scale = (p1 - q1_prime) * (p2 - q2)
    if scale <= 0:
        raise DegenerateMechanismError("channel carries no signal")
    return math.sqrt(k / (4 * n * beta * scale))


@dataclass(frozen=True)
class ComparisonRow:
    protocol: str
    comm_bits: int
    server_time: str
    budget_multiplier: int  # privacy-loss cap in units of eps_inf


def comparison_table(k: int, g: int, b: int, d: int) -> list[ComparisonRow]:
    """Communication, server time and privacy-loss cap of each protocol."""
    if not (2 <= g and 2 <= k and 2 <= b and 1 <= d <= b):
        raise ParameterError("invalid sizes")
    return [
        ComparisonRow("LOLOHA", math.ceil(math.log2(g)), "n*k", g),
        ComparisonRow("L-GRR", math.ceil(math.log2(k)), "n", k),
        ComparisonRow("RAPPOR", k, "n*k", k),
        ComparisonRow("L-OSUE", k, "n*k", k),
        ComparisonRow("dBitFlipPM", d, "n*b", min(d + 1, b)),
    ]
