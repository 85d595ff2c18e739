"""Closed-form bound evaluators.

The universal constants that only have an existence proof (K, K', C4, C5, ...)
are plain configuration here, defaulting to 1, and are echoed in every report.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .binproc import c1_constant
from .model import TransitionModel


@dataclass(frozen=True)
class BoundInputs:
    eps: float
    eps0: float
    beta: float = 0.0
    phi: float = 1.0
    kappa: float = 2.0
    gamma: float = 1.0
    C4: float = 1.0
    C5: float = 1.0

    def __post_init__(self):
        if not 0 < self.eps <= self.eps0 < 1:
            raise ValueError(f"need 0 < eps <= eps0 < 1, got eps={self.eps}, eps0={self.eps0}")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.phi < 1 or self.beta < 0:
            raise ValueError("need phi >= 1 and beta >= 0")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.C4 <= 0 or self.C5 <= 0:
            raise ValueError("C4 and C5 must be positive")

    @property
    def q(self) -> float:
        return 1.0 - self.eps

    @property
    def q0(self) -> float:
        return 1.0 - self.eps0

    @classmethod
    def from_model(cls, model: TransitionModel, eps0: float | None = None, **consts):
        eps = model.epsilon
        return cls(
            eps=eps,
            eps0=eps if eps0 is None else eps0,
            beta=model.space.beta,
            phi=model.space.phi,
            kappa=model.kappa,
            gamma=model.gamma,
            **consts,
        )

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(q=self.q, q0=self.q0)
        return out


def _radical(inp: BoundInputs) -> float:
    ratio = max(inp.kappa, 2 * inp.eps) / inp.eps
    return math.sqrt(
        1.0 + math.log(inp.phi * 2.0 ** inp.beta) + (inp.beta / inp.gamma) * math.log(ratio)
    )


def theorem1_factor(inp: BoundInputs):
    """Geometry factor of the uniform local-time TV bound.

    Returns
    -------
    (factor, eps * factor)
        The bound is reported without the unknown multiplier K.
    """
    factor = _radical(inp)
    return factor, inp.eps * factor


def f_value(inp: BoundInputs) -> float:
    """The level F = C4 * eps * factor used to grade the coupling."""
    return inp.C4 * inp.eps * _radical(inp)


def envelope_norm(eps: float, q: float) -> float:
    """L2 norm ``sqrt(2) eps / q`` of the block envelope ``eps * Exp(q)``."""
    if q <= 0:
        raise ValueError("q must be positive")
    return math.sqrt(2.0) * eps / q


def bracketing_bound(s: float, inp: BoundInputs, env_norm: float) -> float:
    """Bracket count bound ``phi 2^beta (sqrt(2) kappa / (q s |E|_2))^(beta/gamma)``."""
    if s <= 0:
        raise ValueError("s must be positive")
    base = math.sqrt(2.0) * inp.kappa / (inp.q * s * env_norm)
    return inp.phi * 2.0 ** inp.beta * base ** (inp.beta / inp.gamma)


def binom_lower_tail_rate(p: float, delta: float) -> float:
    """Chernoff rate I(p, delta): ``P[Bin(m,p) <= (1-delta) m p] <= exp(-m I)``."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    a = p * (1 - delta) * math.log1p(-delta) if delta > 0 else 0.0
    b = p * ((1 - p) / p + delta) * math.log1p(delta * p / (1 - p))
    return a + b


def concentration_tail_terms(theta: float, n: int, inp: BoundInputs, F: float):
    """The three terms bounding ``P[R_n >= 8 F sqrt(n) + 7 theta n]``."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    q, eps = inp.q, inp.eps
    t1 = 2.0 * math.exp(-(3.0 / 8.0) * q * q * theta * theta * n / (eps * eps))
    t2 = 6.0 * math.exp(-3.0 * inp.C5 * q * theta * n / (eps * math.log(3 * n + 1)))
    t3 = 2.0 * math.exp(-q * theta * n / (2.0 * eps))
    return t1, t2, t3


def concentration_tail(theta: float, n: int, inp: BoundInputs, F: float) -> float:
    return sum(concentration_tail_terms(theta, n, inp, F))


def concentration_level(theta: float, n: int, F: float) -> float:
    """Threshold ``8 F sqrt(n) + 7 theta n`` paired with :func:`concentration_tail`."""
    return 8.0 * F * math.sqrt(n) + 7.0 * theta * n


def evaluate_all(inp: BoundInputs, n: int | None = None, s: float = 1.0,
                 theta: float | None = None, K: float = 1.0) -> dict:
    """Every closed-form quantity for one input set, as a flat dict."""
    factor, bound = theorem1_factor(inp)
    F = f_value(inp)
    env = envelope_norm(inp.eps, inp.q)
    out = {
        "inputs": inp.as_dict(),
        "K": K,
        "theorem1_factor": factor,
        "theorem1_bound": K * bound,
        "F": F,
        "envelope_norm": env,
        "bracketing_bound": bracketing_bound(s, inp, env),
        "s": s,
        "c1_delta0_1": c1_constant(1.0),
    }
    if n is not None:
        th = theta if theta is not None else F / math.sqrt(n)
        out.update(
            n=n,
            theta=th,
            concentration_level=concentration_level(th, n, F),
            concentration_tail=concentration_tail(th, n, inp, F),
        )
    return out
