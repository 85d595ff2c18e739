"""Finite metric state spaces and validated transition models.

A transition model stores the kernel as densities ``p(x, y) = P(x, y) / pi(y)``
with respect to the invariant law, together with the regeneration split
``p = q + (1 - q) * mu`` used by the simulation and coupling code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

TIE_TOL = 1e-12
ROW_TOL = 1e-10

DEFAULT_RADII = tuple(2.0 ** -k for k in range(11))


class ModelError(ValueError):
    """Raised when a state space or transition model violates its assumptions."""


def discrete_metric(size: int) -> np.ndarray:
    return 1.0 - np.eye(size)


def _greedy_cover_count(metric: np.ndarray, r: float) -> int:
    uncovered = np.ones(metric.shape[0], dtype=bool)
    count = 0
    while uncovered.any():
        center = int(np.argmax(uncovered))
        uncovered &= ~(metric[center] < r)
        count += 1
    return count


@dataclass(frozen=True)
class StateSpace:
    """Finite metric space with an invariant law and a polynomial covering class.

    Parameters
    ----------
    states : tuple
        Site identifiers, in the order used by every array in the package.
    metric : (d, d) ndarray
        Symmetric distance matrix with zero diagonal.
    pi : (d,) ndarray
        Strictly positive probability vector.
    beta, phi : float
        Covering exponent and constant: ``N(r) <= phi * r**-beta`` for r in (0, 1].
    """

    states: tuple
    metric: np.ndarray
    pi: np.ndarray
    beta: float = 0.0
    phi: float = 1.0

    def __post_init__(self):
        d = len(self.states)
        pi = np.asarray(self.pi, dtype=float)
        metric = np.asarray(self.metric, dtype=float)
        if pi.shape != (d,):
            raise ModelError(f"pi has shape {pi.shape}, expected ({d},)")
        if metric.shape != (d, d):
            raise ModelError(f"metric has shape {metric.shape}, expected ({d}, {d})")
        if abs(pi.sum() - 1.0) > TIE_TOL:
            raise ModelError(f"pi sums to {pi.sum()!r}, not 1")
        if np.any(pi <= 0):
            raise ModelError("pi not strictly positive")
        if np.any(metric < 0) or np.any(np.abs(np.diag(metric)) > 0):
            raise ModelError("metric must be nonnegative with zero diagonal")
        if np.max(np.abs(metric - metric.T), initial=0.0) > TIE_TOL:
            raise ModelError("metric not symmetric")
        off = metric[~np.eye(d, dtype=bool)]
        if off.size and off.min() <= 0:
            raise ModelError("distinct states must be at positive distance")
        # d(x, z) <= d(x, y) + d(y, z) for all triples
        via = metric[:, :, None] + metric[None, :, :]
        if np.any(metric[:, None, :] > via + TIE_TOL):
            raise ModelError("metric violates the triangle inequality")
        if self.beta < 0 or self.phi < 1:
            raise ModelError("need beta >= 0 and phi >= 1")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "states", tuple(self.states))
        if not covering_check(self, DEFAULT_RADII):
            raise ModelError(
                f"(beta={self.beta}, phi={self.phi}) fails the covering condition"
            )

    @property
    def size(self) -> int:
        return len(self.states)


def covering_check(space: StateSpace, radii: Sequence[float]) -> bool:
    """Check ``#balls(r) <= phi * r**-beta`` with a greedy open-ball cover for each r."""
    radii = list(radii)
    if not radii:
        raise ValueError("radii must be nonempty")
    for r in radii:
        if not 0 < r <= 1:
            raise ValueError(f"radius {r} outside (0, 1]")
        if _greedy_cover_count(space.metric, r) > space.phi * r ** (-space.beta) + TIE_TOL:
            return False
    return True


@dataclass(frozen=True)
class TransitionModel:
    """Validated Markov kernel on a finite metric space.

    Built by :func:`validate_model`; all derived quantities are stored so the
    object can be shared read-only across replicates.
    """

    space: StateSpace
    P: np.ndarray
    density: np.ndarray
    nu: np.ndarray
    epsilon: float
    q: float
    alpha: float
    mu: np.ndarray
    gamma: float
    kappa: float = field(default=0.0)

    @property
    def pi(self) -> np.ndarray:
        return self.space.pi

    @property
    def size(self) -> int:
        return self.space.size

    def summary(self) -> dict:
        return {
            "states": list(self.space.states),
            "eps": self.epsilon,
            "q": self.q,
            "alpha": self.alpha,
            "kappa": self.kappa,
            "gamma": self.gamma,
            "beta": self.space.beta,
            "phi": self.space.phi,
            "pi": self.pi.tolist(),
        }


def stationary_vector(P: np.ndarray) -> np.ndarray:
    """Unique stationary law of an irreducible stochastic matrix (dense solve)."""
    d = P.shape[0]
    n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
    if n_comp != 1:
        raise ModelError("P not irreducible; stationary law is not unique")
    A = np.vstack([P.T - np.eye(d), np.ones((1, d))])
    b = np.zeros(d + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def holder_constant(model: TransitionModel) -> float:
    """Smallest kappa with ``|p(x,z) - p(x,z')| <= kappa * d(z,z')**gamma``."""
    return _holder(model.density, model.space.metric, model.gamma)


def _holder(density: np.ndarray, metric: np.ndarray, gamma: float) -> float:
    d = density.shape[0]
    if d < 2:
        return 0.0
    diffs = np.abs(density[:, :, None] - density[:, None, :])
    off = ~np.eye(d, dtype=bool)
    scale = metric[off] ** gamma
    return float(np.max(diffs[:, off] / scale))


def validate_model(
    stochastic_matrix,
    pi=None,
    nu=None,
    gamma: float = 1.0,
    *,
    metric=None,
    states=None,
    beta: float = 0.0,
    phi: float | None = None,
) -> TransitionModel:
    """Validate a row-stochastic matrix and derive its density representation.

    Parameters
    ----------
    stochastic_matrix : (d, d) array_like
        Transition probabilities ``P(x, y)``.
    pi : (d,) array_like, optional
        Invariant law. Computed by a dense solve when omitted.
    nu : (d,) array_like, optional
        Initial density with respect to ``pi``; defaults to the constant 1.
    gamma : float
        Hoelder exponent in (0, 1].
    metric : (d, d) array_like or "discrete", optional
        Defaults to the discrete metric.
    beta, phi : float
        Covering class; ``phi`` defaults to ``d`` (valid for the discrete metric
        with ``beta = 0``).

    Returns
    -------
    TransitionModel
    """
    P = np.array(stochastic_matrix, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ModelError(f"P must be square, got shape {P.shape}")
    d = P.shape[0]
    if np.any(P < -TIE_TOL):
        raise ModelError("P has negative entries")
    rows = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(rows - 1.0) > ROW_TOL)
    if bad.size:
        raise ModelError(f"non-stochastic row {int(bad[0])} (sums to {rows[bad[0]]!r})")
    if not 0 < gamma <= 1:
        raise ModelError("gamma must lie in (0, 1]")

    if pi is None:
        pi = stationary_vector(P)
    else:
        pi = np.asarray(pi, dtype=float)
        if pi.shape != (d,):
            raise ModelError(f"pi has shape {pi.shape}, expected ({d},)")
        if np.any(pi <= 0):
            raise ModelError("pi not strictly positive")
        if abs(pi.sum() - 1.0) > TIE_TOL:
            raise ModelError(f"pi sums to {pi.sum()!r}, not 1")
    if np.any(pi <= 0):
        raise ModelError("pi not strictly positive")
    if np.max(np.abs(pi @ P - pi)) > ROW_TOL:
        raise ModelError("pi is not invariant for P")

    if metric is None or (isinstance(metric, str) and metric == "discrete"):
        metric = discrete_metric(d)
    if states is None:
        states = tuple(range(d))
    if phi is None:
        phi = float(d)
    space = StateSpace(tuple(states), np.asarray(metric, dtype=float), pi, float(beta), float(phi))

    density = P / pi[None, :]
    # round-off from the stationary solve must not create a spurious eps
    density[np.abs(density - 1.0) <= TIE_TOL] = 1.0
    if nu is None:
        nu = np.ones(d)
    else:
        nu = np.asarray(nu, dtype=float)
        if nu.shape != (d,) or np.any(nu < 0):
            raise ModelError("nu must be a nonnegative vector over the states")
        if abs(nu @ pi - 1.0) > ROW_TOL:
            raise ModelError("nu is not a probability density with respect to pi")

    eps = float(max(np.max(np.abs(density - 1.0)), np.max(np.abs(nu - 1.0))))
    if eps >= 1.0:
        raise ModelError(f"eps = {eps} >= 1: regeneration decomposition breaks down")
    q = 1.0 - eps
    alpha = float(density.min())
    if eps > 0:
        mu = 1.0 + (density - 1.0) / eps
    else:
        mu = np.ones((d, d))
    model = TransitionModel(
        space=space, P=P, density=density, nu=nu, epsilon=eps, q=q,
        alpha=alpha, mu=mu, gamma=float(gamma),
    )
    object.__setattr__(model, "kappa", holder_constant(model))
    return model


def model_from_dict(data: dict) -> TransitionModel:
    """Build a model from the JSON model-file layout."""
    missing = {"states", "P"} - set(data)
    if missing:
        raise ModelError(f"model file missing fields: {sorted(missing)}")
    return validate_model(
        data["P"],
        pi=data.get("pi"),
        nu=data.get("nu"),
        gamma=data.get("gamma", 1.0),
        metric=data.get("metric", "discrete"),
        states=data["states"],
        beta=data.get("beta", 0.0),
        phi=data.get("phi"),
    )


def load_model(path) -> TransitionModel:
    with open(Path(path)) as fh:
        data = json.load(fh)
    return model_from_dict(data)


def two_state(stay: float, **kwargs) -> TransitionModel:
    """Symmetric two-state chain that stays put with probability ``stay``."""
    P = [[stay, 1.0 - stay], [1.0 - stay, stay]]
    return validate_model(P, pi=[0.5, 0.5], **kwargs)
