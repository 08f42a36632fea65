"""Non-convex convergence bound for random layer allocation, and the empirical
quantities it consumes (mask deviation, minimum layer coverage, constants).

Symbols: ``h`` smoothness constant, ``sigma2`` minibatch gradient variance,
``delta2`` client heterogeneity, ``alpha`` mask deviation, ``N`` clients,
``J`` local steps, ``T`` rounds, ``eta`` client learning rate, ``gamma_star``
minimum number of clients covering any trained layer in any round.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class InfeasibleError(ValueError):
    """The learning rate admits no positive ``delta1``."""


@dataclass(frozen=True)
class BoundInputs:
    h: float
    sigma2: float
    delta2: float
    alpha: float
    N: int
    J: int
    T: int
    eta: float
    gamma_star: float
    F1: float
    sum_r_norm2: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.h <= 0 or self.eta <= 0 or self.N < 1 or self.T < 1:
            raise ValueError("h and eta must be positive; N and T at least 1")
        if self.J < 1:
            raise ValueError(f"J must be >= 1, got {self.J}")
        if self.gamma_star < 1:
            raise ValueError(f"gamma_star must be >= 1, got {self.gamma_star}")
        if min(self.sigma2, self.delta2, self.alpha) < 0:
            raise ValueError("sigma2, delta2 and alpha must be non-negative")


@dataclass(frozen=True)
class BoundReport:
    delta1: float
    bound: float
    terms: tuple[float, float, float, float]  # initial objective, mask drift, noise, heterogeneity
    feasible: bool
    eta_interval: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "delta1": self.delta1,
            "bound": self.bound,
            "terms": {
                "initial_objective": self.terms[0],
                "mask_deviation": self.terms[1],
                "gradient_noise": self.terms[2],
                "heterogeneity": self.terms[3],
            },
            "feasible": self.feasible,
            "eta_interval": list(self.eta_interval),
        }


def lr_feasible_interval(N, J, h, gamma_star) -> tuple[float, float]:
    """Admissible client learning rates ``[lo, hi]``; empty when ``lo > hi``."""
    if min(N, J, h, gamma_star) <= 0:
        raise ValueError("N, J, h and gamma_star must all be positive")
    lo = 3 * N / (16 * J**2 * h * gamma_star) + N / (6 * J * h * gamma_star)
    hi = 1 / (4 * J * h)
    return lo, hi


def delta1(eta, N, J, h, gamma_star) -> float:
    """``J eta / 2 - 3N / (32 J h gamma*) - N / (12 h gamma*)``, written as ``(J/2)(eta - lo)``.

    The factored form is exactly zero at ``eta == lo`` and avoids cancellation near it.
    """
    lo, _ = lr_feasible_interval(N, J, h, gamma_star)
    return J / 2 * (eta - lo)


def convergence_bound(inputs: BoundInputs) -> BoundReport:
    """Right-hand side of the average squared-gradient bound, split into its four summands.

    Raises :class:`InfeasibleError` if the step-size interval is empty or ``delta1 <= 0`` (this includes
    ``eta == lo``, where the interval is closed but ``delta1`` vanishes) and
    ``ValueError`` if ``eta`` lies outside the admissible interval.
    """
    p = inputs
    lo, hi = lr_feasible_interval(p.N, p.J, p.h, p.gamma_star)
    d1 = delta1(p.eta, p.N, p.J, p.h, p.gamma_star)
    if lo > hi:
        raise InfeasibleError(f"admissible step-size interval is empty: lo={lo} > hi={hi}")
    if not (lo <= p.eta <= hi):
        raise ValueError(f"eta={p.eta} outside the admissible interval [{lo}, {hi}]")
    if d1 <= 0:
        raise InfeasibleError(f"delta1={d1} is not positive")
    g = p.gamma_star
    terms = (
        p.F1 / (p.T * d1),
        p.h * p.N * p.alpha / (p.T * d1 * g) * p.sum_r_norm2,
        17 * p.N / (64 * p.J * p.h * d1 * g) * p.sigma2,
        (1 / 3 + 3 / (32 * p.J)) * p.N / (p.h * d1 * g) * p.delta2,
    )
    return BoundReport(d1, math.fsum(terms), terms, True, (lo, hi))


def evaluate_bound(inputs: BoundInputs) -> BoundReport:
    """Like :func:`convergence_bound` but reports infeasibility instead of raising."""
    lo, hi = lr_feasible_interval(inputs.N, inputs.J, inputs.h, inputs.gamma_star)
    try:
        return convergence_bound(inputs)
    except ValueError:
        d1 = delta1(inputs.eta, inputs.N, inputs.J, inputs.h, inputs.gamma_star)
        nan = float("nan")
        return BoundReport(d1, nan, (nan, nan, nan, nan), False, (lo, hi))


def mask_deviation_alpha(r, m) -> float:
    """Tight ``alpha`` with ``||r - r*m|| = alpha * ||r||^2``."""
    r = np.asarray(r, dtype=np.float64).ravel()
    m = np.asarray(m, dtype=np.float64).ravel()
    if r.shape != m.shape:
        raise ValueError(f"parameter vector {r.shape} and mask {m.shape} differ")
    sq = float(r @ r)
    if sq == 0.0:
        raise ZeroDivisionError("alpha is undefined for a zero parameter vector")
    return float(np.linalg.norm(r - r * m)) / sq


def layer_coverage(history, trained_layers=None) -> list[np.ndarray]:
    """Per-round column sums restricted to trained layers (sum > 0 by default)."""
    out = []
    for t, m in enumerate(history):
        cols = np.asarray(m.entries).sum(axis=0)
        if trained_layers is None:
            out.append(cols[cols > 0])
        else:
            out.append(cols[list(trained_layers[t])])
    return out


def gamma_star(history, trained_layers=None) -> int:
    """Minimum over rounds ``t`` and layers in ``S^t`` of the round's column sum."""
    history = list(history)
    if not history:
        raise ValueError("empty allocation history")
    per_round = layer_coverage(history, trained_layers)
    mins = [int(c.min()) for c in per_round if c.size]
    if not mins:
        raise ValueError("no layer was trained in any round")
    return min(mins)


# -- empirical proxies for the assumption constants --------------------------
# None of these come with guarantees; outputs are labelled "empirical proxy".

def estimate_smoothness(grad_fn, points, rng: np.random.Generator, pairs: int = 16,
                        radius: float = 1e-2) -> float:
    """Max observed ``||g(a) - g(b)|| / ||a - b||`` over random nearby pairs."""
    best = 0.0
    points = list(points)
    for _ in range(pairs):
        a = points[rng.integers(len(points))]
        b = a + rng.normal(0.0, radius, size=a.shape)
        num = np.linalg.norm(grad_fn(a) - grad_fn(b))
        den = np.linalg.norm(a - b)
        if den > 0:
            best = max(best, float(num / den))
    return best


def estimate_gradient_variance(batch_grads, full_grad) -> float:
    """Mean squared deviation of minibatch gradients from the full gradient."""
    g = np.asarray(batch_grads, dtype=np.float64)
    return float(np.mean(np.sum((g - np.asarray(full_grad)) ** 2, axis=1)))


def estimate_heterogeneity(client_grads, global_grad) -> float:
    """Max over clients of ``||grad F_n - grad F||^2``."""
    g = np.asarray(client_grads, dtype=np.float64)
    return float(np.max(np.sum((g - np.asarray(global_grad)) ** 2, axis=1)))
