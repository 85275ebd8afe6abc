"""
Differential-privacy mechanisms and a Renyi-DP accountant for the
Poisson-subsampled Gaussian mechanism.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from ..core.errors import DivergentBound, NonFiniteInput, Unachievable

logger = logging.getLogger(__name__)

ORDERS = np.arange(2, 513, dtype=np.int64)

SIGMA_TOLERANCE = 1e-3
SIGMA_CAP = 1e4


def _frozen(values: np.ndarray) -> np.ndarray:
    values.flags.writeable = False
    return values


@dataclass(frozen=True, eq=False)
class RdpCurve:
    """Accumulated RDP per integer order"""

    orders: np.ndarray
    eps_rdp: np.ndarray
    steps: int = 0

    @classmethod
    def zero(cls, orders: Optional[Sequence[int]] = None) -> "RdpCurve":
        grid = np.asarray(ORDERS if orders is None else orders, dtype=np.int64)
        if grid.size == 0 or grid.min() < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("orders must be strictly increasing integers >= 2")
        return cls(
            orders=_frozen(grid.copy()),
            eps_rdp=_frozen(np.zeros(grid.shape, dtype=np.float64)),
            steps=0,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RdpCurve):
            return NotImplemented
        return (
            self.steps == other.steps
            and np.array_equal(self.orders, other.orders)
            and np.array_equal(self.eps_rdp, other.eps_rdp)
        )


def _robust_norm(v: np.ndarray) -> float:
    peak = float(np.max(np.abs(v))) if v.size else 0.0
    if peak == 0.0:
        return 0.0
    return peak * float(np.linalg.norm(v / peak))


def clip(v, clip_norm: float) -> np.ndarray:
    """Scale v onto the L2 ball of radius clip_norm when it lies outside"""
    if not clip_norm > 0:
        raise ValueError("clip_norm must be positive")
    vector = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(vector)):
        raise NonFiniteInput("vector has non-finite coordinates")
    norm = _robust_norm(vector)
    if norm <= clip_norm:
        return vector.copy()
    clipped = vector * (clip_norm / norm)
    # rounding can leave the norm one ulp above the bound
    while _robust_norm(clipped) > clip_norm:
        clipped = np.nextafter(clipped, 0.0)
    return clipped


def gaussian_mechanism(v, clip_norm: float, sigma: float, seed) -> np.ndarray:
    """Add N(0, (sigma * clip_norm)^2) noise per coordinate from a seeded generator"""
    vector = np.asarray(v, dtype=np.float64)
    if sigma == 0:
        return vector.copy()
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    return vector + rng.normal(0.0, sigma * clip_norm, size=vector.shape)


def _log_comb(n: int, k: np.ndarray) -> np.ndarray:
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


def gaussian_rdp(sigma: float, alpha: int) -> float:
    """RDP of the unsubsampled Gaussian mechanism"""
    if sigma <= 0:
        raise DivergentBound("Gaussian mechanism without noise has unbounded RDP")
    return alpha / (2.0 * sigma**2)


def rdp_step(q: float, sigma: float, alpha: int) -> float:
    """RDP at integer order alpha for one step of the subsampled Gaussian"""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    alpha = int(alpha)
    if alpha < 2:
        raise ValueError("alpha must be an integer >= 2")
    if q == 0:
        return 0.0
    if sigma <= 0:
        raise DivergentBound("sigma must be positive when q > 0")
    if q == 1.0:
        return gaussian_rdp(sigma, alpha)

    k = np.arange(alpha + 1, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        log_terms = (
            _log_comb(alpha, k)
            + k * math.log(q)
            + (alpha - k) * math.log1p(-q)
            + k * (k - 1) / (2.0 * sigma**2)
        )
        value = float(special.logsumexp(log_terms)) / (alpha - 1)
    if not math.isfinite(value):
        raise DivergentBound(
            f"RDP sum overflows at alpha={alpha}, sigma={sigma}; use larger sigma"
        )
    return max(value, 0.0)


def rdp_vector(q: float, sigma: float, orders: Sequence[int] = ORDERS) -> np.ndarray:
    return np.array([rdp_step(q, sigma, int(alpha)) for alpha in orders])


def compose(curve: RdpCurve, q: float, sigma: float, steps: int) -> RdpCurve:
    """Add steps copies of the per-step RDP to every order"""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if steps == 0:
        return curve
    step = rdp_vector(q, sigma, curve.orders)
    return RdpCurve(
        orders=curve.orders,
        eps_rdp=_frozen(curve.eps_rdp + steps * step),
        steps=curve.steps + steps,
    )


def to_epsilon(curve: RdpCurve, delta: float) -> Tuple[float, int]:
    """Best (epsilon, order) over the grid for the given delta"""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    eps = curve.eps_rdp + math.log(1.0 / delta) / (curve.orders - 1)
    best = int(np.argmin(eps))
    return max(float(eps[best]), 0.0), int(curve.orders[best])


def epsilon_for(
    q: float, sigma: float, steps: int, delta: float, orders: Sequence[int] = ORDERS
) -> Tuple[float, int]:
    return to_epsilon(compose(RdpCurve.zero(orders), q, sigma, steps), delta)


def calibrate_sigma(
    q: float,
    steps: int,
    delta: float,
    eps_target: float,
    tolerance: float = SIGMA_TOLERANCE,
    orders: Sequence[int] = ORDERS,
) -> float:
    """Smallest sigma on a grid of spacing tolerance whose epsilon is within target.

    Searches the integer grid index, so the answer is the minimal feasible
    grid point and never increases when the target grows.
    """
    floor, _ = to_epsilon(RdpCurve.zero(orders), delta)
    if eps_target <= floor:
        raise Unachievable(
            f"target epsilon {eps_target} is at or below the grid floor {floor:.6f}"
        )

    def feasible(index: int) -> bool:
        try:
            eps, _ = epsilon_for(q, index * tolerance, steps, delta, orders)
        except DivergentBound:
            return False
        return eps <= eps_target

    if feasible(1):
        return round(tolerance, 12)

    low, high = 1, 2
    while not feasible(high):
        low = high
        high *= 2
        if high * tolerance > SIGMA_CAP:
            raise Unachievable(f"no sigma up to {SIGMA_CAP} reaches epsilon {eps_target}")
    while high - low > 1:
        middle = (low + high) // 2
        if feasible(middle):
            high = middle
        else:
            low = middle
    sigma = round(high * tolerance, 12)
    logger.debug(f"Calibrated sigma={sigma} for q={q} steps={steps} target={eps_target}")
    return sigma


@dataclass
class PrivacyAccountant:
    """Running RDP composition with a per-release history"""

    delta: float = 1e-5
    curve: RdpCurve = field(default_factory=RdpCurve.zero)
    history: List[Tuple[int, float]] = field(default_factory=list)

    def record(self, q: float, sigma: float, steps: int) -> float:
        self.curve = compose(self.curve, q, sigma, steps)
        eps = self.epsilon
        self.history.append((self.curve.steps, eps))
        return eps

    @property
    def epsilon(self) -> float:
        return to_epsilon(self.curve, self.delta)[0]

    @property
    def best_order(self) -> int:
        return to_epsilon(self.curve, self.delta)[1]

    def can_release(self, q: float, sigma: float, steps: int, max_epsilon: float) -> bool:
        trial = compose(self.curve, q, sigma, steps)
        return to_epsilon(trial, self.delta)[0] <= max_epsilon
