"""One-dimensional sandbox for composable (filter, function) chains.

A chain is an ordered sequence of (FilterSpec, function) pairs evaluated as
repeated composition: the first pair is applied innermost, so
[(F1, g1), (F2, g2)] evaluates F2(g2(F1(g1(x)))) on x in [0, 1].

The area functional integrates a chain over [0, 1] with the trapezoid rule.
Filter cutoffs make the integrand piecewise with jumps; cells containing a
jump are refined by bisection so the quadrature error stays far below the
grid-level O(h) a plain trapezoid would give at a discontinuity.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .filters import PASS, FilterSpec

CalcFunction = Callable[[np.ndarray], np.ndarray]

JUMP_THRESHOLD = 1e-3
BISECTION_STEPS = 60


def identity(x):
    return np.asarray(x, dtype=np.float64)


def constant(c) -> CalcFunction:
    def fn(x):
        x = np.asarray(x, dtype=np.float64)
        return np.full_like(x, float(c))
    return fn


def filter_function(spec: FilterSpec) -> CalcFunction:
    """A filter used as a plain function on [-1, 1] values."""
    def fn(x):
        return np.asarray(spec(np.asarray(x, dtype=np.float64)), dtype=np.float64)
    return fn


FilterChain = Sequence[Tuple[FilterSpec, CalcFunction]]


def eval_chain(chain: FilterChain, x):
    """Evaluate the composed chain at scalar or array x in [0, 1]."""
    if not chain:
        raise ConfigError("filter chains must be nonempty")
    v = np.asarray(x, dtype=np.float64)
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    for spec, fn in chain:
        v = np.asarray(spec(fn(v)), dtype=np.float64)
    return float(v[0]) if scalar else v


def area(chain: FilterChain, n_points: int) -> float:
    """Trapezoidal integral of the chain over [0, 1] with jump refinement."""
    if n_points < 2:
        raise ConfigError(f"area needs n_points >= 2, got {n_points}")
    grid = np.linspace(0.0, 1.0, n_points)
    vals = eval_chain(chain, grid)
    total = float(np.trapezoid(vals, grid))
    jumps = np.nonzero(np.abs(np.diff(vals)) > JUMP_THRESHOLD)[0]
    for i in jumps:
        total += _refine_cell(chain, grid[i], grid[i + 1], vals[i], vals[i + 1])
    return total


def _refine_cell(chain, x0, x1, f0, f1):
    """Correction replacing one trapezoid cell by two jump-straddling cells."""
    naive = 0.5 * (f0 + f1) * (x1 - x0)
    lo, hi = x0, x1
    flo, fhi = f0, f1
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        fmid = eval_chain(chain, mid)
        # keep the bracket that still contains the jump
        if abs(fmid - flo) >= abs(fhi - fmid):
            hi, fhi = mid, fmid
        else:
            lo, flo = mid, fmid
    refined = (0.5 * (f0 + flo) * (lo - x0)
               + 0.5 * (flo + fhi) * (hi - lo)
               + 0.5 * (fhi + f1) * (x1 - hi))
    return refined - naive


def error_curve(true_fn: CalcFunction, probe: Callable[[float], FilterChain],
                alphas: Sequence[float], grid_n: int) -> List[Tuple[float, float]]:
    """Sup-norm distance between probe(alpha) and true_fn on an even grid."""
    if not len(alphas):
        raise ConfigError("error_curve needs at least one alpha")
    grid = np.linspace(0.0, 1.0, grid_n)
    truth = np.asarray(true_fn(grid), dtype=np.float64)
    curve = []
    for alpha in alphas:
        approx = eval_chain(probe(alpha), grid)
        curve.append((float(alpha), float(np.abs(approx - truth).max())))
    return curve


@dataclass
class RecoveryResult:
    alpha0: Optional[float]
    recovered: bool
    curve: List[Tuple[float, float]]

    NO_RECOVERY = "NO_RECOVERY"

    def describe(self):
        if self.recovered:
            return f"alpha0={self.alpha0:g}"
        return self.NO_RECOVERY


def recover_alpha0(true_fn: CalcFunction, probe: Callable[[float], FilterChain],
                   alphas: Sequence[float], tol: float, grid_n: int = 1001) -> RecoveryResult:
    """Smallest grid alpha whose sup-error is within tol, plus the full curve."""
    if tol <= 0:
        raise ConfigError(f"tol must be positive, got {tol}")
    curve = error_curve(true_fn, probe, sorted(alphas), grid_n)
    for alpha, err in curve:
        if err <= tol:
            return RecoveryResult(alpha0=alpha, recovered=True, curve=curve)
    return RecoveryResult(alpha0=None, recovered=False, curve=curve)


@dataclass
class AreaBoundEstimate:
    """Monte-Carlo estimate of P(area <= area_bound) over random chains."""
    alpha: float
    area_bound: float
    prob: float
    n_chains: int


def estimate_area_bound(alpha: float, n_chains: int = 200, seed: int = 0,
                        area_bound: Optional[float] = None,
                        n_points: int = 2001) -> AreaBoundEstimate:
    """Sample chains of pass-filtered random affine maps and estimate how
    often their area stays under the bound (default alpha**2, the worked
    double-pass example's bound)."""
    bound = float(alpha ** 2) if area_bound is None else float(area_bound)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_chains):
        length = int(rng.integers(1, 4))
        chain = []
        for _ in range(length):
            c = float(rng.uniform(0.0, 1.0))
            chain.append((FilterSpec(PASS, 0.0, alpha), _affine(c)))
        if area(chain, n_points) <= bound:
            hits += 1
    return AreaBoundEstimate(alpha=alpha, area_bound=bound,
                             prob=hits / n_chains, n_chains=n_chains)


def _affine(c):
    def fn(x):
        return c * np.asarray(x, dtype=np.float64)
    return fn
