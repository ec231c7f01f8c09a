"""Multi-dimensional density evolution for the frame-synchronous protocol.

``y[t]`` is the average erasure probability of a slot-to-user message of
type ``t + 1``. Two right-degree models are supported:

* ``"poisson"``: right degrees of type t are Poisson with rate
  ``alpha_t * eta * L_t'(1)``; works for any number of types.
* ``"exact"``: explicit right distributions, two types only.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .decodable import all_decodable_sets
from .degree import DegreeDistribution, PoissonRight, RightDistribution
from .policy import Policy

DEFAULT_EPS = 1e-8
DEFAULT_MAX_ITER = 100_000
FIXED_POINT_SLACK = 1e-3  # fraction of eps
MAX_RECORDED = 10_000


class ConvergenceError(RuntimeError):
    """Density evolution fails even at a vanishing load."""


@dataclass(frozen=True)
class ErasureState:
    y: tuple[float, ...]
    iteration: int = 0


@dataclass(frozen=True)
class DeProblem:
    policy: Policy
    eta: float
    right_model: str = "poisson"
    rights: tuple[RightDistribution, ...] | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.right_model not in ("poisson", "exact"):
            raise ValueError(f"unknown right model {self.right_model!r}")
        if self.right_model == "exact":
            if self.rights is None or len(self.rights) != self.policy.T:
                raise ValueError("exact mode needs one right distribution per type")
            if self.policy.T != 2:
                raise NotImplementedError("exact right distributions are supported for T=2 only")

    @property
    def T(self) -> int:
        return self.policy.T

    def rates(self) -> tuple[float, ...]:
        return self.policy.rates(self.eta)

    def lefts(self) -> tuple[DegreeDistribution, ...]:
        return tuple(L.edge_perspective() for L in self.policy.left)

    def right_dists(self) -> tuple[RightDistribution, ...]:
        if self.right_model == "exact":
            return self.rights
        return tuple(PoissonRight(r) for r in self.rates())


@dataclass(frozen=True)
class DeOutcome:
    converged: bool
    trajectory: tuple[ErasureState, ...]
    fixed_point: tuple[float, ...]
    iterations: int
    final_next: tuple[float, ...] = field(default=(), repr=False)


def _polyval(c: np.ndarray, x: float) -> float:
    acc = 0.0
    for a in c[::-1]:
        acc = acc * x + a
    return acc


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def de_init(problem: DeProblem, exact_init: bool = False) -> ErasureState:
    """Starting erasure vector.

    By default every entry is 1 (the worst case used by the convergence
    test). ``exact_init`` gives the first-iteration value for two types with
    explicit right distributions: a type-t edge is resolved when its check
    has degree 1 and the other type's check has degree 0 or 1.
    """
    if not exact_init:
        return ErasureState(tuple([1.0] * problem.T))
    if problem.T != 2:
        raise NotImplementedError("exact initialization is defined for T=2 only")
    R = problem.right_dists()
    rho = tuple(r.edge_perspective() for r in R)
    y = []
    for t in range(2):
        tb = 1 - t
        y.append(1.0 - rho[t].evaluate(0.0) * (R[tb].evaluate(0.0) + R[tb].derivative(0.0, 1)))
    return ErasureState(tuple(y))


def de_step_exact_t2(y: Sequence[float], lefts: Sequence[DegreeDistribution],
                     rights: Sequence[RightDistribution]) -> tuple[float, float]:
    """One T=2 step with explicit right distributions (node perspective).

    ``lefts`` are edge-perspective left distributions; ``rights`` are
    node-perspective right distributions whose edge perspective supplies rho.
    Both types are updated simultaneously from the incoming ``y``.
    """
    if len(y) != 2 or len(lefts) != 2 or len(rights) != 2:
        raise NotImplementedError("the explicit-right step is defined for T=2 only")
    rho = [r.edge_perspective() for r in rights]
    x = [_clip01(_polyval(lefts[t].coeffs, y[t])) for t in range(2)]
    out = []
    for t in range(2):
        tb = 1 - t
        z = 1.0 - x[tb]
        other = rights[tb].evaluate(z) + x[tb] * rights[tb].derivative(z, 1)
        out.append(1.0 - rho[t].evaluate(1.0 - x[t]) * other)
    return out[0], out[1]


def de_step_poisson(y: Sequence[float], problem: DeProblem, decodable_sets=None) -> tuple[float, ...]:
    """One general-T step with Poisson right distributions.

    The k-th derivative of ``exp(-r (1 - z))`` at ``z = 1 - x`` is
    ``r^k exp(-r x)``, so each decodable pattern ``c`` contributes
    ``prod_{s != t} (r_s x_s)^{c_s} / c_s! * exp(-r_s x_s)``.
    """
    T = problem.T
    if len(y) != T:
        raise ValueError("state length does not match the number of types")
    if decodable_sets is None:
        decodable_sets = all_decodable_sets(T)
    lefts = problem.lefts()
    r = problem.rates()
    q = [r[t] * _polyval(lefts[t].coeffs, y[t]) for t in range(T)]
    e = [math.exp(-v) for v in q]
    out = []
    for t in range(T):
        total = 0.0
        for c in decodable_sets[t]:
            prod = 1.0
            for s in range(T):
                if s != t:
                    prod *= q[s] ** c[s] / math.factorial(c[s]) * e[s]
            total += prod
        out.append(1.0 - e[t] * total)
    return tuple(out)


@lru_cache(maxsize=None)
def _pattern_arrays(T: int):
    pats, owner = [], []
    for ds in all_decodable_sets(T):
        for c in ds:
            pats.append(c)
            owner.append(ds.t - 1)
    pats = np.array(pats, dtype=np.int64)
    owner = np.array(owner, dtype=np.int64)
    pats.flags.writeable = False
    owner.flags.writeable = False
    return pats, owner


def _lambda_matrix(policy: Policy) -> np.ndarray:
    lefts = [L.edge_perspective().coeffs for L in policy.left]
    width = max(len(c) for c in lefts)
    lam = np.zeros((len(lefts), width))
    for t, c in enumerate(lefts):
        lam[t, :len(c)] = c
    return lam


def _subsample(n: int, limit: int) -> list[int]:
    if n <= limit:
        return list(range(n))
    stride = math.ceil(n / (limit // 2))
    keep = set()
    for i in range(0, n, stride):
        keep.add(i)
        if i + 1 < n:
            keep.add(i + 1)
    keep.update((n - 2, n - 1))
    return sorted(k for k in keep if k >= 0)


def run_de(problem: DeProblem, eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER,
           record: bool = True, y0: Sequence[float] | None = None,
           max_recorded: int = MAX_RECORDED) -> DeOutcome:
    """Iterate from ``(1, ..., 1)`` (or ``y0``) until every ``y < eps``.

    Stops unconverged when the largest componentwise change drops below
    ``eps * 1e-3`` (a nonzero fixed point) or after ``max_iter`` steps.
    """
    if eps <= 0 or max_iter < 1:
        raise ValueError("need eps > 0 and max_iter >= 1")
    T = problem.T
    slack = eps * FIXED_POINT_SLACK
    start = np.ones(T) if y0 is None else np.asarray(y0, dtype=float)

    if problem.right_model == "exact":
        lefts, rights = problem.lefts(), problem.right_dists()

        def step(v):
            return np.array(de_step_exact_t2(v, lefts, rights))

        rows = [start.copy()]
        y = start.copy()
        converged, it = bool(y.max() < eps), 0
        while not converged and it < max_iter:
            ny = step(y)
            it += 1
            rows.append(ny)
            if ny.max() < eps:
                converged = True
            elif np.abs(ny - y).max() < slack:
                y = ny
                break
            y = ny
        traj = np.array(rows)
        final = traj[-1]
        final_next = step(final)
    else:
        lam = _lambda_matrix(problem.policy)
        rates = np.array(problem.rates())
        pats, owner = _pattern_arrays(T)
        buf = np.empty((max_iter + 1 if record else 0, T))
        converged, it, final = _kernels.run_poisson(lam, rates, pats, owner, start, eps,
                                                    max_iter, slack, buf)
        traj = buf[: it + 1]
        final_next = np.empty(T)
        _kernels.poisson_step(final, lam, rates, pats, owner, final_next)

    if record:
        idx = _subsample(len(traj), max_recorded)
        trajectory = tuple(ErasureState(tuple(map(float, traj[i])), i) for i in idx)
    else:
        trajectory = (ErasureState(tuple(map(float, final)), int(it)),)
    return DeOutcome(bool(converged), trajectory, tuple(map(float, final)), int(it),
                     tuple(map(float, final_next)))


@dataclass(frozen=True)
class ThresholdResult:
    eta_star: float
    eps: float
    bisect_tol: float
    iterations: int
    policy_id: str = ""

    def to_dict(self) -> dict:
        return {"policy_id": self.policy_id, "eta_star": self.eta_star, "eps": self.eps,
                "bisect_tol": self.bisect_tol, "iterations": self.iterations}


def _bisect(policy: Policy, eps: float, max_iter: int, bisect_tol: float) -> float:
    lam = _lambda_matrix(policy)
    mdeg = np.array(policy.mean_degrees)
    shares = np.array(policy.shares)
    pats, owner = _pattern_arrays(policy.T)
    eta = _kernels.bisect_threshold(lam, mdeg, shares, pats, owner, eps, max_iter,
                                    eps * FIXED_POINT_SLACK, bisect_tol, float(policy.T))
    if eta < 0:
        raise ConvergenceError(f"density evolution fails already at eta={bisect_tol}")
    return float(eta)


def threshold_search(policy: Policy, eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER,
                     bisect_tol: float = 1e-3) -> ThresholdResult:
    """Bisect the sum load with shares fixed; ``iterations`` is the DE length at eta*."""
    eta = _bisect(policy, eps, max_iter, bisect_tol)
    out = run_de(DeProblem(policy, eta), eps, max_iter, record=False)
    return ThresholdResult(eta, eps, bisect_tol, out.iterations, policy.name)


def threshold(policy: Policy, eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER,
              bisect_tol: float = 1e-3) -> float:
    """Largest converging sum load (lower end of the final bisection bracket)."""
    return _bisect(policy, eps, max_iter, bisect_tol)


@dataclass(frozen=True)
class StabilityMargin:
    type: int
    lambda2: float
    bound: float
    satisfied: bool

    @property
    def margin(self) -> float:
        return self.bound - self.lambda2


def stability_check(policy: Policy, eta: float,
                    rights: Sequence[RightDistribution] | None = None) -> list[StabilityMargin]:
    """Compare the degree-2 edge fraction with ``1 / rho'(1)`` per type.

    Without explicit rights, ``rho'(1)`` is the Poisson rate
    ``alpha_t * eta * L_t'(1)``.
    """
    if rights is None:
        slopes = policy.rates(eta)
    else:
        slopes = tuple(r.edge_perspective().derivative(1.0, 1) for r in rights)
    out = []
    for t, (L, s) in enumerate(zip(policy.left, slopes), start=1):
        lam = L.edge_perspective().coeffs
        l2 = float(lam[1]) if len(lam) > 1 else 0.0
        bound = math.inf if s == 0 else 1.0 / s
        out.append(StabilityMargin(t, l2, bound, l2 < bound))
    return out


def export_evolution_path(outcome: DeOutcome) -> list[tuple]:
    """Rows ``(l, y_1..y_T, y'_1..y'_T)`` with ``y'`` the next iterate."""
    states = outcome.trajectory
    rows = []
    for a, b in zip(states, states[1:]):
        if b.iteration == a.iteration + 1:
            rows.append((a.iteration, *a.y, *b.y))
    last = states[-1]
    if outcome.final_next:
        rows.append((last.iteration, *last.y, *outcome.final_next))
    return rows


@dataclass(frozen=True)
class EfficiencyPrediction:
    eta: float
    per_type: tuple[float, ...]
    packet_loss: tuple[float, ...]
    converged: bool
    fixed_point: tuple[float, ...]

    @property
    def efficiency(self) -> float:
        return sum(self.per_type)


def predicted_efficiency(policy: Policy, eta: float, eps: float = DEFAULT_EPS,
                         max_iter: int = DEFAULT_MAX_ITER) -> EfficiencyPrediction:
    """Asymptotic decoded load per slot at target ``eta``.

    A type-t user stays unresolved when all its edges are erased, which
    happens with probability ``L_t(y_t)`` at the DE fixed point.
    """
    out = run_de(DeProblem(policy, eta), eps, max_iter, record=False)
    loss = []
    for L, v in zip(policy.left, out.fixed_point):
        loss.append(0.0 if out.converged else float(_polyval(L.coeffs, _clip01(v))))
    per_type = tuple(a * eta * (1.0 - p) for a, p in zip(policy.shares, loss))
    return EfficiencyPrediction(eta, per_type, tuple(loss), out.converged, out.fixed_point)
