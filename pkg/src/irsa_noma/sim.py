"""Frame-synchronous Monte Carlo of IRSA with NOMA.

Slots are 0-based (``0..N-1``). Types are 1-based in the public API to
match decodable-set notation, and 0-based wherever they index arrays.

Randomness comes from numpy's PCG64 seeded through ``SeedSequence``; trial
``i`` of ``run_trials(seed=s)`` uses child ``i`` of ``SeedSequence(s)``, so
each trial's stream depends only on ``(s, i)``.
"""
from __future__ import annotations

import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .decodable import decodable_lookup
from .policy import Policy


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def trial_seeds(seed: int, trials: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(trials)


@dataclass(frozen=True)
class FrameConfig:
    N: int
    user_counts: tuple[int, ...]
    policy: Policy
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "user_counts", tuple(int(k) for k in self.user_counts))
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if len(self.user_counts) != self.policy.T:
            raise ValueError("need one user count per type")
        if any(k < 0 for k in self.user_counts):
            raise ValueError("user counts must be nonnegative")
        if self.policy.max_degree > self.N:
            raise ValueError(f"max degree {self.policy.max_degree} exceeds N={self.N}")

    @classmethod
    def for_load(cls, policy: Policy, eta: float, N: int, seed: int = 0) -> "FrameConfig":
        """Users per type as ``round(alpha_t * eta * N)``."""
        return cls(N, policy.user_counts(eta, N), policy, seed)

    @property
    def T(self) -> int:
        return self.policy.T

    @property
    def target_efficiency(self) -> float:
        return sum(self.user_counts) / self.N


def choose_slots(degree: int, draws: Sequence[int]) -> list[int]:
    """Partial Fisher-Yates: ``draws[k]`` is uniform on ``[k, N)``.

    Only the touched positions of the virtual permutation are stored.
    """
    swapped: dict[int, int] = {}
    out = []
    for k in range(degree):
        r = draws[k]
        out.append(swapped.get(r, r))
        swapped[r] = swapped.get(k, k)
    return out


class FrameGraph:
    """Typed users attached to slots, plus per-slot residual counters.

    ``counts[n * T + t]`` is the number of unresolved type-(t+1) users in slot
    ``n``; ``idsum`` holds the sum of their indices, which is the index of
    the user itself whenever the count is 1.
    """

    def __init__(self, N: int, user_slots: Sequence[Sequence[Sequence[int]]]):
        self.N = N
        self.T = len(user_slots)
        self.user_slots = [[tuple(sorted(s)) for s in users] for users in user_slots]
        T = self.T
        self.counts = [0] * (N * T)
        self.idsum = [0] * (N * T)
        self.decoded = [[False] * len(users) for users in self.user_slots]
        for t, users in enumerate(self.user_slots):
            for u, slots in enumerate(users):
                if len(set(slots)) != len(slots):
                    raise ValueError(f"type {t + 1} user {u}: repeated slot")
                for n in slots:
                    if not 0 <= n < N:
                        raise ValueError(f"slot {n} outside [0, {N})")
                    self.counts[n * T + t] += 1
                    self.idsum[n * T + t] += u

    @property
    def user_counts(self) -> tuple[int, ...]:
        return tuple(len(u) for u in self.user_slots)

    def pattern(self, n: int) -> tuple[int, ...]:
        return tuple(self.counts[n * self.T:(n + 1) * self.T])

    def recount(self) -> list[int]:
        """Residual counters rebuilt from scratch (for integrity checks)."""
        T = self.T
        counts = [0] * (self.N * T)
        for t, users in enumerate(self.user_slots):
            for u, slots in enumerate(users):
                if not self.decoded[t][u]:
                    for n in slots:
                        counts[n * T + t] += 1
        return counts

    def decoded_set(self) -> set[tuple[int, int]]:
        return {(t + 1, u) for t, flags in enumerate(self.decoded)
                for u, f in enumerate(flags) if f}

    def copy(self) -> "FrameGraph":
        g = FrameGraph.__new__(FrameGraph)
        g.N, g.T = self.N, self.T
        g.user_slots = self.user_slots
        g.counts = list(self.counts)
        g.idsum = list(self.idsum)
        g.decoded = [list(d) for d in self.decoded]
        return g


@dataclass(frozen=True)
class SimResult:
    decoded_counts: tuple[int, ...]
    user_counts: tuple[int, ...]
    N: int
    iterations: int

    @property
    def efficiencies(self) -> tuple[float, ...]:
        return tuple(k / self.N for k in self.decoded_counts)

    @property
    def efficiency(self) -> float:
        return sum(self.decoded_counts) / self.N

    @property
    def packet_loss(self) -> tuple[float, ...]:
        return tuple(1.0 - kh / k if k else 0.0
                     for kh, k in zip(self.decoded_counts, self.user_counts))


def generate_frame(config: FrameConfig, rng: np.random.Generator | None = None) -> FrameGraph:
    """Sample degrees, then place each user's replicas in distinct uniform slots."""
    if rng is None:
        rng = make_rng(config.seed)
    N = config.N
    user_slots = []
    for K, L in zip(config.user_counts, config.policy.left):
        if K == 0:
            user_slots.append([])
            continue
        deg = L.sample(rng, K)
        dm = int(deg.max())
        if dm > N:
            raise ValueError(f"sampled degree {dm} exceeds N={N}")
        draws = rng.integers(np.arange(dm), N, size=(K, dm)).tolist()
        user_slots.append([choose_slots(d, row) for d, row in zip(deg.tolist(), draws)])
    return FrameGraph(N, user_slots)


def peel_decode(graph: FrameGraph, order: Sequence[int] | None = None,
                on_sweep: Callable[[FrameGraph], None] | None = None) -> SimResult:
    """Modified peeling decoder; mutates ``graph`` (pass a copy to keep it).

    Each sweep visits slots in ``order`` (ascending by default). At a slot
    whose pattern is type-t decodable for one or more t, the unique
    unresolved user of each such type is decoded and all its replicas are
    cancelled. Sweeps repeat until one decodes nothing. Only slots whose
    counters changed since their last visit are re-examined, which is
    equivalent to a full scan because an unchanged pattern cannot become
    decodable.
    """
    N, T = graph.N, graph.T
    table = decodable_lookup(T)
    if order is None:
        order = list(range(N))
    else:
        order = list(order)
        if sorted(order) != list(range(N)):
            raise ValueError("order must be a permutation of the slots")
    pos = [0] * N
    for p, n in enumerate(order):
        pos[n] = p
    counts, idsum = graph.counts, graph.idsum
    user_slots, decoded = graph.user_slots, graph.decoded

    sweeps = 0
    current = list(range(N))
    while current:
        heapq.heapify(current)
        queued = set(current)
        later: set[int] = set()
        progress = False
        while current:
            p = heapq.heappop(current)
            n = order[p]
            base = n * T
            types = table.get(tuple(counts[base:base + T]))
            if not types:
                continue
            progress = True
            later.add(p)
            for t in types:
                ti = t - 1
                u = idsum[base + ti]
                decoded[ti][u] = True
                for m in user_slots[ti][u]:
                    k = m * T + ti
                    counts[k] -= 1
                    idsum[k] -= u
                    q = pos[m]
                    if q > p:
                        if q not in queued:
                            queued.add(q)
                            heapq.heappush(current, q)
                    elif q != p:
                        later.add(q)
        if progress:
            sweeps += 1
        if on_sweep is not None:
            on_sweep(graph)
        current = list(later) if progress else []

    return SimResult(tuple(sum(d) for d in decoded), graph.user_counts, N, sweeps)


def _trial(config: FrameConfig, seq: np.random.SeedSequence) -> SimResult:
    return peel_decode(generate_frame(config, make_rng(seq)))


def _trial_star(args):
    return _trial(*args)


@dataclass(frozen=True)
class TrialSummary:
    """Means and standard errors over independent frames."""

    N: int
    user_counts: tuple[int, ...]
    trials: int
    seed: int
    eta_hat_mean: tuple[float, ...]
    eta_hat_stderr: tuple[float, ...]
    plr_mean: tuple[float, ...]
    plr_stderr: tuple[float, ...]
    sum_mean: float
    sum_stderr: float
    sum_plr_mean: float
    sum_plr_stderr: float
    mean_iterations: float
    per_trial: tuple[SimResult, ...] = field(default=(), repr=False, compare=False)

    @property
    def eta_target(self) -> float:
        return sum(self.user_counts) / self.N

    def rows(self, eta_target: float | None = None) -> list[dict]:
        eta = self.eta_target if eta_target is None else eta_target
        common = {"trials": self.trials, "N": self.N, "seed": self.seed}
        rows = []
        for t in range(len(self.user_counts)):
            rows.append({"eta_target": eta, "type": str(t + 1),
                         "eta_hat_mean": self.eta_hat_mean[t],
                         "eta_hat_stderr": self.eta_hat_stderr[t],
                         "plr_mean": self.plr_mean[t], "plr_stderr": self.plr_stderr[t],
                         **common})
        rows.append({"eta_target": eta, "type": "sum", "eta_hat_mean": self.sum_mean,
                     "eta_hat_stderr": self.sum_stderr, "plr_mean": self.sum_plr_mean,
                     "plr_stderr": self.sum_plr_stderr, **common})
        return rows


def _mean_se(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = a.shape[0]
    mean = a.mean(axis=0)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, a.std(axis=0, ddof=1) / math.sqrt(n)


def summarize(results: Sequence[SimResult], seed: int, keep: bool = False) -> TrialSummary:
    first = results[0]
    K = np.array(first.user_counts, dtype=float)
    dec = np.array([r.decoded_counts for r in results], dtype=float)
    eff = dec / first.N
    with np.errstate(invalid="ignore", divide="ignore"):
        plr = np.where(K > 0, 1.0 - dec / np.where(K > 0, K, 1.0), 0.0)
    total = K.sum()
    sum_eff = dec.sum(axis=1) / first.N
    sum_plr = 1.0 - dec.sum(axis=1) / total if total else np.zeros(len(results))
    em, es = _mean_se(eff)
    pm, ps = _mean_se(plr)
    sm, ss = _mean_se(sum_eff[:, None])
    qm, qs = _mean_se(np.asarray(sum_plr)[:, None])
    return TrialSummary(
        N=first.N, user_counts=first.user_counts, trials=len(results), seed=seed,
        eta_hat_mean=tuple(em.tolist()), eta_hat_stderr=tuple(es.tolist()),
        plr_mean=tuple(pm.tolist()), plr_stderr=tuple(ps.tolist()),
        sum_mean=float(sm[0]), sum_stderr=float(ss[0]),
        sum_plr_mean=float(qm[0]), sum_plr_stderr=float(qs[0]),
        mean_iterations=float(np.mean([r.iterations for r in results])),
        per_trial=tuple(results) if keep else ())


def run_trials(config: FrameConfig, trials: int, seed: int | None = None,
               workers: int = 1, keep: bool = False) -> TrialSummary:
    """Run independent frames and aggregate them in trial-index order.

    The result does not depend on ``workers``: every trial owns a stream
    derived from ``(seed, trial index)``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    seed = config.seed if seed is None else seed
    seqs = trial_seeds(seed, trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_star, [(config, s) for s in seqs],
                                    chunksize=max(1, trials // (4 * workers))))
    else:
        results = [_trial(config, s) for s in seqs]
    return summarize(results, seed, keep)
