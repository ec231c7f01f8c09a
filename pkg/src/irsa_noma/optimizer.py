"""Differential-evolution search for left degree distributions.

The genome is one block per type holding the weights of degrees
``2..d_max``; degrees 0 and 1 are not represented, so every decoded
candidate has zero mass there by construction.

Mutation follows the DEEP scheme: the base vector is the current best
individual with probability ``p_best`` and a random one otherwise
(``DE/best/1`` mixed with ``DE/rand/1``), and individuals that have not
improved for ``max_age`` generations are replaced by fresh random ones
(the best individual is never replaced). Crossover is binomial, selection
greedy. Components leaving ``[0, 1]`` are bounced back toward the base
vector: ``base + r * (bound - base)`` with ``r`` uniform on ``[0, 1)``.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .de import DEFAULT_EPS, DEFAULT_MAX_ITER, ConvergenceError, stability_check, threshold
from .degree import DegreeDistribution
from .policy import Policy, equal_shares
from .sim import make_rng

CACHE_GRID = 1e-6
CONSTRAINT_TOL = 1e-9


@dataclass(frozen=True)
class OptConfig:
    T: int
    d_max: tuple[int, ...] | int = 8
    load_shares: tuple[float, ...] | None = None
    population_size: int = 100
    generations: int = 500
    F: float = 0.5
    CR: float = 0.9
    seed: int = 0
    enforce_stability: bool = False
    bisect_tol: float = 1e-3
    p_best: float = 0.5
    max_age: int = 30
    eps: float = DEFAULT_EPS
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        dm = self.d_max
        dm = (int(dm),) * self.T if isinstance(dm, (int, np.integer)) else tuple(int(d) for d in dm)
        object.__setattr__(self, "d_max", dm)
        shares = equal_shares(self.T) if self.load_shares is None else self.load_shares
        total = float(sum(shares))
        object.__setattr__(self, "load_shares", tuple(float(a) / total for a in shares))
        if len(dm) != self.T or len(self.load_shares) != self.T:
            raise ValueError("need one d_max and one share per type")
        if min(dm) < 2:
            raise ValueError("d_max must be >= 2")
        if self.population_size < 4:
            raise ValueError("population_size must be >= 4")
        if not 0 < self.F <= 2:
            raise ValueError("F must lie in (0, 2]")
        if not 0 <= self.CR <= 1:
            raise ValueError("CR must lie in [0, 1]")
        if not 0 <= self.p_best <= 1:
            raise ValueError("p_best must lie in [0, 1]")
        if self.generations < 0 or self.max_age < 1:
            raise ValueError("generations must be >= 0 and max_age >= 1")

    @property
    def blocks(self) -> list[slice]:
        out, start = [], 0
        for d in self.d_max:
            out.append(slice(start, start + d - 1))
            start += d - 1
        return out

    @property
    def genome_length(self) -> int:
        return sum(d - 1 for d in self.d_max)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["d_max"] = list(self.d_max)
        d["load_shares"] = list(self.load_shares)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OptConfig":
        d = dict(d)
        if isinstance(d.get("d_max"), list):
            d["d_max"] = tuple(d["d_max"])
        if d.get("load_shares") is not None:
            d["load_shares"] = tuple(d["load_shares"])
        return cls(**d)


@dataclass(frozen=True)
class Candidate:
    genome: np.ndarray
    policy: Policy


def _normalize_blocks(g: np.ndarray, blocks: Sequence[slice]) -> np.ndarray:
    out = g.copy()
    for b in blocks:
        s = out[b].sum()
        if s > 0:
            out[b] /= s
        else:
            out[b] = 1.0 / (b.stop - b.start)
    return out


def bounce_back(trial: np.ndarray, base: np.ndarray, rng: np.random.Generator,
                lower: float = 0.0, upper: float = 1.0) -> np.ndarray:
    """Move out-of-bounds components to a random point between base and the bound."""
    out = np.array(trial, dtype=float)
    low = out < lower
    high = out > upper
    r = rng.random(out.shape)
    out[low] = base[low] + r[low] * (lower - base[low])
    out[high] = base[high] + r[high] * (upper - base[high])
    return out


def repair(genome: np.ndarray, config: OptConfig, base: np.ndarray | None = None,
           rng: np.random.Generator | None = None) -> Candidate:
    """Bounce (or, without a base vector, clip) into ``[0, 1]`` and normalize per type."""
    g = np.asarray(genome, dtype=float)
    if g.shape != (config.genome_length,) or not np.all(np.isfinite(g)):
        raise ValueError("genome must be a finite vector of the configured length")
    if base is None:
        g = np.clip(g, 0.0, 1.0)
    else:
        g = bounce_back(g, np.asarray(base, dtype=float), rng if rng is not None else make_rng(0))
    g = _normalize_blocks(g, config.blocks)
    return Candidate(g, decode(g, config))


def decode(genome: np.ndarray, config: OptConfig) -> Policy:
    left = tuple(DegreeDistribution(np.concatenate([[0.0, 0.0], genome[b]]), "node-left")
                 for b in config.blocks)
    return Policy(left, config.load_shares)


def _check_constraints(policy: Policy) -> None:
    for L in policy.left:
        c = L.coeffs
        if np.any(c < 0) or abs(c.sum() - 1.0) > CONSTRAINT_TOL or c[0] != 0 or (len(c) > 1 and c[1] != 0):
            raise AssertionError(f"candidate violates the degree constraints: {c}")


def fitness(candidate: Candidate | Policy, eps: float = DEFAULT_EPS,
            max_iter: int = DEFAULT_MAX_ITER, bisect_tol: float = 1e-3,
            enforce_stability: bool = False) -> float:
    """DE threshold of the candidate; 0 on failure or a violated stability gate.

    The stability gate is checked at ``eta + 2 * bisect_tol``: one tolerance
    for the bisection bracket and one for the fixed-point detector, which
    gives up on contraction rates above ``1 - 1e-3``. Policies whose threshold
    is the stability limit itself (all mass on degree 2) are thus rejected.
    """
    policy = candidate.policy if isinstance(candidate, Candidate) else candidate
    _check_constraints(policy)
    try:
        eta = threshold(policy, eps, max_iter, bisect_tol)
    except ConvergenceError:
        return 0.0
    if enforce_stability and not all(m.satisfied for m in stability_check(policy, eta + 2 * bisect_tol)):
        return 0.0
    return eta


def _fitness_job(args) -> float:
    return fitness(*args)


@dataclass
class OptResult:
    best_policy: Policy
    best_threshold: float
    history: list[float]
    seed: int
    config: OptConfig
    evaluations: int = 0
    best_genome: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"best_policy": self.best_policy.to_dict(), "best_threshold": self.best_threshold,
                "history": list(self.history), "seed": self.seed,
                "config": self.config.to_dict(), "evaluations": self.evaluations}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _Evaluator:
    """Fitness with a cache keyed by the genome rounded to a 1e-6 grid."""

    def __init__(self, config: OptConfig, workers: int = 1):
        self.config = config
        self.workers = workers
        self.cache: dict[bytes, float] = {}
        self.evaluations = 0

    def key(self, genome: np.ndarray) -> bytes:
        return np.round(genome / CACHE_GRID).astype(np.int64).tobytes()

    def __call__(self, cands: Sequence[Candidate]) -> list[float]:
        c = self.config
        keys = [self.key(x.genome) for x in cands]
        todo: dict[bytes, Candidate] = {}
        for k, x in zip(keys, cands):
            if k not in self.cache and k not in todo:
                todo[k] = x
        jobs = [(x.policy, c.eps, c.max_iter, c.bisect_tol, c.enforce_stability)
                for x in todo.values()]
        if self.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                vals = list(pool.map(_fitness_job, jobs,
                                     chunksize=max(1, len(jobs) // (4 * self.workers))))
        else:
            vals = [_fitness_job(j) for j in jobs]
        self.evaluations += len(jobs)
        self.cache.update(zip(todo.keys(), vals))
        return [self.cache[k] for k in keys]


def _distinct(rng: np.random.Generator, n: int, exclude: int, k: int) -> list[int]:
    picks = rng.choice(n - 1, size=k, replace=False)
    return [int(p) + (p >= exclude) for p in picks]


def optimize(config: OptConfig, workers: int = 1, progress=None) -> OptResult:
    """Maximize the DE threshold; deterministic for a given config.

    All random draws of a generation happen before its fitness evaluations,
    so ``workers`` does not change the result.
    """
    rng = make_rng(config.seed)
    P, D = config.population_size, config.genome_length
    evaluate = _Evaluator(config, workers)

    pop = [repair(rng.random(D), config) for _ in range(P)]
    fit = evaluate(pop)
    age = np.zeros(P, dtype=np.int64)
    best = int(np.argmax(fit))
    history = [fit[best]]

    for gen in range(config.generations):
        trials = []
        for i in range(P):
            r1, r2, r3 = _distinct(rng, P, i, 3)
            base = pop[best].genome if rng.random() < config.p_best else pop[r1].genome
            mutant = base + config.F * (pop[r2].genome - pop[r3].genome)
            mask = rng.random(D) < config.CR
            mask[rng.integers(D)] = True
            trial = np.where(mask, mutant, pop[i].genome)
            trials.append(repair(trial, config, base, rng))
        tfit = evaluate(trials)
        for i in range(P):
            if tfit[i] >= fit[i]:
                if tfit[i] > fit[i]:
                    age[i] = 0
                else:
                    age[i] += 1
                pop[i], fit[i] = trials[i], tfit[i]
            else:
                age[i] += 1
        best = int(np.argmax(fit))
        old = [i for i in range(P) if age[i] > config.max_age and i != best]
        if old:
            fresh = [repair(rng.random(D), config) for _ in old]
            for i, x, f in zip(old, fresh, evaluate(fresh)):
                pop[i], fit[i], age[i] = x, f, 0
            best = int(np.argmax(fit))
        history.append(fit[best])
        if progress is not None:
            progress(gen + 1, fit[best])

    return OptResult(pop[best].policy, fit[best], history, config.seed, config,
                     evaluate.evaluations, pop[best].genome)
