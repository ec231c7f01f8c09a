"""Property suites shared by the unit tests and the acceptance run.

Each ``check_*`` function raises ``AssertionError`` on the first violation
and returns a short description of what it covered.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy import stats

from irsa_noma import de, fa
from irsa_noma.decodable import enumerate_decodable_set, is_type_decodable
from irsa_noma.degree import DegreeDistribution, PoissonRight
from irsa_noma.policy import PRESETS, Policy, shares_from_ratios
from irsa_noma.sim import FrameConfig, FrameGraph, peel_decode, run_trials

from .oracles import brute_decodable_set


def random_left(rng, d_max=8, sparse=True):
    w = rng.random(d_max - 1)
    if sparse:
        w[rng.random(d_max - 1) < 0.4] = 0.0
        if w.sum() == 0:
            w[rng.integers(d_max - 1)] = 1.0
    return DegreeDistribution(np.concatenate([[0.0, 0.0], w / w.sum()]), "node-left")


def random_policy(rng, T, d_max=8):
    return Policy(tuple(random_left(rng, d_max) for _ in range(T)),
                  shares_from_ratios(rng.uniform(0.2, 1.0, T)))


def random_graph(rng, N, T, max_users, max_deg=4):
    user_slots = []
    for _ in range(T):
        K = int(rng.integers(0, max_users + 1))
        users = []
        for _ in range(K):
            d = int(rng.integers(1, min(max_deg, N) + 1))
            users.append(sorted(rng.choice(N, size=d, replace=False).tolist()))
        user_slots.append(users)
    return user_slots


def check_decodable_bruteforce(T_max=5):
    for T in range(1, T_max + 1):
        for t in range(1, T + 1):
            got = set(enumerate_decodable_set(t, T))
            assert got == brute_decodable_set(t, T), (t, T)
            for c in itertools.product(range(T + 1), repeat=T):
                assert is_type_decodable(c, t) == (c in got)
    return f"decodable sets match brute force for T<= {T_max}"


def check_confluence(graphs=1000, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(graphs):
        N = int(rng.integers(2, 51))
        T = int(rng.integers(1, 4))
        slots = random_graph(rng, N, T, max_users=int(rng.integers(1, 2 * N + 1)))
        base = FrameGraph(N, slots)
        results = []
        for order in (list(range(N)), list(range(N))[::-1], rng.permutation(N).tolist()):
            g = base.copy()
            peel_decode(g, order)
            results.append(g.decoded_set())
        assert results[0] == results[1] == results[2]
    return f"peeling confluence on {graphs} graphs"


def check_de_monotone(states=1000, seed=0):
    rng = np.random.default_rng(seed)
    for k in range(states):
        T = int(rng.integers(1, 4))
        policy = random_policy(rng, T)
        prob = de.DeProblem(policy, float(rng.uniform(0.1, 2.5)))
        y = rng.random(T)
        z = np.minimum(1.0, y + rng.random(T) * rng.random())
        fy = np.array(de.de_step_poisson(y, prob))
        fz = np.array(de.de_step_poisson(z, prob))
        assert np.all(fy <= fz + 1e-15), (y, z, fy, fz)
        assert de.de_step_poisson([0.0] * T, prob) == tuple([0.0] * T)
    return f"DE step monotone and origin fixed on {states} states"


def check_exact_poisson_t2(triples=100, seed=1):
    rng = np.random.default_rng(seed)
    for _ in range(triples):
        policy = random_policy(rng, 2)
        eta = float(rng.uniform(0.1, 2.0))
        y = rng.random(2)
        prob = de.DeProblem(policy, eta)
        rights = tuple(PoissonRight(r) for r in prob.rates())
        a = de.de_step_exact_t2(y, prob.lefts(), rights)
        b = de.de_step_poisson(y, prob)
        assert np.max(np.abs(np.subtract(a, b))) <= 1e-12, (a, b)
    return f"exact T=2 step equals Poisson step on {triples} triples"


def check_wavefront(runs=10, seed=2):
    """Front position never moves back along below-threshold FA trajectories."""
    rng = np.random.default_rng(seed)
    L3 = DegreeDistribution.regular(3)
    for k in range(runs):
        N = int(rng.integers(10, 41))
        g = float(rng.uniform(0.9, 1.2))
        model = fa.FaDeModel((L3, L3), (g / 2, g / 2), N)
        fronts = []
        for l, y in fa.fa_de_trajectory(model, 20 * N, 1500, every=5):
            fronts.append(fa.wave_front(y))
            if l <= 5:
                assert np.all(np.diff(y, axis=1) >= -1e-12), (N, g, l)
        assert all(b >= a for a, b in zip(fronts, fronts[1:])), (N, g, fronts)
        assert fronts[-1] > fronts[0], (N, g)
    return f"wave front nondecreasing on {runs} runs"


def check_sampling_chisquare(samples=10**6, seed=3, alpha=1e-3):
    rng = np.random.default_rng(seed)
    for L in (PRESETS["P5"].left[0], PRESETS["P1"].left[0], PRESETS["P2"].left[0]):
        draws = L.sample(rng, samples)
        support = np.flatnonzero(L.coeffs)
        counts = np.array([(draws == d).sum() for d in support])
        assert counts.sum() == samples
        p = stats.chisquare(counts, L.coeffs[support] * samples).pvalue
        assert p > alpha, (L, p)
    return f"chi-square sampling test at {samples} samples"


def check_thread_determinism(trials=24):
    cfg = FrameConfig.for_load(PRESETS["P1"], 1.3, 200, seed=11)
    a = run_trials(cfg, trials, workers=1, keep=True)
    b = run_trials(cfg, trials, workers=3, keep=True)
    assert a == b and a.per_trial == b.per_trial
    return "run_trials identical for 1 and 3 workers"
