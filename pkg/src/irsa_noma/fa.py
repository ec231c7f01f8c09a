"""Frame-asynchronous IRSA with NOMA.

Users arrive by a Poisson process in every slot and transmit inside their
own local frame of ``N`` slots starting at the arrival slot. The receiver
decodes with a sliding window of ``W`` slots. The density evolution part
covers two types only; the simulator handles any number of types.

Two decoders are provided. ``"window"`` (default) decodes the users that
arrived in slot ``i`` on the slots ``[i, i + W - 1]`` as an independent
frame holding only the users that arrived inside it. ``"stream"`` decodes
greedily as slots close, and users that were never decoded keep
interfering with everyone after them.

Slots and classes are 0-based in arrays; class ``i`` (0-based) holds the
users that arrived in slot ``i``.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import _kernels
from .decodable import decodable_lookup, decodable_types
from .degree import DegreeDistribution
from .sim import choose_slots, make_rng

DEFAULT_WINDOW_FRAMES = 5
DEFAULT_HORIZON_FRAMES = 50
DECODERS = ("window", "stream")


@dataclass(frozen=True)
class FaConfig:
    N: int
    rates: tuple[float, ...]
    total_slots: int
    left: tuple[DegreeDistribution, ...]
    window: int | None = None
    seed: int = 0
    decoder: str = "window"

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(g) for g in self.rates))
        object.__setattr__(self, "left", tuple(self.left))
        if self.window is None:
            object.__setattr__(self, "window", DEFAULT_WINDOW_FRAMES * self.N)
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}")
        if len(self.rates) != len(self.left) or not self.rates:
            raise ValueError("need one arrival rate per left distribution")
        if any(g < 0 for g in self.rates):
            raise ValueError("arrival rates must be nonnegative")
        if not self.total_slots >= self.window >= self.N:
            raise ValueError("need total_slots >= window >= N")
        for L in self.left:
            if L.max_degree > self.N:
                raise ValueError(f"max degree {L.max_degree} exceeds N={self.N}")
            if L.coeffs[0] > 0:
                raise ValueError("degree 0 is not allowed")

    @property
    def T(self) -> int:
        return len(self.rates)

    @property
    def g(self) -> float:
        return sum(self.rates)


@dataclass(frozen=True)
class FaUser:
    type: int
    arrival: int
    slots: tuple[int, ...]


def fa_generate(config: FaConfig, rng: np.random.Generator | None = None) -> list[FaUser]:
    """Poisson arrivals per slot and type; first replica in the arrival slot.

    The remaining ``L - 1`` replicas go to distinct slots drawn uniformly
    from the next ``N - 1`` slots. Users are ordered by arrival, then type.
    """
    if rng is None:
        rng = make_rng(config.seed)
    N, S = config.N, config.total_slots
    users: list[FaUser] = []
    for t, (g, L) in enumerate(zip(config.rates, config.left), start=1):
        if g == 0:
            continue
        arrivals = np.repeat(np.arange(S), rng.poisson(g, S))
        K = len(arrivals)
        if K == 0:
            continue
        deg = L.sample(rng, K)
        dm = int(deg.max())
        if dm > N:
            raise ValueError(f"sampled degree {dm} exceeds N={N}")
        if dm > 1:
            draws = rng.integers(np.arange(dm - 1), N - 1, size=(K, dm - 1)).tolist()
        else:
            draws = [[]] * K
        for i, d, row in zip(arrivals.tolist(), deg.tolist(), draws):
            rest = sorted(i + 1 + off for off in choose_slots(d - 1, row))
            users.append(FaUser(t, i, (i, *rest)))
    users.sort(key=lambda u: u.arrival)
    return users


@dataclass(frozen=True)
class FaResult:
    """Packet loss over users arriving in ``[W, S - W)``."""

    N: int
    window: int
    g: float
    users: tuple[int, ...]
    lost: tuple[int, ...]
    seeds: int = 1

    @property
    def plr(self) -> tuple[float, ...]:
        return tuple(l / u if u else 0.0 for l, u in zip(self.lost, self.users))

    @property
    def total_plr(self) -> float:
        n = sum(self.users)
        return sum(self.lost) / n if n else 0.0

    def rows(self) -> list[dict]:
        common = {"N": self.N, "W": self.window, "seeds": self.seeds}
        out = [{"g": self.g, "type": str(t + 1), "plr": p, **common}
               for t, p in enumerate(self.plr)]
        out.append({"g": self.g, "type": "sum", "plr": self.total_plr, **common})
        return out


def fa_sliding_decode(config: FaConfig, users: Sequence[FaUser]) -> FaResult:
    """Decode slot by slot as the stream arrives.

    After slot ``s`` closes, the modified peeling decoder runs to completion
    on the slots ``[s - W + 1, s]`` with every already decoded packet
    cancelled. A user arriving at ``i`` counts as delivered only if it is
    decoded by the time slot ``i + W - 1`` closes.
    """
    T, W, S = config.T, config.window, config.total_slots
    table = decodable_lookup(T)
    last = max((u.slots[-1] for u in users), default=-1) + 1
    tx: list[list[int]] = [[] for _ in range(last)]
    for uid, u in enumerate(users):
        for s in u.slots:
            tx[s].append(uid)
    utype = [u.type - 1 for u in users]
    uslots = [u.slots for u in users]
    counts = [0] * (last * T)
    idsum = [0] * (last * T)
    decoded_at = [-1] * len(users)

    for s in range(last):
        base = s * T
        for uid in tx[s]:
            if decoded_at[uid] < 0:
                k = base + utype[uid]
                counts[k] += 1
                idsum[k] += uid
        floor = s - W + 1
        stack = [s]
        while stack:
            n = stack.pop()
            if n < floor:
                continue
            b = n * T
            types = table.get(tuple(counts[b:b + T]))
            if not types:
                continue
            for t in types:
                ti = t - 1
                uid = idsum[b + ti]
                decoded_at[uid] = s
                for m in uslots[uid]:
                    if m > s:
                        break
                    k = m * T + ti
                    counts[k] -= 1
                    idsum[k] -= uid
                    if m != n:
                        stack.append(m)
            stack.append(n)

    n_users = [0] * T
    n_lost = [0] * T
    for uid, u in enumerate(users):
        if W <= u.arrival < S - W:
            n_users[utype[uid]] += 1
            d = decoded_at[uid]
            if d < 0 or d > u.arrival + W - 1:
                n_lost[utype[uid]] += 1
    return FaResult(config.N, W, config.g, tuple(n_users), tuple(n_lost))


@lru_cache(maxsize=None)
def _dense_table(T: int) -> np.ndarray:
    """Bitmask of decodable types, indexed by counts capped at ``T + 1``."""
    cap = T + 1
    table = np.zeros((cap + 1) ** T, dtype=np.int64)
    for c in itertools.product(range(cap + 1), repeat=T):
        idx = sum(v * (cap + 1) ** t for t, v in enumerate(c))
        table[idx] = sum(1 << (t - 1) for t in decodable_types(c))
    table.setflags(write=False)
    return table


def fa_window_decode(config: FaConfig, users: Sequence[FaUser]) -> FaResult:
    """Decode every class on its own window ``[i, i + W - 1]``.

    Only users that arrived inside the window take part; replicas past its
    end are not yet received. Statistics cover arrivals in ``[W, S - W)``.
    """
    T, W, S = config.T, config.window, config.total_slots
    K = len(users)
    if K == 0:
        return FaResult(config.N, W, config.g, (0,) * T, (0,) * T)
    dmax = max(len(u.slots) for u in users)
    arrival = np.array([u.arrival for u in users], dtype=np.int64)
    utype = np.array([u.type - 1 for u in users], dtype=np.int64)
    udeg = np.array([len(u.slots) for u in users], dtype=np.int64)
    uslots = np.zeros((K, dmax), dtype=np.int64)
    for k, u in enumerate(users):
        uslots[k, :len(u.slots)] = u.slots
    last = int(uslots.max()) + 1
    first, stop = W, max(W, S - W)
    lost = _kernels.window_decode(arrival, utype, udeg, uslots, max(last, S), W, T,
                                  _dense_table(T), first, stop)
    counted = (arrival >= first) & (arrival < stop)
    n_users = np.bincount(utype[counted], minlength=T)
    n_lost = np.bincount(utype[counted & lost], minlength=T)
    return FaResult(config.N, W, config.g, tuple(n_users.tolist()), tuple(n_lost.tolist()))


def fa_decode(config: FaConfig, users: Sequence[FaUser]) -> FaResult:
    if config.decoder == "window":
        return fa_window_decode(config, users)
    return fa_sliding_decode(config, users)


def _stream(config: FaConfig, seq: np.random.SeedSequence) -> FaResult:
    return fa_decode(config, fa_generate(config, make_rng(seq)))


def fa_simulate(config: FaConfig, seeds: int = 1, workers: int = 1) -> FaResult:
    """Pool loss counts over ``seeds`` independent streams.

    Stream ``k`` uses child ``k`` of the config seed, so ``workers`` does not
    change the result.
    """
    seqs = np.random.SeedSequence(config.seed).spawn(seeds)
    if workers > 1 and seeds > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_stream, [config] * seeds, seqs))
    else:
        parts = [_stream(config, q) for q in seqs]
    users_tot = np.sum([r.users for r in parts], axis=0, dtype=np.int64)
    lost_tot = np.sum([r.lost for r in parts], axis=0, dtype=np.int64)
    return FaResult(config.N, config.window, config.g, tuple(users_tot.tolist()),
                    tuple(lost_tot.tolist()), seeds)


# --- density evolution (T = 2) ---------------------------------------------


def _shifted(L: DegreeDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Left distributions seen from the window after the first replica.

    ``sum_d L_d x^(d-1)`` (remaining edges of a node, slot-i message) and its
    normalized derivative (edge perspective inside the window).
    """
    shift = np.array(L.coeffs[1:], dtype=float)
    der = np.polynomial.polynomial.polyder(shift) if len(shift) > 1 else np.zeros(1)
    total = der.sum()
    lam = der / total if total > 0 else np.ones(1)
    return shift, lam


def _pad(rows: Sequence[np.ndarray]) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.zeros((len(rows), width))
    for k, r in enumerate(rows):
        out[k, :len(r)] = r
    return out


@dataclass
class FaDeState:
    """Per-class, per-type erasure values; ``y`` has shape (2, I_max).

    The diagnostic arrays are those computed from the previous state while
    producing this one (``None`` for an initial state).
    """

    y: np.ndarray
    iteration: int = 0
    beyond: np.ndarray | None = None
    y_tilde: np.ndarray | None = None
    x_self: np.ndarray | None = None
    x_window: np.ndarray | None = None
    x_tilde: np.ndarray | None = None


@dataclass(frozen=True)
class FaDeModel:
    left: tuple[DegreeDistribution, DegreeDistribution]
    rates: tuple[float, float]
    N: int

    def __post_init__(self):
        if len(self.left) != 2 or len(self.rates) != 2:
            raise NotImplementedError("frame-asynchronous DE is implemented for T=2 only")
        if self.N < 2:
            raise ValueError("N must be >= 2")

    def arrays(self):
        sh = [_shifted(L) for L in self.left]
        return (np.array(self.rates, dtype=float), _pad([s for s, _ in sh]),
                _pad([l for _, l in sh]),
                np.array([L.mean_degree() for L in self.left]))


def fa_de_init(I_max: int) -> FaDeState:
    return FaDeState(np.ones((2, I_max)), beyond=np.ones(2))


def _bulk_step(b, g, L_shift, lam_shift, mdeg):
    """Same recursion for a class far from any boundary, where the profile is flat."""
    pv = np.polynomial.polynomial.polyval
    xs = np.array([pv(b[t], L_shift[t]) for t in range(2)])
    xt = b * np.array([pv(b[t], lam_shift[t]) for t in range(2)])
    return _combine(g, xs, g * (mdeg - 1.0), xt)


def _combine(g, x_self, rk, x_tilde):
    f1 = np.exp(-g * x_self)
    f2 = np.exp(-rk * x_tilde)
    f3 = x_self * g * f1
    f4 = x_tilde * rk * f2
    at_most_one = f1 * f2 + f3 * f2 + f1 * f4
    return 1.0 - f1 * f2 * at_most_one[::-1]


def fa_de_step(state: FaDeState, model: FaDeModel) -> FaDeState:
    """Reference (vectorized numpy) step of the T=2 frame-asynchronous recursion."""
    y = np.asarray(state.y, dtype=float)
    if y.shape[0] != 2:
        raise NotImplementedError("frame-asynchronous DE is implemented for T=2 only")
    N = model.N
    g, L_shift, lam_shift, mdeg = model.arrays()
    T, I = y.shape
    idx = np.arange(I)
    pv = np.polynomial.polynomial.polyval

    far = np.ones(T) if state.beyond is None else np.asarray(state.beyond, dtype=float)
    padded = np.concatenate([y, np.repeat(far[:, None], N, axis=1)], axis=1)
    cs = np.concatenate([np.zeros((T, 1)), np.cumsum(padded, axis=1)], axis=1)
    y_tilde = (cs[:, idx + N] - cs[:, idx + 1]) / (N - 1)
    x_self = np.stack([pv(y_tilde[t], L_shift[t]) for t in range(T)])
    x_window = y * np.stack([pv(y_tilde[t], lam_shift[t]) for t in range(T)])

    cx = np.concatenate([np.zeros((T, 1)), np.cumsum(x_window, axis=1)], axis=1)
    lo = np.maximum(idx - (N - 1), 0)
    cnt = idx - lo
    x_tilde = np.where(cnt > 0, (cx[:, idx] - cx[:, lo]) / np.maximum(cnt, 1), 0.0)

    delta = np.minimum(idx, N - 1)[None, :] * g[:, None]
    rk = delta * (mdeg[:, None] - 1.0) / (N - 1)
    new_y = _combine(g[:, None], x_self, rk, x_tilde)
    new_far = _bulk_step(far, g, L_shift, lam_shift, mdeg)
    return FaDeState(new_y, state.iteration + 1, new_far, y_tilde, x_self, x_window, x_tilde)


@dataclass(frozen=True)
class FaDeOutcome:
    converged: bool
    iterations: int
    y: np.ndarray
    checked: int


def _checked_classes(I_max: int, tail: int) -> int:
    checked = I_max - tail
    if checked < 1:
        raise ValueError("horizon too short for the excluded tail")
    return checked


def run_fa_de(model: FaDeModel, I_max: int | None = None, eps: float = 1e-8,
              max_iter: int = 100_000, tail: int | None = None) -> FaDeOutcome:
    """Iterate from all-ones until the first ``I_max - tail`` classes are below eps.

    Classes past the horizon follow the boundary-free recursion (a flat
    profile started at 1), which is what a class far from the stream start
    sees. Above the frame-synchronous threshold that stays away from 0, so the
    wave front stalls at the horizon; ``tail`` (default ``5N``) excludes the
    front's width from the test.
    """
    N = model.N
    I_max = DEFAULT_HORIZON_FRAMES * N if I_max is None else I_max
    tail = DEFAULT_WINDOW_FRAMES * N if tail is None else tail
    checked = _checked_classes(I_max, tail)
    g, L_shift, lam_shift, mdeg = model.arrays()
    ok, it, y, _ = _kernels.run_fa(np.ones((2, I_max)), np.ones(2), g, L_shift, lam_shift,
                                   mdeg, N, checked, eps, max_iter, eps * 1e-3)
    return FaDeOutcome(bool(ok), int(it), y, checked)


def fa_de_trajectory(model: FaDeModel, I_max: int, iterations: int, every: int = 1):
    """Yield ``(l, y)`` every ``every`` steps, starting with the initial state."""
    g, L_shift, lam_shift, mdeg = model.arrays()
    y = np.ones((2, I_max))
    ny = np.empty_like(y)
    far, nfar = np.ones(2), np.empty(2)
    yield 0, y.copy()
    for it in range(1, iterations + 1):
        _kernels.fa_step(y, far, g, L_shift, lam_shift, mdeg, model.N, ny)
        _kernels.fa_bulk_step(far, g, L_shift, lam_shift, mdeg, model.N, nfar)
        y, ny = ny, y
        far, nfar = nfar, far
        if it % every == 0:
            yield it, y.copy()


def wave_front(y: np.ndarray, level: float = 1e-3) -> int:
    """Number of leading classes whose erasure (max over types) is below ``level``."""
    above = np.flatnonzero(np.max(y, axis=0) >= level)
    return int(above[0]) if above.size else y.shape[1]


def fa_threshold(left: Sequence[DegreeDistribution], shares: Sequence[float], N: int = 200,
                 I_max: int | None = None, eps: float = 1e-8, max_iter: int = 100_000,
                 bisect_tol: float = 5e-3, tail: int | None = None, hi: float = 2.0) -> float:
    """Largest sum arrival rate for which the FA recursion clears every checked class."""
    left = tuple(left)
    if len(left) != 2:
        raise NotImplementedError("frame-asynchronous DE is implemented for T=2 only")
    total = float(sum(shares))
    shares = [a / total for a in shares]

    def ok(g: float) -> bool:
        model = FaDeModel(left, (shares[0] * g, shares[1] * g), N)
        return run_fa_de(model, I_max, eps, max_iter, tail).converged

    if not ok(bisect_tol):
        from .de import ConvergenceError
        raise ConvergenceError(f"frame-asynchronous DE fails already at g={bisect_tol}")
    lo = bisect_tol
    while ok(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
