"""Policies: one left degree distribution per user type plus load shares."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .degree import DegreeDistribution

SHARE_TOL = 1e-12


@dataclass(frozen=True)
class Policy:
    """Per-type node-left distributions and the fraction of users of each type.

    ``shares[t]`` is the fraction alpha of the total load carried by type
    ``t + 1``; the per-type target efficiency is ``alpha * eta``.
    """

    left: tuple[DegreeDistribution, ...]
    shares: tuple[float, ...]
    name: str = ""
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "left", tuple(self.left))
        object.__setattr__(self, "shares", tuple(float(a) for a in self.shares))
        if len(self.left) == 0 or len(self.left) != len(self.shares):
            raise ValueError("need one share per left distribution")
        if any(a <= 0 for a in self.shares):
            raise ValueError("load shares must be positive")
        if abs(sum(self.shares) - 1.0) > SHARE_TOL:
            raise ValueError(f"load shares sum to {sum(self.shares)!r}, not 1")
        for t, L in enumerate(self.left, start=1):
            if L.kind != "node-left":
                raise ValueError(f"type {t}: expected a node-left distribution")
            c = L.coeffs
            if c[0] > 0 or (len(c) > 1 and c[1] > 0):
                raise ValueError(f"type {t}: degrees 0 and 1 are not allowed")

    @property
    def T(self) -> int:
        return len(self.left)

    @property
    def mean_degrees(self) -> tuple[float, ...]:
        return tuple(L.mean_degree() for L in self.left)

    @property
    def max_degree(self) -> int:
        return max(L.max_degree for L in self.left)

    def rates(self, eta: float) -> tuple[float, ...]:
        """Poisson right-degree rates ``alpha_t * eta * L_t'(1)``."""
        return tuple(a * eta * m for a, m in zip(self.shares, self.mean_degrees))

    def user_counts(self, eta: float, N: int) -> tuple[int, ...]:
        return tuple(int(round(a * eta * N)) for a in self.shares)

    def swapped(self, order: Sequence[int]) -> "Policy":
        """Relabel types; ``order`` lists old 0-based indices in new order."""
        return Policy(tuple(self.left[i] for i in order),
                      tuple(self.shares[i] for i in order), self.name)

    def to_dict(self) -> dict:
        d = {"left": [L.to_pairs() for L in self.left], "shares": list(self.shares)}
        if self.name:
            d["name"] = self.name
        if self.warnings:
            d["warnings"] = list(self.warnings)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        left = tuple(DegreeDistribution.from_pairs(p, normalize=bool(d.get("normalize", False)))
                     for p in d["left"])
        shares = d.get("shares")
        if shares is None:
            shares = equal_shares(len(left))
        return cls(left, tuple(shares), d.get("name", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def uniform_policy(L: DegreeDistribution, T: int, name: str = "") -> Policy:
    """Same distribution for all ``T`` types with equal load shares."""
    return Policy((L,) * T, equal_shares(T), name)


def equal_shares(T: int) -> tuple[float, ...]:
    return tuple([1.0 / T] * T)


def shares_from_ratios(ratios: Sequence[float]) -> tuple[float, ...]:
    """``K1 : K2 : ...`` user-count ratios to shares summing to 1."""
    total = float(sum(ratios))
    shares = [r / total for r in ratios]
    # absorb rounding so the sum is 1 to machine precision
    shares[-1] = 1.0 - sum(shares[:-1])
    return tuple(shares)


def _L(pairs, normalize=False) -> DegreeDistribution:
    return DegreeDistribution.from_pairs(pairs, normalize=normalize)


_P2_T1 = [[2, 0.3305], [4, 0.0165], [5, 0.0019], [6, 0.01825], [7, 0.0141], [8, 0.4545]]
_P2_WARNING = ("P2 type-1 coefficients as printed sum to 0.83575; renormalized to 1")

# Optimized policies with d_max = 8 and their DE thresholds.
PRESETS: dict[str, Policy] = {
    "P1": Policy(
        (_L([[2, 0.665], [3, 0.1515], [8, 0.1835]]),) * 2, equal_shares(2), "P1"),
    "P2": Policy(
        (_L(_P2_T1, normalize=True),
         _L([[2, 0.4910], [3, 0.3145], [5, 0.0028], [6, 0.0029], [7, 0.0287], [8, 0.1601]])),
        shares_from_ratios([1, 3]), "P2", (_P2_WARNING,)),
    "P3": Policy(
        (_L([[2, 0.9388], [4, 0.0032], [5, 0.058]]),
         _L([[2, 0.508], [3, 0.276], [8, 0.216]])),
        shares_from_ratios([1, 7]), "P3"),
    "P4": Policy(
        (_L([[2, 0.746], [3, 0.093], [8, 0.161]]),
         _L([[2, 0.7507], [3, 0.0846], [8, 0.1647]]),
         _L([[2, 0.7507], [3, 0.0846], [8, 0.1647]])),
        equal_shares(3), "P4"),
    "P5": Policy((_L([[2, 0.5], [3, 0.28], [8, 0.22]]),), (1.0,), "P5"),
}

PUBLISHED_THRESHOLDS = {"P1": 1.433, "P2": 1.232, "P3": 1.064, "P4": 1.851, "P5": 0.938}


def resolve_policy(spec) -> Policy:
    """Accept a preset name, ``"regular:d:T"`` or an inline dict."""
    if isinstance(spec, Policy):
        return spec
    if isinstance(spec, str):
        if spec in PRESETS:
            return PRESETS[spec]
        if spec.startswith("regular:"):
            parts = spec.split(":")
            if len(parts) != 3:
                raise ValueError("regular policies are written regular:<degree>:<T>")
            d, T = int(parts[1]), int(parts[2])
            return uniform_policy(DegreeDistribution.regular(d), T, spec)
        raise ValueError(f"unknown policy {spec!r}")
    if isinstance(spec, dict):
        if "ratios" in spec:
            spec = dict(spec)
            spec["shares"] = list(shares_from_ratios(spec.pop("ratios")))
        return Policy.from_dict(spec)
    raise ValueError(f"cannot interpret policy {spec!r}")
