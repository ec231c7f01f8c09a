"""Degree distributions of the user/slot bipartite graph.

Polynomials are stored as coefficient arrays indexed by exponent, so a
node-perspective distribution ``L[x] = sum_d L_d x^d`` keeps ``L_d`` at index
``d`` while an edge-perspective one ``lambda[x] = sum_d lambda_d x^(d-1)``
keeps ``lambda_d`` at index ``d - 1``. Evaluation is therefore uniform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

KINDS = ("node-left", "node-right", "edge-left", "edge-right")

NORMALIZE_TOL = 1e-9


def _check_unit(x: float) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    return x


class DegreeDistribution:
    """Probability mass over polynomial exponents.

    Coefficients are normalized on construction when they sum to 1 within
    ``1e-9``; anything further off is rejected (use :meth:`renormalized` to
    force it).
    """

    __slots__ = ("_coeffs", "kind")

    def __init__(self, coeffs: Sequence[float] | np.ndarray, kind: str = "node-left"):
        if kind not in KINDS:
            raise ValueError(f"unknown kind {kind!r}")
        c = np.array(coeffs, dtype=float).ravel()
        if c.size == 0:
            raise ValueError("empty distribution")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("coefficients must be finite and nonnegative")
        total = c.sum()
        if abs(total - 1.0) > NORMALIZE_TOL:
            raise ValueError(f"coefficients sum to {total:.12g}, not 1")
        c = c / total
        # trailing zeros are allowed but dropped so max_degree is meaningful
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1]
        c.setflags(write=False)
        self._coeffs = c
        self.kind = kind

    @classmethod
    def renormalized(cls, coeffs, kind: str = "node-left") -> "DegreeDistribution":
        c = np.asarray(coeffs, dtype=float)
        s = c.sum()
        if s <= 0:
            raise ValueError("coefficients sum to zero")
        return cls(c / s, kind)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]], kind: str = "node-left",
                   normalize: bool = False) -> "DegreeDistribution":
        """Build from ``[[degree, probability], ...]`` (the JSON wire format)."""
        pairs = [(int(d), float(p)) for d, p in pairs]
        if not pairs:
            raise ValueError("empty distribution")
        if any(d < 0 for d, _ in pairs):
            raise ValueError("negative degree")
        c = np.zeros(max(d for d, _ in pairs) + 1)
        for d, p in pairs:
            c[d] += p
        if normalize:
            return cls.renormalized(c, kind)
        return cls(c, kind)

    @classmethod
    def regular(cls, d: int, kind: str = "node-left") -> "DegreeDistribution":
        c = np.zeros(d + 1)
        c[d] = 1.0
        return cls(c, kind)

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def max_degree(self) -> int:
        """Largest exponent with nonzero mass (for edge kinds this is d_max - 1)."""
        return len(self._coeffs) - 1

    def to_pairs(self) -> list[list]:
        return [[int(d), float(p)] for d, p in enumerate(self._coeffs) if p > 0]

    def evaluate(self, x: float) -> float:
        x = _check_unit(x)
        return float(np.polynomial.polynomial.polyval(x, self._coeffs))

    def derivative(self, x: float, k: int = 1) -> float:
        """k-th derivative at x, by exact coefficient shifting."""
        x = _check_unit(x)
        if k < 0:
            raise ValueError("k must be nonnegative")
        if k == 0:
            return self.evaluate(x)
        if k > self.max_degree:
            return 0.0
        c = np.polynomial.polynomial.polyder(self._coeffs, k)
        return float(np.polynomial.polynomial.polyval(x, c))

    def mean_degree(self) -> float:
        """``L'[1] = sum_d d L_d``."""
        return float(np.dot(np.arange(len(self._coeffs)), self._coeffs))

    def edge_perspective(self) -> "DegreeDistribution":
        """``lambda[x] = L'[x] / L'[1]``; ``lambda_d`` lands at exponent ``d - 1``."""
        if self.kind not in ("node-left", "node-right"):
            raise ValueError("edge perspective needs a node-perspective distribution")
        m = self.mean_degree()
        if m <= 0:
            raise ValueError("mean degree is 0; edge perspective undefined")
        c = np.polynomial.polynomial.polyder(self._coeffs) / m
        return DegreeDistribution(c, "edge-" + self.kind.split("-")[1])

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw degrees by inverse-CDF lookup on one uniform per draw."""
        cdf = np.cumsum(self._coeffs)
        cdf[-1] = 1.0
        u = rng.random(size)
        d = np.searchsorted(cdf, u, side="right")
        if size is None:
            return int(d)
        return d.astype(np.int64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DegreeDistribution):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self._coeffs, other._coeffs)

    def __hash__(self) -> int:
        return hash((self.kind, self._coeffs.tobytes()))

    def __repr__(self) -> str:
        terms = " + ".join(f"{p:g}x^{d}" for d, p in enumerate(self._coeffs) if p > 0)
        return f"DegreeDistribution({terms}, kind={self.kind!r})"


@dataclass(frozen=True)
class PoissonRight:
    """Closed-form right distribution ``exp(-rate (1 - x))``.

    It is its own edge perspective, so one object serves as both R and rho.
    """

    rate: float

    def __post_init__(self):
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValueError(f"rate must be finite and nonnegative, got {self.rate}")

    def evaluate(self, x: float) -> float:
        x = _check_unit(x)
        return math.exp(-self.rate * (1.0 - x))

    def derivative(self, x: float, k: int = 1) -> float:
        x = _check_unit(x)
        if k < 0:
            raise ValueError("k must be nonnegative")
        return self.rate**k * math.exp(-self.rate * (1.0 - x))

    def mean_degree(self) -> float:
        return self.rate

    def edge_perspective(self) -> "PoissonRight":
        return self


RightDistribution = Union[DegreeDistribution, PoissonRight]


def evaluate(dist: RightDistribution, x: float) -> float:
    return dist.evaluate(x)


def derivative_evaluate(dist: RightDistribution, x: float, k: int) -> float:
    return dist.derivative(x, k)


def to_edge_perspective(dist: DegreeDistribution) -> DegreeDistribution:
    return dist.edge_perspective()


def mean_degree(dist: DegreeDistribution) -> float:
    return dist.mean_degree()


def sample_degree(dist: DegreeDistribution, rng: np.random.Generator) -> int:
    return dist.sample(rng)
