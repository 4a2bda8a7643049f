"""
Sparse measures, their parameter vectors m = (q; y) and weighted norms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from sik.exceptions import ConfigError
from sik.models import AtomSpec, Box

MERGE_RADIUS = 1e-9
Q_FLOOR = 1e-14


def _lexsort(positions: np.ndarray) -> np.ndarray:
    # np.lexsort sorts by the last key first
    if positions.shape[0] == 0:
        return np.arange(0)
    return np.lexsort(positions.T[::-1])


@dataclass(frozen=True)
class SparseMeasure:
    """
    Finite signed combination of Dirac atoms sum_n q_n delta_{y_n}.

    Build instances through `from_atoms` (or `SparseMeasure.empty`) to get the
    canonical form: atoms sorted lexicographically by position, near-duplicates
    merged and vanishing weights dropped.
    """

    weights: np.ndarray
    positions: np.ndarray
    domain: Optional[Box] = None

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        positions = np.asarray(self.positions, dtype=float)
        if positions.ndim == 1:
            positions = positions.reshape(len(weights), -1) if len(weights) else positions.reshape(0, 1)
        if positions.shape[0] != weights.shape[0]:
            raise ConfigError(
                f"{weights.shape[0]} weights but {positions.shape[0]} positions"
            )
        if np.any(weights == 0):
            raise ConfigError("atom weights must be nonzero")
        if self.domain is not None:
            if positions.shape[0] and positions.shape[1] != self.domain.dim:
                raise ConfigError("atom positions do not match the domain dimension")
            if not self.domain.contains(positions):
                raise ConfigError("atom positions must lie inside the source domain")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "positions", positions)

    @classmethod
    def from_atoms(
        cls,
        atoms: Iterable[Tuple[float, Any]],
        domain: Optional[Box] = None,
        dim: Optional[int] = None,
        merge_radius: float = MERGE_RADIUS,
        q_floor: float = Q_FLOOR,
    ) -> SparseMeasure:
        """Canonical measure from (weight, position) pairs."""
        atoms = list(atoms)
        d = dim or (domain.dim if domain is not None else None)
        if not atoms:
            return cls.empty(d or 1, domain)
        weights = np.array([float(w) for w, _ in atoms])
        positions = np.array([np.atleast_1d(np.asarray(y, dtype=float)) for _, y in atoms])
        return canonicalize(weights, positions, domain, merge_radius, q_floor)

    @classmethod
    def from_specs(cls, atoms: Sequence[AtomSpec], domain: Optional[Box] = None) -> SparseMeasure:
        return cls.from_atoms([(a.weight, a.position) for a in atoms], domain=domain)

    @classmethod
    def empty(cls, dim: int = 1, domain: Optional[Box] = None) -> SparseMeasure:
        return cls(np.zeros(0), np.zeros((0, dim)), domain)

    @property
    def n_atoms(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.positions.shape[1])

    def __len__(self) -> int:
        return self.n_atoms

    def __neg__(self) -> SparseMeasure:
        return SparseMeasure(-self.weights, self.positions, self.domain)

    def atoms(self) -> List[Tuple[float, np.ndarray]]:
        return [(float(w), p.copy()) for w, p in zip(self.weights, self.positions)]

    def to_json(self) -> List[Dict[str, Any]]:
        """JSON array of {"weight", "position"} objects."""
        return [
            {"weight": float(w), "position": [float(c) for c in p]}
            for w, p in zip(self.weights, self.positions)
        ]

    @classmethod
    def from_json(cls, data: Sequence[Dict[str, Any]], domain: Optional[Box] = None) -> SparseMeasure:
        specs = [AtomSpec(**item) for item in data]
        return cls.from_specs(specs, domain)


def canonicalize(
    weights: np.ndarray,
    positions: np.ndarray,
    domain: Optional[Box] = None,
    merge_radius: float = MERGE_RADIUS,
    q_floor: float = Q_FLOOR,
) -> SparseMeasure:
    """Merge atoms within `merge_radius`, drop |q| < q_floor and sort lexicographically."""
    weights = np.asarray(weights, dtype=float).reshape(-1)
    positions = np.asarray(positions, dtype=float).reshape(weights.shape[0], -1)
    dim = positions.shape[1] if positions.size else (domain.dim if domain else 1)
    if weights.shape[0] == 0:
        return SparseMeasure.empty(dim, domain)

    order = _lexsort(positions)
    merged_q: List[float] = []
    merged_y: List[np.ndarray] = []
    for idx in order:
        y = positions[idx]
        for k, rep in enumerate(merged_y):
            if np.linalg.norm(rep - y) <= merge_radius:
                merged_q[k] += weights[idx]
                break
        else:
            merged_q.append(float(weights[idx]))
            merged_y.append(y)

    q = np.asarray(merged_q)
    y = np.asarray(merged_y).reshape(len(merged_q), dim)
    keep = np.abs(q) >= q_floor
    q, y = q[keep], y[keep]
    order = _lexsort(y)
    return SparseMeasure(q[order], y[order].reshape(-1, dim), domain)


def merge_atoms(
    measure: SparseMeasure, radius: float = MERGE_RADIUS, q_floor: float = Q_FLOOR
) -> SparseMeasure:
    """Sum the weights of atoms closer than `radius`; drop weights below `q_floor`."""
    return canonicalize(measure.weights, measure.positions, measure.domain, radius, q_floor)


def total_variation(measure: SparseMeasure) -> float:
    """Total-variation norm sum_n |q_n|."""
    return float(np.sum(np.abs(measure.weights)))


def add_measures(first: SparseMeasure, second: SparseMeasure, radius: float = 1e-12) -> SparseMeasure:
    """Canonical sum of two measures; coincident atoms are combined."""
    if first.n_atoms == 0 and second.n_atoms == 0:
        return SparseMeasure.empty(first.dim, first.domain)
    return canonicalize(
        np.concatenate([first.weights, second.weights]),
        np.vstack([first.positions.reshape(-1, first.dim), second.positions.reshape(-1, first.dim)]),
        first.domain,
        merge_radius=radius,
    )


def jordan_split(measure: SparseMeasure) -> Tuple[SparseMeasure, SparseMeasure]:
    """Return (mu_plus, mu_minus) with mu = mu_plus - mu_minus, both positive."""
    pos = measure.weights > 0
    plus = SparseMeasure(measure.weights[pos], measure.positions[pos], measure.domain)
    minus = SparseMeasure(-measure.weights[~pos], measure.positions[~pos], measure.domain)
    return plus, minus


@dataclass(frozen=True)
class ParamVec:
    """Parameter vector m = (q; y) with y stacked atom by atom."""

    q: np.ndarray
    y: np.ndarray
    dim: int = 1

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if y.shape[0] != self.dim * q.shape[0]:
            raise ConfigError(
                f"parameter vector needs {self.dim * q.shape[0]} position entries, got {y.shape[0]}"
            )
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_array(cls, values: np.ndarray, n_atoms: int, dim: int = 1) -> ParamVec:
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.shape[0] != (1 + dim) * n_atoms:
            raise ConfigError("flat parameter vector has the wrong length")
        return cls(values[:n_atoms], values[n_atoms:], dim)

    @classmethod
    def zeros_like(cls, other: ParamVec) -> ParamVec:
        return cls(np.zeros_like(other.q), np.zeros_like(other.y), other.dim)

    @property
    def n_atoms(self) -> int:
        return int(self.q.shape[0])

    @property
    def positions(self) -> np.ndarray:
        return self.y.reshape(self.n_atoms, self.dim)

    @property
    def size(self) -> int:
        return int(self.q.shape[0] + self.y.shape[0])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q, self.y])

    def _check(self, other: ParamVec) -> None:
        if other.n_atoms != self.n_atoms or other.dim != self.dim:
            raise ConfigError("parameter vectors have mismatched dimensions")

    def __add__(self, other: ParamVec) -> ParamVec:
        self._check(other)
        return ParamVec(self.q + other.q, self.y + other.y, self.dim)

    def __sub__(self, other: ParamVec) -> ParamVec:
        self._check(other)
        return ParamVec(self.q - other.q, self.y - other.y, self.dim)

    def __mul__(self, scale: float) -> ParamVec:
        return ParamVec(self.q * scale, self.y * scale, self.dim)

    __rmul__ = __mul__


def params_from_measure(measure: SparseMeasure) -> ParamVec:
    """Serialize a measure to (q; y) in canonical (lexicographic) atom order."""
    order = _lexsort(measure.positions)
    return ParamVec(measure.weights[order], measure.positions[order].reshape(-1), measure.dim)


def measure_from_params(m: ParamVec, domain: Optional[Box] = None) -> SparseMeasure:
    """Inverse of `params_from_measure`; atoms are re-sorted, nothing is merged."""
    order = _lexsort(m.positions)
    return SparseMeasure(m.q[order], m.positions[order], domain)


@dataclass(frozen=True)
class Weighting:
    """Atom weights w_n = sqrt|q_n| and the induced diagonal W = diag(1/(4w^2); w^2 I_d)."""

    w: np.ndarray
    dim: int = 1
    diagonal: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ConfigError("weighting requires positive finite weights")
        object.__setattr__(self, "w", w)
        diag = np.concatenate([1.0 / (4.0 * w**2), np.repeat(w**2, self.dim)])
        object.__setattr__(self, "diagonal", diag)

    @property
    def n_atoms(self) -> int:
        return int(self.w.shape[0])

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diagonal)

    @property
    def sqrt_matrix(self) -> np.ndarray:
        return np.diag(np.sqrt(self.diagonal))

    @property
    def inv_matrix(self) -> np.ndarray:
        return np.diag(1.0 / self.diagonal)


def weighting_from(q: np.ndarray, dim: int = 1) -> Weighting:
    """Weighting induced by the coefficients q (w_n = sqrt|q_n|)."""
    q = np.asarray(q, dtype=float).reshape(-1)
    if np.any(q == 0):
        raise ConfigError("weighting is undefined for zero coefficients")
    return Weighting(np.sqrt(np.abs(q)), dim)


def weighted_norm(dm: ParamVec, weighting: Weighting) -> float:
    """||dm||_W = sqrt(sum |dq_n|^2 / (4|q_n|) + |q_n| ||dy_n||^2)."""
    if dm.n_atoms != weighting.n_atoms or dm.dim != weighting.dim:
        raise ConfigError(
            f"perturbation with {dm.n_atoms} atoms does not match weighting with "
            f"{weighting.n_atoms} atoms"
        )
    return float(np.sqrt(np.sum(weighting.diagonal * dm.as_array() ** 2)))


def ratio_R(q: np.ndarray, q_ref: np.ndarray) -> float:
    """Largest ratio max(sqrt|q_n/q_ref_n|, sqrt|q_ref_n/q_n|) over atoms."""
    q = np.abs(np.asarray(q, dtype=float).reshape(-1))
    q_ref = np.abs(np.asarray(q_ref, dtype=float).reshape(-1))
    if q.shape != q_ref.shape:
        raise ConfigError("coefficient vectors must have equal length")
    if np.any(q == 0) or np.any(q_ref == 0):
        raise ConfigError("weight ratio is undefined for zero coefficients")
    if q.size == 0:
        return 1.0
    ratio = np.sqrt(q / q_ref)
    return float(np.max(np.maximum(ratio, 1.0 / ratio)))
