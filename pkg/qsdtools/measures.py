"""Probability measures on N* = {1, 2, ...} stored as sparse state-indexed Series."""
from __future__ import annotations

from typing import Callable, Iterable, Mapping, Union

import numpy as np
import pandas as pd

NORMALIZATION_TOL = 1e-12


class EmpiricalMeasure:
    """Nonnegative weights on N* summing to 1 (occupation-time or sample based)."""

    __slots__ = ("_w",)

    def __init__(self, weights: Union[Mapping[int, float], pd.Series], normalize: bool = True):
        w = pd.Series(weights, dtype=float)
        if len(w):
            w.index = w.index.astype(np.int64)
        w = w[w != 0].sort_index()
        if (w < 0).any():
            raise ValueError(f"negative weight at state {int(w[w < 0].index[0])}")
        if len(w) and w.index.min() < 1:
            raise ValueError(f"support must lie in N*, got state {int(w.index.min())}")
        total = float(w.sum())
        if total <= 0:
            raise ValueError("measure has no mass")
        if normalize:
            w = w / total
        elif abs(total - 1.0) > NORMALIZATION_TOL * max(1, len(w)):
            raise ValueError(f"weights sum to {total!r}, expected 1")
        w.index.name = "state"
        w.name = "weight"
        self._w = w

    @classmethod
    def point(cls, state: int) -> "EmpiricalMeasure":
        return cls({int(state): 1.0})

    @classmethod
    def from_positions(cls, positions: Iterable[int]) -> "EmpiricalMeasure":
        """(1/N) sum of point masses at the given positions."""
        return cls(pd.Series(list(positions)).value_counts())

    @classmethod
    def from_counts(cls, counts: Mapping[int, int]) -> "EmpiricalMeasure":
        """Normalized particle counts per state."""
        return cls({int(s): float(c) for s, c in counts.items()})

    @classmethod
    def from_array(cls, values, start: int = 1) -> "EmpiricalMeasure":
        values = np.asarray(values, dtype=float)
        return cls(pd.Series(values, index=np.arange(start, start + len(values))))

    @property
    def weights(self) -> pd.Series:
        return self._w.copy()

    @property
    def support(self) -> np.ndarray:
        return self._w.index.to_numpy()

    @property
    def total(self) -> float:
        return float(self._w.sum())

    def __getitem__(self, state: int) -> float:
        return float(self._w.get(int(state), 0.0))

    def __len__(self) -> int:
        return len(self._w)

    def __repr__(self) -> str:
        head = ", ".join(f"{i}: {v:.4g}" for i, v in self._w.head(6).items())
        more = ", ..." if len(self._w) > 6 else ""
        return f"EmpiricalMeasure({{{head}{more}}})"

    def to_array(self, M: int) -> np.ndarray:
        """Dense weights over states 1..M."""
        if len(self._w) and self._w.index.max() > M:
            raise ValueError(f"measure has mass at state {int(self._w.index.max())} beyond M={M}")
        out = np.zeros(M)
        out[self._w.index.to_numpy() - 1] = self._w.to_numpy()
        return out

    def mass(self, states: Iterable[int]) -> float:
        """mu(1_A) for a finite set A."""
        return float(self._w.reindex(list(states), fill_value=0.0).sum())

    def phi_moment(self, phi: Callable[[np.ndarray], np.ndarray]) -> float:
        """mu(phi) = sum_i mu_i phi(i)."""
        states = self._w.index.to_numpy()
        return float(np.dot(self._w.to_numpy(), phi(states)))

    def tail_mass(self, j: int) -> float:
        """mu({j+1, j+2, ...})."""
        return float(self._w[self._w.index > j].sum())

    def to_frame(self) -> pd.DataFrame:
        return self._w.reset_index()


def tv_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """(1/2) sum_i |mu_i - nu_i| over the union of the supports."""
    diff = mu.weights.sub(nu.weights, fill_value=0.0).abs().sum()
    return float(min(1.0, max(0.0, 0.5 * diff)))
