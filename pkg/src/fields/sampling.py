"""
Multilinear sampling of regular sample grids in index space.

A ``LinearSampler`` is built once for a set of query coordinates and can then
gather values, scatter cotangents back onto the grid (the transpose of
gather) and report the derivative of the sampled value with respect to the
query coordinates. Coordinates outside ``[0, n-1]`` are clamped to the
boundary sample; the coordinate derivative is zero on the clamped side.
"""
from itertools import product
from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp


class LinearSampler:
    """Precomputed multilinear weights for ``coords`` of shape ``(m, rank)``."""

    def __init__(self, shape: Sequence[int], coords: np.ndarray):
        self.shape = tuple(int(n) for n in shape)
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, len(self.shape))
        upper = np.array(self.shape, dtype=np.float64) - 1.0
        clamped = np.clip(coords, 0.0, upper)
        lower = np.clip(np.floor(clamped), 0, upper - 1).astype(np.int64)

        self.count = coords.shape[0]
        self.lower = lower
        self.frac = clamped - lower
        self.inside = (coords >= 0.0) & (coords <= upper)
        self._corners: List[Tuple[Tuple[np.ndarray, ...], np.ndarray, Tuple[int, ...]]] = []
        for bits in product((0, 1), repeat=len(self.shape)):
            index = tuple(lower[:, a] + bits[a] for a in range(len(self.shape)))
            weight = np.ones(self.count)
            for a, bit in enumerate(bits):
                weight = weight * (self.frac[:, a] if bit else 1.0 - self.frac[:, a])
            self._corners.append((index, weight, bits))

    def gather(self, values: np.ndarray) -> np.ndarray:
        """Interpolated values at the query coordinates, shape ``(m,)``."""
        values = np.asarray(values).reshape(self.shape)
        out = np.zeros(self.count)
        for index, weight, _ in self._corners:
            out += weight * values[index]
        return out

    def scatter(self, cotangent: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`gather`: accumulate ``cotangent`` onto the grid."""
        cotangent = np.asarray(cotangent).reshape(self.count)
        out = np.zeros(self.shape)
        for index, weight, _ in self._corners:
            np.add.at(out, index, weight * cotangent)
        return out

    def coord_grad(self, values: np.ndarray) -> np.ndarray:
        """d(gather(values)) / d(coords), shape ``(m, rank)``."""
        values = np.asarray(values).reshape(self.shape)
        rank = len(self.shape)
        grad = np.zeros((self.count, rank))
        for index, _, bits in self._corners:
            sample = values[index]
            for a in range(rank):
                partial = np.full(self.count, 1.0 if bits[a] else -1.0)
                for b in range(rank):
                    if b != a:
                        partial = partial * (self.frac[:, b] if bits[b] else 1.0 - self.frac[:, b])
                grad[:, a] += partial * sample
        return grad * self.inside

    def matrix(self) -> sp.csr_matrix:
        """Sparse ``(m, prod(shape))`` matrix equivalent to :meth:`gather`."""
        rows, cols, data = [], [], []
        for index, weight, _ in self._corners:
            rows.append(np.arange(self.count))
            cols.append(np.ravel_multi_index(index, self.shape))
            data.append(weight)
        matrix = sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.count, int(np.prod(self.shape))),
        )
        matrix.sum_duplicates()
        return matrix
