"""Head/tail relative distances between spans and their fused encoding."""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .lattice import FlatLattice

# concatenation order of the four sinusoids inside the fused encoding
FUSION_ORDER = ("hh", "th", "ht", "tt")


@dataclass(frozen=True)
class DistanceMatrices:
    hh: np.ndarray
    ht: np.ndarray
    th: np.ndarray
    tt: np.ndarray

    def __getitem__(self, key: str) -> np.ndarray:
        return getattr(self, key)

    def max_abs(self) -> int:
        return int(max(np.abs(getattr(self, k)).max(initial=0) for k in FUSION_ORDER))


def pairwise_distances(heads, tails) -> DistanceMatrices:
    """Distances for span positions with any leading batch shape ``(..., S)``."""
    h = np.asarray(heads, dtype=np.int64)
    t = np.asarray(tails, dtype=np.int64)
    return DistanceMatrices(
        hh=h[..., :, None] - h[..., None, :],
        ht=h[..., :, None] - t[..., None, :],
        th=t[..., :, None] - h[..., None, :],
        tt=t[..., :, None] - t[..., None, :],
    )


def distances(flat: FlatLattice) -> DistanceMatrices:
    return pairwise_distances(flat.heads, flat.tails)


def _check_d_model(d_model: int) -> None:
    if d_model < 2 or d_model % 2:
        raise ValueError(f"sinusoid width must be even and >= 2, got {d_model}")


def sinusoid(d, d_model: int) -> np.ndarray:
    """Sinusoidal embedding of signed distance(s) ``d``: sin on even, cos on odd components."""
    _check_d_model(d_model)
    d = np.asarray(d, dtype=np.float64)
    freq = 1.0 / np.power(10000.0, np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    angles = d[..., None] * freq
    out = np.empty(d.shape + (d_model,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


class SinusoidTable:
    """Memoised sinusoids for distances in ``[-reach, reach]``, grown on demand.

    Row ``reach + d`` holds the embedding of distance ``d``.
    """

    def __init__(self, d_model: int, reach: int = 0):
        _check_d_model(d_model)
        self.d_model = d_model
        self._lock = threading.Lock()
        self._reach = -1
        self._rows = np.zeros((0, d_model))
        self.ensure(reach)

    @property
    def reach(self) -> int:
        return self._reach

    def ensure(self, reach: int) -> tuple[np.ndarray, int]:
        rows, current = self._rows, self._reach
        if reach <= current:
            return rows, current
        with self._lock:
            if reach > self._reach:
                # double to keep regrowth rare
                new = max(reach, 2 * self._reach, 16)
                self._rows = sinusoid(np.arange(-new, new + 1), self.d_model)
                self._reach = new
            return self._rows, self._reach

    def lookup(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=np.int64)
        rows, reach = self.ensure(int(np.abs(d).max(initial=0)))
        return rows[d + reach]


def fused_encoding(dm: DistanceMatrices, w_r: nx.Tensor, table: SinusoidTable) -> nx.Tensor:
    """ReLU(W_r [p_hh; p_th; p_ht; p_tt]) for every span pair, differentiable in ``w_r``.

    Because the map is linear before the ReLU, each block of ``w_r`` is applied
    to the table of distinct distances once and the results are gathered.
    """
    d_model = table.d_model
    if w_r.shape != (d_model, 4 * d_model):
        raise nx.ShapeError(f"W_r must be {(d_model, 4 * d_model)}, got {w_r.shape}")
    rows, reach = table.ensure(dm.max_abs())
    rows = nx.Tensor(rows)
    total = None
    for k, key in enumerate(FUSION_ORDER):
        block = nx.transpose(w_r[:, k * d_model:(k + 1) * d_model], (1, 0))
        projected = nx.matmul(rows, block)
        part = nx.take(projected, dm[key] + reach)
        total = part if total is None else nx.add(total, part)
    return nx.relu(total)


@dataclass(frozen=True)
class RelPosEncoding:
    R: np.ndarray
    distances: DistanceMatrices


def fuse(dm: DistanceMatrices, w_r, table: SinusoidTable | None = None) -> RelPosEncoding:
    w_r = np.asarray(w_r.data if isinstance(w_r, nx.Tensor) else w_r, dtype=np.float64)
    if w_r.ndim != 2 or w_r.shape[1] != 4 * w_r.shape[0]:
        raise nx.ShapeError(f"W_r must be d_model x 4*d_model, got {w_r.shape}")
    table = table or SinusoidTable(w_r.shape[0])
    with nx.no_grad():
        R = fused_encoding(dm, nx.Tensor(w_r), table).data
    return RelPosEncoding(R, dm)
