"""Hashing tile coder in the style of Sutton's ``tiles3`` software.

Coordinates are assigned indices on first sight until the table is full;
after that, new coordinates are hashed into the table (collisions allowed).
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


class IndexHashTable:
    def __init__(self, size: int):
        self.size = size
        self.overfull_count = 0
        self.table: dict = {}

    def index(self, coords: tuple, readonly: bool = False):
        if coords in self.table:
            return self.table[coords]
        if readonly:
            return None
        if len(self.table) >= self.size:
            self.overfull_count += 1
            return hash(coords) % self.size
        idx = len(self.table)
        self.table[coords] = idx
        return idx


def tiles(iht: IndexHashTable, n_tilings: int, floats: Sequence[float], ints: Sequence[int] = ()):
    """Active tile indices, one per tiling, for already-scaled ``floats``."""
    qfloats = [math.floor(f * n_tilings) for f in floats]
    out = []
    for tiling in range(n_tilings):
        offset = tiling
        coords = [tiling]
        for q in qfloats:
            coords.append((q + offset) // n_tilings)
            offset += tiling * 2
        coords.extend(ints)
        out.append(iht.index(tuple(coords)))
    return out


class TileCoder:
    """Maps a bounded continuous observation to ``n_tilings`` active indices
    in ``[0, size)``.

    Each dimension ``x`` is scaled to ``tiles_per_dim * (x - low) / (high - low)``
    before tiling; values outside ``[low, high]`` are allowed and simply land
    in further tiles.
    """

    def __init__(self, low, high, n_tilings: int = 8, tiles_per_dim: int = 4, size: int = 1024):
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        if self.low.shape != self.high.shape or np.any(self.high <= self.low):
            raise ValueError("need low < high in every dimension")
        self.n_tilings = n_tilings
        self.tiles_per_dim = tiles_per_dim
        self.size = size
        self.scale = tiles_per_dim / (self.high - self.low)
        self.iht = IndexHashTable(size)

    def __call__(self, observation) -> list:
        obs = np.asarray(observation, dtype=float)
        if obs.shape != self.low.shape:
            raise ValueError(f"observation shape {obs.shape} != {self.low.shape}")
        if not np.all(np.isfinite(obs)):
            raise ValueError("observation has non-finite entries")
        scaled = ((obs - self.low) * self.scale).tolist()
        return tiles(self.iht, self.n_tilings, scaled)


def tile_code(coder: TileCoder, observation) -> list:
    return coder(observation)
