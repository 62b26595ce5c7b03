"""Counter-based random streams keyed by (seed, particle index).

Every particle owns two Philox streams: one for its Brownian increments and
one for its initial position. Increment ``k`` of particle ``n`` is always
the ``k``-th ``d``-block of particle ``n``'s normal stream, so draws do not
depend on how many particles are simulated, in which order, or on how many
threads are used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_NOISE, _INIT = 0, 1
_MASK64 = (1 << 64) - 1


def _generator(seed: int, stream: int, index: int) -> np.random.Generator:
    key = ((int(index) & _MASK64) << 64) | (int(seed) & _MASK64)
    # the high counter word separates the noise / initial-data streams
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, stream]))


def replica_seed(seed: int, replica: int) -> int:
    """Independent 64-bit seed for Monte Carlo replica ``replica``."""
    return int(np.random.SeedSequence([int(seed) & _MASK64, int(replica)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class BrownianTape:
    seed: int
    dim: int = 1

    def increments(self, particles, n_steps: int) -> np.ndarray:
        """Standard normal draws, shape ``(len(particles), n_steps, dim)``."""
        ids = np.atleast_1d(np.asarray(particles, dtype=np.int64))
        out = np.empty((ids.size, n_steps, self.dim))
        for row, n in enumerate(ids):
            out[row] = _generator(self.seed, _NOISE, n).standard_normal((n_steps, self.dim))
        return out

    def draw(self, particle: int, step: int) -> np.ndarray:
        """Replay the single increment ``(particle, step)``."""
        return self.increments([particle], step + 1)[0, step]

    def initial_uniforms(self, particles) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(particles, dtype=np.int64))
        return np.stack([_generator(self.seed, _INIT, n).random(self.dim) for n in ids])

    def initial_normals(self, particles) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(particles, dtype=np.int64))
        return np.stack([_generator(self.seed, _INIT, n).standard_normal(self.dim) for n in ids])


_CACHE_LIMIT = 4_000_000  # doubles
_cache: dict[tuple, np.ndarray] = {}


def increments_block(seed: int, n_particles: int, n_steps: int, dim: int) -> np.ndarray:
    """Read-only increments for particles ``0..n_particles-1``; small blocks are memoised."""
    key = (int(seed), int(n_particles), int(n_steps), int(dim))
    hit = _cache.get(key)
    if hit is not None:
        return hit
    block = BrownianTape(seed, dim).increments(np.arange(n_particles), n_steps)
    block.setflags(write=False)
    if block.size <= _CACHE_LIMIT:
        if len(_cache) >= 64:
            _cache.pop(next(iter(_cache)))
        _cache[key] = block
    return block
