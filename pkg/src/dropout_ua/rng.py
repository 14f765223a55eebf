"""Counter-based random source.

Draw ``k`` of stream ``s`` under seed ``seed`` is a pure function of
``(seed, s, k, width)``: Philox is keyed with ``(seed, stream)`` and draw ``k``
starts at counter block ``k * ceil(width / 4)``. Bulk requests for a contiguous
range of draws are therefore identical to issuing the draws one by one, in any
order, which is what makes parallel sampling order-independent.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix(*words) -> int:
    return int(np.random.SeedSequence([int(w) & _MASK64 for w in words]).generate_state(1, np.uint64)[0])


def _key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK64
    # stable across processes, unlike hash()
    return int.from_bytes(hashlib.blake2b(str(label).encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RandomSource:
    seed: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream", int(self.stream) & _MASK64)

    def child(self, *labels) -> "RandomSource":
        """Derived source with a stream id mixed from this stream and ``labels``."""
        return RandomSource(self.seed, _mix(self.seed, self.stream, *(_key(l) for l in labels)))

    def uniform(self, count: int, width: int, start: int = 0) -> np.ndarray:
        """Uniforms for draws ``start .. start+count-1``, shape (count, width)."""
        count, width, start = int(count), int(width), int(start)
        if count == 0 or width == 0:
            return np.zeros((count, width))
        blocks = -(-width // 4)
        bitgen = np.random.Philox(key=[self.seed, self.stream], counter=[start * blocks, 0, 0, 0])
        out = np.random.Generator(bitgen).random(count * blocks * 4)
        return out.reshape(count, blocks * 4)[:, :width]

    def uniform_at(self, indices, width: int) -> np.ndarray:
        """Uniforms for arbitrary draw indices, shape (len(indices), width)."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            return np.zeros((0, int(width)))
        order = np.argsort(idx, kind="stable")
        srt = idx[order]
        # one bulk request per run of consecutive indices
        breaks = np.flatnonzero(np.diff(srt) != 1) + 1
        parts = [self.uniform(len(run), width, int(run[0])) for run in np.split(srt, breaks)]
        out = np.empty((idx.size, int(width)))
        out[order] = np.concatenate(parts)
        return out

    def draw(self, index: int, width: int) -> np.ndarray:
        return self.uniform(1, width, start=index)[0]

    def generator(self, index: int = 0) -> np.random.Generator:
        """Ordinary Generator for auxiliary sampling tied to draw ``index``."""
        return np.random.Generator(
            np.random.Philox(key=[self.seed, self.stream], counter=[0, int(index), 1, 0])
        )
