"""Deterministic, splittable pseudorandom streams.

Every variate in ruin-lab comes from a xoshiro256** stream keyed by a
(seed, stream_id) pair. The state words are derived through the splitmix64
finalizer so the generator has published reference outputs and the streams
replay bit-for-bit on any platform:

    origin = mix64(mix64(seed) ^ (stream_id * GAMMA))
    z_i    = origin + i * GAMMA,    s_i = mix64(z_i),    i = 1..4

Uniforms use the top 52 bits, centred in their cell, so they lie strictly
inside (0, 1). Gaussians are Box-Muller; both outputs of a pair are consumed.

A `StreamBlock` advances many streams in lockstep on numpy uint64 arrays
(one lane per Monte Carlo path). `Stream` is the single-lane view.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

U64_MAX = (1 << 64) - 1
GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_UNIT = 2.0 ** -52

# Paths per work unit in map_paths. Fixed so chunking never depends on worker count.
CHUNK_PATHS = 4096
# Stream ids are (namespace << NAMESPACE_SHIFT) | path_index.
NAMESPACE_SHIFT = 40


def _u(k: int) -> np.uint64:
    return np.uint64(k)


def mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on a uint64 array."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _u(30))) * _MIX1
        z = (z ^ (z >> _u(27))) * _MIX2
        return z ^ (z >> _u(31))


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _u(k)) | (x >> _u(64 - k))


def splitmix64_sequence(seed: int, count: int) -> list[int]:
    """Plain splitmix64 outputs, used to check the mixer against published vectors."""
    z = np.array([seed], dtype=np.uint64)
    out = []
    with np.errstate(over="ignore"):
        for _ in range(count):
            z = z + GAMMA
            out.append(int(mix64(z)[0]))
    return out


def stream_id(namespace: int, index: int) -> int:
    return ((namespace << NAMESPACE_SHIFT) | index) & U64_MAX


# ---------------------------------------------------------------------------
# Keys
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StreamKey:
    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= int(value) <= U64_MAX:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def stream(self) -> "Stream":
        return Stream(self.seed, self.stream_id)


# ---------------------------------------------------------------------------
# Vectorised streams
# ---------------------------------------------------------------------------


class StreamBlock:
    """Many xoshiro256** streams advanced together, one lane per stream id."""

    def __init__(self, seed: int, stream_ids: Sequence[int] | np.ndarray):
        ids = np.asarray(stream_ids, dtype=np.uint64).reshape(-1)
        base = mix64(np.array([seed & U64_MAX], dtype=np.uint64))
        with np.errstate(over="ignore"):
            z = mix64(base ^ (ids * GAMMA))
            words = []
            for _ in range(4):
                z = z + GAMMA
                words.append(mix64(z))
        self._s = np.stack(words)
        self._spare: np.ndarray | None = None

    @classmethod
    def from_state(cls, words: Sequence[int] | np.ndarray) -> "StreamBlock":
        """Start from raw state words, shape (4,) or (4, lanes)."""
        arr = np.asarray(words, dtype=np.uint64)
        if arr.ndim == 1:
            arr = arr.reshape(4, 1)
        if arr.shape[0] != 4 or not arr.any(axis=0).all():
            raise ValueError("xoshiro256** state needs four words per lane, not all zero")
        block = cls.__new__(cls)
        block._s = arr.copy()
        block._spare = None
        return block

    @property
    def size(self) -> int:
        return int(self._s.shape[1])

    def next_u64(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        with np.errstate(over="ignore"):
            result = _rotl(s1 * _u(5), 7) * _u(9)
        t = s1 << _u(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self._s[3] = _rotl(s3, 45)
        return result

    def next_uniform(self) -> np.ndarray:
        return ((self.next_u64() >> _u(12)).astype(np.float64) + 0.5) * _UNIT

    def next_gaussian(self) -> np.ndarray:
        if self._spare is not None:
            out, self._spare = self._spare, None
            return out
        u1 = self.next_uniform()
        u2 = self.next_uniform()
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        self._spare = radius * np.sin(angle)
        return radius * np.cos(angle)

    def next_exponential(self) -> np.ndarray:
        return -np.log(self.next_uniform())

    def compact(self, keep: np.ndarray) -> None:
        """Drop lanes where `keep` is False. Surviving lanes keep their sequences."""
        keep = np.asarray(keep, dtype=bool)
        self._s = self._s[:, keep]
        if self._spare is not None:
            self._spare = self._spare[keep]


class Stream:
    """Single stream; scalar front end over a one-lane StreamBlock."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.key = StreamKey(seed, stream_id)
        self._block = StreamBlock(seed, [stream_id])

    @classmethod
    def from_state(cls, words: Sequence[int]) -> "Stream":
        stream = cls.__new__(cls)
        stream.key = None
        stream._block = StreamBlock.from_state(words)
        return stream

    @property
    def block(self) -> StreamBlock:
        return self._block

    def next_u64(self) -> int:
        return int(self._block.next_u64()[0])

    def next_uniform(self) -> float:
        return float(self._block.next_uniform()[0])

    def next_gaussian(self) -> float:
        return float(self._block.next_gaussian()[0])

    def next_exponential(self) -> float:
        return float(self._block.next_exponential()[0])


# ---------------------------------------------------------------------------
# Path fan-out
# ---------------------------------------------------------------------------


def path_chunks(n_paths: int, chunk: int = CHUNK_PATHS) -> list[tuple[int, int]]:
    return [(start, min(start + chunk, n_paths)) for start in range(0, n_paths, chunk)]


def map_paths(
    fn: Callable[[int, int], np.ndarray],
    n_paths: int,
    workers: int = 1,
    chunk: int = CHUNK_PATHS,
) -> np.ndarray:
    """Evaluate `fn(start, stop)` over fixed path chunks and concatenate in path order.

    `fn` must derive its streams from the path indices it is given, and must be
    picklable when workers > 1. The result does not depend on `workers`.
    """
    spans = path_chunks(n_paths, chunk)
    if not spans:
        return np.empty(0)
    if workers <= 1 or len(spans) == 1:
        parts = [fn(a, b) for a, b in spans]
    else:
        logger.info("fanning %d paths over %d workers (%d chunks)", n_paths, workers, len(spans))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fn, a, b) for a, b in spans]
            parts = [f.result() for f in futures]
    return np.concatenate(parts, axis=0)
