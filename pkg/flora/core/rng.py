"""
Counter-based deterministic random streams
==========================================

`Rng` wraps numpy's Philox bit generator (counter-based, identical output on
every platform for the same seed and call sequence). Every draw is appended
to `Rng.calls` with a purpose tag so training paths can be audited, e.g. to
prove that the flow stage never draws Gaussian noise for its source latents.
"""

import logging
import zlib
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from flora.errors import ConfigError

logger = logging.getLogger("flora.core")


@dataclass(frozen=True)
class RngCall:
    """One logged draw"""
    method: str
    purpose: str
    shape: Tuple[int, ...]


class Rng:
    """Seeded Philox stream with a call log"""

    def __init__(self, seed: int, stream: Tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = tuple(stream)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        self._generator = np.random.Generator(np.random.Philox(sequence))
        self.calls: List[RngCall] = []

    def child(self, name: str) -> "Rng":
        """Independent stream derived from (seed, name); does not advance this one"""
        return Rng(self.seed, self.stream + (zlib.crc32(name.encode("utf-8")),))

    def _log(self, method: str, purpose: str, shape) -> None:
        self.calls.append(RngCall(method, purpose, tuple(np.atleast_1d(shape).tolist()) if shape != () else ()))

    def normal(self, shape, purpose: str = "unspecified") -> np.ndarray:
        self._log("normal", purpose, shape)
        return self._generator.standard_normal(shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0, purpose: str = "unspecified") -> np.ndarray:
        self._log("uniform", purpose, shape)
        return self._generator.uniform(low, high, shape)

    def choice(self, n: int, size: int, replace: bool = False, purpose: str = "unspecified") -> np.ndarray:
        self._log("choice", purpose, (size,))
        return self._generator.choice(n, size=size, replace=replace)

    def permutation(self, n: int, purpose: str = "unspecified") -> np.ndarray:
        self._log("permutation", purpose, (n,))
        return self._generator.permutation(n)

    def calls_for(self, method: Optional[str] = None, purpose: Optional[str] = None) -> List[RngCall]:
        return [
            c for c in self.calls
            if (method is None or c.method == method) and (purpose is None or c.purpose == purpose)
        ]


def sample_standard_normal(rng: Rng, shape: Sequence[int], purpose: str = "standard_normal") -> np.ndarray:
    """I.i.d. N(0, 1) draws; advances `rng` deterministically"""
    return rng.normal(tuple(shape), purpose=purpose)


def timestep_from_normal(n):
    """Logit-normal map t = sigmoid(n); strictly inside (0, 1) for finite n"""
    n = np.asarray(n, dtype=np.float64)
    t = 0.5 * (1.0 + np.tanh(0.5 * n))
    return np.clip(t, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def logit_normal_timestep(rng: Rng) -> float:
    """t = sigmoid(n), n ~ N(0, 1)"""
    return float(timestep_from_normal(rng.normal((), purpose="timestep")))


def sample_timesteps(rng: Rng, n: int, sampler: str = "logit_normal") -> np.ndarray:
    """
    One training timestep per item

    Args:
        rng: stream to draw from
        n: number of items
        sampler: 'logit_normal' (biased toward t=0.5) or 'uniform'
    """
    if sampler == "logit_normal":
        return timestep_from_normal(rng.normal((n,), purpose="timestep"))
    if sampler == "uniform":
        return rng.uniform((n,), purpose="timestep")
    raise ConfigError(f"unknown timestep sampler: {sampler}")
