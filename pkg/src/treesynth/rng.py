"""Deterministic random streams and the distribution samplers used by the samplers.

Every stochastic routine in the package draws through an :class:`RngHandle`.
A handle is a counter-based Philox stream keyed by ``(seed, stream)``, so the
same key always reproduces the same draw sequence bit for bit, independent of
what other streams do.  Derived streams are obtained by hashing a label, which
gives each (chain, sampler-step) pair its own non-overlapping stream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

_MASK64 = (1 << 64) - 1


def _label_to_stream(base: int, label: str) -> int:
    # Stable across processes and runs; Python's hash() is salted, so use blake2.
    digest = hashlib.blake2b(f"{base}/{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class RngHandle:
    """Single-owner random stream.

    Handles are cheap to create; derive one per concurrent task instead of
    sharing. ``derive`` never advances the parent stream.
    """

    seed: int
    stream: int = 0
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            bitgen = np.random.Philox(key=[self.seed & _MASK64, self.stream & _MASK64])
            self._gen = np.random.Generator(bitgen)
        return self._gen

    def derive(self, label: str) -> "RngHandle":
        """Independent child stream named by ``label``."""
        return RngHandle(self.seed, _label_to_stream(self.stream, label))


def _gen(rng) -> np.random.Generator:
    return rng.generator if isinstance(rng, RngHandle) else rng


def sample_normal(mean, sd, rng, size=None):
    """Normal draw(s); ``sd = 0`` returns ``mean`` exactly."""
    g = _gen(rng)
    z = g.standard_normal(size if size is not None else np.broadcast(np.asarray(mean), np.asarray(sd)).shape)
    return np.asarray(mean) + np.asarray(sd) * z


def sample_inverse_gamma(shape, scale, rng, size=None):
    """Inverse-gamma draw(s) with density x^(-shape-1) exp(-scale/x); mean scale/(shape-1)."""
    g = _gen(rng)
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(shape <= 0) or np.any(scale <= 0):
        raise ValidationError("inverse gamma requires shape > 0 and scale > 0")
    return scale / g.gamma(shape, 1.0, size=size)


def sample_gamma(shape, rate, rng, size=None):
    """Gamma draw(s) parameterized by shape and rate; mean shape/rate."""
    g = _gen(rng)
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ValidationError("gamma requires shape > 0 and rate > 0")
    return g.gamma(np.asarray(shape, dtype=float), 1.0 / np.asarray(rate, dtype=float), size=size)


def sample_half_cauchy(scale, rng, size=None):
    """|Cauchy(0, scale)| draw(s)."""
    g = _gen(rng)
    if np.any(np.asarray(scale) <= 0):
        raise ValidationError("half-Cauchy requires scale > 0")
    return np.abs(np.asarray(scale) * g.standard_cauchy(size=size))


def sample_beta(a, b, rng, size=None):
    g = _gen(rng)
    return g.beta(a, b, size=size)


def sample_uniform(low, high, rng, size=None):
    g = _gen(rng)
    return g.uniform(low, high, size=size)


def sample_categorical(probs, rng, size=None):
    """Index draw(s) from a probability vector (sums to 1 within 1e-10)."""
    g = _gen(rng)
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise ValidationError("probs must be a nonempty vector")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-10:
        raise ValidationError("probs must be nonnegative and sum to 1")
    return g.choice(probs.size, size=size, p=probs / probs.sum())
