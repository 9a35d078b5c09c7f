"""
Seeded random streams.

Every stochastic step of the pipeline draws from its own RandomStream, derived from the command seed and a
purpose label (e.g. derive_stream(seed, "shuffle/epoch-3")). Streams are built on numpy's counter-based
Philox generator, so a (seed, label) pair always yields the same sequence on every platform. Gaussian
variates use the Box-Muller transform on the stream's own uniforms instead of numpy's ziggurat sampler.
"""

import zlib

import numpy as np


class RandomStream(object):

    def __init__(self, seed_sequence):

        self._generator = np.random.Generator(np.random.Philox(seed_sequence))

    def uniform(self, size=None):
        """
        Uniform draws in [0, 1)
        """

        return self._generator.random(size)

    def normal(self, shape, dtype=np.float64):
        """
        Standard normal draws through Box-Muller
        """

        shape = tuple(np.atleast_1d(shape)) if np.ndim(shape) > 0 else (int(shape),)

        n = int(np.prod(shape))

        n_pairs = (n + 1) // 2

        # 1 - u lies in (0, 1], so the log is always finite
        u1 = 1.0 - self._generator.random(n_pairs)
        u2 = self._generator.random(n_pairs)

        radius = np.sqrt(-2.0 * np.log(u1))

        values = np.empty(2 * n_pairs)
        values[0::2] = radius * np.cos(2.0 * np.pi * u2)
        values[1::2] = radius * np.sin(2.0 * np.pi * u2)

        return values[:n].reshape(shape).astype(dtype)

    def integers(self, low, high, size=None):
        """
        Integers in [low, high)
        """

        return self._generator.integers(low, high, size=size)

    def permutation(self, n):

        return self._generator.permutation(n)

    def keep_mask(self, shape, keep_probability):

        return self._generator.random(shape) < keep_probability


def derive_stream(seed, label):
    """
    Return the stream for the given command seed and purpose label

    :param seed: integer seed of the command
    :param label: string naming what the stream is used for
    :return: a RandomStream instance
    """

    return RandomStream(np.random.SeedSequence([int(seed), zlib.crc32(label.encode('utf-8'))]))
