"""Named random sub-streams derived from a single per-run seed."""

import zlib

import numpy as np

STREAMS = ("surface", "train", "rl", "sample", "embed", "ransac", "split", "realign")


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for stream `name`; the same (seed, name) always gives the same draws."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream_key(name),))
    return np.random.default_rng(sequence)


def substream_seed(seed: int, name: str) -> int:
    """Integer seed for APIs that take a plain seed rather than a generator."""
    return int(substream(seed, name).integers(0, 2**31 - 1))
