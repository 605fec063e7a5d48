"""Scheduler-independent random substreams."""

from __future__ import annotations

import hashlib

import numpy as np


def substream_seed(master_seed: int, experiment: str, env_index: int, replica_index: int) -> int:
    """128-bit hash of the four coordinates of a task."""
    key = f"{int(master_seed)}|{experiment}|{int(env_index)}|{int(replica_index)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=16).digest(), "little")


def substream(master_seed: int, experiment: str, env_index: int, replica_index: int) -> np.random.Generator:
    return np.random.default_rng(substream_seed(master_seed, experiment, env_index, replica_index))


# replica index reserved for the environment draw itself
ENV_STREAM = -1
