"""Named random substreams derived from a single master seed.

Every random draw in the package goes through :func:`substream`, which maps a
master seed plus a path of names such as ``("refine", "F", 3, "component", 1)``
to an independent :class:`numpy.random.Generator`.
"""

from __future__ import annotations

import zlib
from typing import Union

import numpy as np

Name = Union[str, int]


def _key(name: Name) -> int:
    if isinstance(name, (int, np.integer)):
        if name < 0:
            raise ValueError("substream indices must be non-negative")
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def spawn_key(*names: Name) -> tuple[int, ...]:
    return tuple(_key(n) for n in names)


def substream(seed: int, *names: Name) -> np.random.Generator:
    """Generator for the substream ``seed:names[0]:names[1]:...``."""
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(*names))
    return np.random.default_rng(ss)


def stream_label(*names: Name) -> str:
    return ":".join(str(n) for n in names)
