"""Named random substreams derived from one root seed."""
import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for purpose ``name`` (e.g. ``"init"``, ``"shuffle"``)."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])
