"""Seed-stream derivation.

Every random draw in the simulator comes from a generator created here, so a
run is a pure function of its config seed.  Streams are named by integer tags;
two call sites never share a tag unless they must consume identical draws.
"""

import zlib

import numpy as np

# Module-level stream tags.  Values are arbitrary but frozen: changing one
# changes every result downstream of it.
PARTITION = 11
AUX_SPLIT = 12
SYNTH_DATA = 13
MODEL_INIT = 21
HEAD_INIT = 22
PRETRAIN = 31
SANITIZE = 41
SELECTION = 51
LOCAL_TRAIN = 52
DISTILL = 53
TOY = 61


def substream(seed: int, *tags: int) -> np.random.Generator:
    """Return a generator for the stream identified by (seed, *tags)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(t) for t in tags]]))


def tag_for(name: str) -> int:
    """Stable integer tag for a string identifier (e.g. a prototype id)."""
    return zlib.crc32(name.encode("utf-8"))
