"""Seeded random streams.

Every stochastic consumer (initialisation, dropout, batch sampling, prior
samples, camera augmentation) receives an explicit ``numpy.random.Generator``.
Streams are derived from a root seed plus an integer key path through
``SeedSequence`` spawn keys, so independent consumers never share state and a
root seed determines a whole run.
"""

from __future__ import annotations

import numpy as np

STREAM_INIT = 1
STREAM_DATA = 2
STREAM_MODEL = 3
STREAM_EVAL = 4


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and the stream path ``keys``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def rng_state_to_json(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": format(st["state"]["state"], "x"),
        "inc": format(st["state"]["inc"], "x"),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def rng_from_json(data: dict) -> np.random.Generator:
    if data.get("bit_generator") != "PCG64":
        raise ValueError(f"unsupported bit generator {data.get('bit_generator')!r}")
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(data["state"], 16), "inc": int(data["inc"], 16)},
        "has_uint32": int(data["has_uint32"]),
        "uinteger": int(data["uinteger"]),
    }
    return np.random.Generator(bg)
