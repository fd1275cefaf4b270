"""Named RNG sub-streams derived from a single base seed.

Every source of randomness in the pipeline pulls from its own named stream
so that, e.g., changing the negative-sampling ratio never perturbs parameter
initialization.
"""

import numpy as np

_STREAMS = {
    "init": 0,
    "sampling": 1,
    "shuffle": 2,
    "synth": 3,
}


def substream(seed: int, name: str, worker: int = 0) -> np.random.Generator:
    """Return a generator for the named sub-stream of `seed`.

    `worker` offsets the stream for per-worker sampler instances.
    """
    try:
        idx = _STREAMS[name]
    except KeyError:
        raise ValueError(f"unknown rng stream {name!r}") from None
    return np.random.default_rng(np.random.SeedSequence([seed, idx, worker]))
