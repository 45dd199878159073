"""Counter-based fan-out of a single command seed into independent streams.

Every random consumer draws from ``stream(seed, purpose, *counters)``. The
stream is a ``SeedSequence`` whose entropy is the user seed and whose spawn
key is ``(purpose, *counters)``, so adding a consumer or reordering calls never
shifts the numbers another consumer sees.
"""

import numpy as np

DATA = 1
TREES = 2
INIT = 3
SHUFFLE = 4
AUGMENT = 5
LABELS = 6
FOLDS = 7
GRADCHECK = 8
SAMPLING = 9


def stream(seed: int, purpose: int, *counters: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), *map(int, counters)))
    return np.random.Generator(np.random.PCG64(ss))
