"""Deterministic per-path random number streams.

Every Monte Carlo routine in this package derives one independent stream per
path from (master_seed, path_index), so results do not depend on execution
order, chunking, or worker count.  Auxiliary draws (bridge uniforms) come from
a separately salted stream so that enabling or disabling them leaves the
Gaussian driver of each path untouched.
"""
from __future__ import annotations

import numpy as np

# Salt for the auxiliary (bridge-uniform) stream; any fixed odd constant works,
# it only has to differ from the unsalted key space.
BRIDGE_SALT = 0x9E3779B1


def path_generator(master_seed: int, path_index: int, salt: int | None = None) -> np.random.Generator:
    """Return the counter-derived generator for one path.

    Parameters
    ----------
    master_seed : int
        Experiment-level seed.
    path_index : int
        Zero-based path counter.
    salt : int, optional
        Extra key component selecting an independent auxiliary stream for the
        same (seed, path) pair.

    Returns
    -------
    numpy.random.Generator
        Philox-backed generator; identical arguments give an identical stream
        regardless of how many values other paths have consumed.
    """
    if salt is None:
        ss = np.random.SeedSequence((int(master_seed), int(path_index)))
    else:
        ss = np.random.SeedSequence((int(master_seed), int(path_index), int(salt)))
    return np.random.Generator(np.random.Philox(ss))
