"""Splittable, counter-based random streams for reproducible parallel Monte Carlo.

Every Monte Carlo path draws from its own Philox generator, keyed by
``SeedSequence(master_seed, spawn_key=(*cell_key, path_index))``.  Distinct
key tuples give statistically independent streams, so results do not depend
on chunking, worker count, or scheduling order.

A path's driver block is a single ``(steps, n_streams)`` array of Brownian
increments.  Column layout for the finite system (and for the limit system,
which reads a subset of the same columns when paths are paired):

    columns 0 .. n-1        periphery drivers W^1 .. W^n
    columns n .. n+m-1      core drivers W^{B,1} .. W^{B,m}
    column  n+m             B^1 (bubble diffusion)
    column  n+m+1           B^2 (reserved for the abstract drift diffusion; unused
                            by the concrete bubble model but kept so the stream
                            layout matches the m+n+2(+1)-dimensional driver)
    column  n+m+2           B^3 (illiquidity GBM)
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

__all__ = [
    "path_generator",
    "driver_block",
    "fill_driver_blocks",
]


def path_generator(master_seed: int, cell_key: Sequence[int], path: int) -> np.random.Generator:
    """Generator for one Monte Carlo path, independent of all other (cell, path) pairs."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(*cell_key, path))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, dtype=np.uint64)))


def driver_block(
    master_seed: int,
    cell_key: Sequence[int],
    path: int,
    steps: int,
    n_streams: int,
    dt: float,
) -> np.ndarray:
    """Brownian increments, shape ``(steps, n_streams)``, each entry N(0, dt)."""
    gen = path_generator(master_seed, cell_key, path)
    return gen.standard_normal((steps, n_streams)) * np.sqrt(dt)

def fill_driver_blocks(
    out: np.ndarray,
    master_seed: int,
    cell_key: Sequence[int],
    first_path: int,
    dt: float,
) -> None:
    """Fill ``out`` of shape (steps, n_paths, n_streams) with per-path driver blocks.

    Path ``first_path + c`` lands in ``out[:, c, :]``.  Each path's block is drawn
    from its own keyed generator, so the content of a slot never depends on the
    chunk boundaries used to produce it.
    """
    steps, n_paths, n_streams = out.shape
    sqdt = np.sqrt(dt)
    for c in range(n_paths):
        gen = path_generator(master_seed, cell_key, first_path + c)
        out[:, c, :] = gen.standard_normal((steps, n_streams))
    out *= sqdt
