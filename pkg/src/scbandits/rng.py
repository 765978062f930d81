"""Deterministic random-number plumbing.

Every stochastic routine in this package takes an explicit numpy Generator,
so a run is fully determined by its 64-bit seed. Streams are backed by the
Philox counter-based bit generator: the output for a given key is fixed by
the algorithm itself, which keeps fixtures portable across platforms.

Gaussian variates are produced by Box-Muller from the uniform stream rather
than through ``Generator.standard_normal`` (ziggurat), again so that pinned
fixtures do not depend on numpy internals. Each call consumes a fixed,
size-determined number of uniforms.
"""

from __future__ import annotations

import numpy as np

_MAX_SEED = 2**64


def make_rng(seed: int) -> np.random.Generator:
    """Philox generator keyed directly by ``seed`` (a 64-bit integer)."""
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise ValueError(f"seed must be an integer, got {seed!r}")
    if not 0 <= int(seed) < _MAX_SEED:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` statistically independent child generators derived from ``seed``.

    Used to fan a master seed out to independent sub-experiments; child i is
    a pure function of (seed, i).
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.Philox(s)) for s in children]


def gaussians(rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` i.i.d. standard normals via Box-Muller.

    Consumes exactly ``2 * ceil(count / 2)`` uniforms: pairs (u1, u2) map to
    r*cos(2*pi*u2), r*sin(2*pi*u2) with r = sqrt(-2 ln(1 - u1)); the cosine
    block precedes the sine block and a trailing extra variate is dropped.
    """
    pairs = (count + 1) // 2
    u = rng.random((2, pairs))
    r = np.sqrt(-2.0 * np.log1p(-u[0]))
    ang = 2.0 * np.pi * u[1]
    return np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:count]
