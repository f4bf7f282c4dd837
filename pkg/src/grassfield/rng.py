"""Counter-based Gaussian Wiener increments (Philox4x32-10 + Box-Muller).

Every increment is addressed by ``(seed, trajectory, step, channel)`` and
can be regenerated independently of any other draw, so results do not
depend on how trajectories are scheduled across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


@numba.njit(cache=True, nogil=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds on a 128-bit counter and 64-bit key (uint64 holders)."""
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@numba.njit(cache=True, nogil=True)
def _uniform53(a, b):
    """Uniform on (0, 1] from two 32-bit words."""
    x = (a >> np.uint64(5)) * np.uint64(67108864) + (b >> np.uint64(6))
    return (np.float64(x) + 1.0) / 9007199254740992.0


@numba.njit(cache=True, nogil=True)
def normal_pair(seed, trajectory, step, pair):
    """Two standard normals for channels ``2*pair`` and ``2*pair + 1``."""
    seed = np.uint64(seed)
    trajectory = np.uint64(trajectory)
    r0, r1, r2, r3 = philox4x32(
        np.uint64(pair) & _MASK,
        np.uint64(step) & _MASK,
        trajectory & _MASK,
        trajectory >> _S32,
        seed & _MASK,
        seed >> _S32,
    )
    u1 = _uniform53(r0, r1)
    u2 = _uniform53(r2, r3)
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    return rad * np.cos(ang), rad * np.sin(ang)


@numba.njit(cache=True, nogil=True)
def fill_increments(seed, trajectory, step, n_channels, scale, out):
    """Write ``n_channels`` scaled normals for one (trajectory, step) into ``out``."""
    for pair in range((n_channels + 1) // 2):
        z0, z1 = normal_pair(seed, trajectory, step, pair)
        out[2 * pair] = z0 * scale
        if 2 * pair + 1 < n_channels:
            out[2 * pair + 1] = z1 * scale


@dataclass(frozen=True)
class WienerBatch:
    """Increments ``dw[channel]`` with variance ``dt`` for one (trajectory, step)."""

    increments: np.ndarray
    dt: float
    seed: int
    trajectory: int
    step: int


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


def draw_wiener(seed, trajectory, step, channels, dt):
    """Gaussian increments for channels ``0..channels-1`` (variance ``dt``)."""
    seed = _check_seed(seed)
    out = np.zeros(int(channels))
    fill_increments(np.uint64(seed), np.uint64(trajectory), np.uint64(step), int(channels), np.sqrt(dt), out)
    return WienerBatch(out, dt, seed, int(trajectory), int(step))


@numba.njit(cache=True, nogil=True)
def _many(seed, trajectories, steps, n_channels, scale, out):
    for i in range(trajectories.shape[0]):
        fill_increments(seed, trajectories[i], steps[i], n_channels, scale, out[i])


def draw_wiener_many(seed, trajectories, steps, channels, dt):
    """Vectorised :func:`draw_wiener` over paired ``trajectories`` / ``steps`` arrays."""
    seed = _check_seed(seed)
    trajectories = np.asarray(trajectories, dtype=np.uint64)
    steps = np.broadcast_to(np.asarray(steps, dtype=np.uint64), trajectories.shape).copy()
    out = np.zeros((trajectories.size, int(channels)))
    _many(np.uint64(seed), trajectories.ravel(), steps.ravel(), int(channels), np.sqrt(dt), out)
    return out
