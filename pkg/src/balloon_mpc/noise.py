"""Seeded 4-D simplex gradient noise (Gustavson's formulation), JIT compiled."""
import math

import numba
import numpy as np

_F4 = (math.sqrt(5.0) - 1.0) / 4.0
_G4 = (5.0 - math.sqrt(5.0)) / 20.0

_GRAD4 = np.array([
    [0, 1, 1, 1], [0, 1, 1, -1], [0, 1, -1, 1], [0, 1, -1, -1],
    [0, -1, 1, 1], [0, -1, 1, -1], [0, -1, -1, 1], [0, -1, -1, -1],
    [1, 0, 1, 1], [1, 0, 1, -1], [1, 0, -1, 1], [1, 0, -1, -1],
    [-1, 0, 1, 1], [-1, 0, 1, -1], [-1, 0, -1, 1], [-1, 0, -1, -1],
    [1, 1, 0, 1], [1, 1, 0, -1], [1, -1, 0, 1], [1, -1, 0, -1],
    [-1, 1, 0, 1], [-1, 1, 0, -1], [-1, -1, 0, 1], [-1, -1, 0, -1],
    [1, 1, 1, 0], [1, 1, -1, 0], [1, -1, 1, 0], [1, -1, -1, 0],
    [-1, 1, 1, 0], [-1, 1, -1, 0], [-1, -1, 1, 0], [-1, -1, -1, 0],
], dtype=np.float64)

# Empirical std of a 3-octave, persistence-0.5 sum of raw simplex noise; dividing
# by it gives roughly unit-variance output (checked in tests).
FRACTAL_STD = 0.3404


def permutation_table(rng: np.random.Generator) -> np.ndarray:
    p = rng.permutation(256).astype(np.int64)
    return np.concatenate([p, p])


@numba.njit(cache=True)
def _corner(perm, gi_base, x, y, z, w):
    t = 0.6 - x * x - y * y - z * z - w * w
    if t < 0.0:
        return 0.0
    g = _GRAD4[gi_base % 32]
    t *= t
    return t * t * (g[0] * x + g[1] * y + g[2] * z + g[3] * w)


@numba.njit(cache=True)
def simplex4(perm, x, y, z, w):
    s = (x + y + z + w) * _F4
    i = math.floor(x + s)
    j = math.floor(y + s)
    k = math.floor(z + s)
    m = math.floor(w + s)
    t = (i + j + k + m) * _G4
    x0 = x - (i - t)
    y0 = y - (j - t)
    z0 = z - (k - t)
    w0 = w - (m - t)

    rx = 0
    ry = 0
    rz = 0
    rw = 0
    if x0 > y0:
        rx += 1
    else:
        ry += 1
    if x0 > z0:
        rx += 1
    else:
        rz += 1
    if x0 > w0:
        rx += 1
    else:
        rw += 1
    if y0 > z0:
        ry += 1
    else:
        rz += 1
    if y0 > w0:
        ry += 1
    else:
        rw += 1
    if z0 > w0:
        rz += 1
    else:
        rw += 1

    i1 = 1 if rx >= 3 else 0
    j1 = 1 if ry >= 3 else 0
    k1 = 1 if rz >= 3 else 0
    m1 = 1 if rw >= 3 else 0
    i2 = 1 if rx >= 2 else 0
    j2 = 1 if ry >= 2 else 0
    k2 = 1 if rz >= 2 else 0
    m2 = 1 if rw >= 2 else 0
    i3 = 1 if rx >= 1 else 0
    j3 = 1 if ry >= 1 else 0
    k3 = 1 if rz >= 1 else 0
    m3 = 1 if rw >= 1 else 0

    ii = int(i) & 255
    jj = int(j) & 255
    kk = int(k) & 255
    mm = int(m) & 255

    n = _corner(perm, perm[ii + perm[jj + perm[kk + perm[mm]]]], x0, y0, z0, w0)
    n += _corner(perm, perm[ii + i1 + perm[jj + j1 + perm[kk + k1 + perm[mm + m1]]]],
                 x0 - i1 + _G4, y0 - j1 + _G4, z0 - k1 + _G4, w0 - m1 + _G4)
    n += _corner(perm, perm[ii + i2 + perm[jj + j2 + perm[kk + k2 + perm[mm + m2]]]],
                 x0 - i2 + 2.0 * _G4, y0 - j2 + 2.0 * _G4, z0 - k2 + 2.0 * _G4,
                 w0 - m2 + 2.0 * _G4)
    n += _corner(perm, perm[ii + i3 + perm[jj + j3 + perm[kk + k3 + perm[mm + m3]]]],
                 x0 - i3 + 3.0 * _G4, y0 - j3 + 3.0 * _G4, z0 - k3 + 3.0 * _G4,
                 w0 - m3 + 3.0 * _G4)
    n += _corner(perm, perm[ii + 1 + perm[jj + 1 + perm[kk + 1 + perm[mm + 1]]]],
                 x0 - 1.0 + 4.0 * _G4, y0 - 1.0 + 4.0 * _G4, z0 - 1.0 + 4.0 * _G4,
                 w0 - 1.0 + 4.0 * _G4)
    return 27.0 * n


@numba.njit(cache=True)
def fractal4(perm, octaves, x, y, z, w):
    """Octave sum normalised to roughly unit standard deviation."""
    total = 0.0
    amp = 1.0
    freq = 1.0
    for _ in range(octaves):
        total += amp * simplex4(perm, x * freq, y * freq, z * freq, w * freq)
        amp *= 0.5
        freq *= 2.0
    return total / FRACTAL_STD
