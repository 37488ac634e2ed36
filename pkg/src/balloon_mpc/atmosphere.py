"""U.S. Standard Atmosphere 1976, lowest four layers (0-47 km).

All quantities are SI: metres, pascals, kelvin, kg/m^3.
"""
import math

G0 = 9.80665
R_DRY_AIR = 287.053

# layer base altitude [m], base temperature [K], lapse rate [K/m]
LAYER_BASE_ALT = (0.0, 11000.0, 20000.0, 32000.0)
LAYER_BASE_TEMP = (288.15, 216.65, 216.65, 228.65)
LAYER_LAPSE = (-0.0065, 0.0, 0.001, 0.0028)
TOP_ALT = 47000.0

P_SEA_LEVEL = 101325.0
P_MIN = 110.0


class AtmosphereDomainError(ValueError):
    pass


def _layer_pressure(p_base, t_base, lapse, dh):
    if lapse == 0.0:
        return p_base * math.exp(-G0 * dh / (R_DRY_AIR * t_base))
    return p_base * (t_base / (t_base + lapse * dh)) ** (G0 / (R_DRY_AIR * lapse))


def _base_pressures():
    out = [P_SEA_LEVEL]
    for i in range(len(LAYER_BASE_ALT) - 1):
        dh = LAYER_BASE_ALT[i + 1] - LAYER_BASE_ALT[i]
        out.append(_layer_pressure(out[-1], LAYER_BASE_TEMP[i], LAYER_LAPSE[i], dh))
    return tuple(out)


# chained from sea level so the profile is continuous at every boundary
LAYER_BASE_PRESSURE = _base_pressures()


def _layer_for_pressure(l):
    for i in range(len(LAYER_BASE_PRESSURE) - 1, -1, -1):
        if l <= LAYER_BASE_PRESSURE[i]:
            return i
    return 0


def pressure_at_altitude(h: float) -> float:
    """Ambient pressure [Pa] at geometric altitude ``h`` [m]."""
    if not (0.0 <= h <= TOP_ALT):
        raise AtmosphereDomainError(f"altitude {h!r} m outside [0, {TOP_ALT}]")
    i = 0
    for j in range(len(LAYER_BASE_ALT)):
        if h >= LAYER_BASE_ALT[j]:
            i = j
    return _layer_pressure(LAYER_BASE_PRESSURE[i], LAYER_BASE_TEMP[i], LAYER_LAPSE[i],
                           h - LAYER_BASE_ALT[i])


def altitude_at_pressure(l: float) -> float:
    """Inverse of :func:`pressure_at_altitude`."""
    if not (P_MIN <= l <= P_SEA_LEVEL):
        raise AtmosphereDomainError(f"pressure {l!r} Pa outside [{P_MIN}, {P_SEA_LEVEL}]")
    i = _layer_for_pressure(l)
    p_b, t_b, lapse = LAYER_BASE_PRESSURE[i], LAYER_BASE_TEMP[i], LAYER_LAPSE[i]
    if lapse == 0.0:
        dh = R_DRY_AIR * t_b / G0 * math.log(p_b / l)
    else:
        dh = t_b / lapse * ((p_b / l) ** (R_DRY_AIR * lapse / G0) - 1.0)
    return LAYER_BASE_ALT[i] + dh


def ambient_temperature(l: float) -> float:
    """Standard-atmosphere temperature [K] at pressure level ``l`` [Pa]."""
    if not (P_MIN <= l <= P_SEA_LEVEL):
        raise AtmosphereDomainError(f"pressure {l!r} Pa outside [{P_MIN}, {P_SEA_LEVEL}]")
    i = _layer_for_pressure(l)
    t_b, lapse = LAYER_BASE_TEMP[i], LAYER_LAPSE[i]
    if lapse == 0.0:
        return t_b
    return t_b * (l / LAYER_BASE_PRESSURE[i]) ** (-R_DRY_AIR * lapse / G0)


def air_density(l: float, T: float) -> float:
    if l <= 0.0 or T <= 0.0:
        raise AtmosphereDomainError(f"non-positive pressure/temperature ({l!r}, {T!r})")
    return l / (R_DRY_AIR * T)


def pressure_gradient(l: float) -> float:
    """Hydrostatic dl/dh [Pa/m] at pressure level ``l``."""
    return -G0 * l / (R_DRY_AIR * ambient_temperature(l))
