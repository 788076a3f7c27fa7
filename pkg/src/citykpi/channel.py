"""mmWave propagation: free-space loss, close-in (CI) and alpha-beta (AB)
path loss, rain/atmospheric/penetration losses, small-scale fading and the
link budget.

All losses are in dB, powers in dBm, distances in metres and frequencies in
Hz. Randomness only enters through an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_HZ = -174.0


class DomainError(ValueError):
    """Raised when an argument falls outside the domain of a model."""


class LinkState(str, enum.Enum):
    LOS = "LOS"
    NLOS = "NLOS"


@dataclass(frozen=True)
class RadioConfig:
    carrier_frequency: float = 28e9
    tx_power: float = 23.0
    tx_antenna_gain: float = 0.0
    rx_antenna_gain: float = 24.5
    tx_height: float = 1.5
    rx_height: float = 10.0
    noise_figure: float = 7.0
    bandwidth: float = 100e6

    def __post_init__(self):
        if self.carrier_frequency <= 0:
            raise DomainError("carrier_frequency must be positive")
        if self.bandwidth <= 0:
            raise DomainError("bandwidth must be positive")
        if self.tx_height < 0 or self.rx_height < 0:
            raise DomainError("antenna heights must be non-negative")


@dataclass(frozen=True)
class CiModelParams:
    d0: float
    pl_d0: float
    n: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.d0 <= 0:
            raise DomainError("d0 must be positive")
        if self.n <= 0:
            raise DomainError("path loss exponent must be positive")
        if self.sigma < 0:
            raise DomainError("sigma must be non-negative")

    @classmethod
    def anchored(cls, frequency, n, sigma=0.0, d0=1.0):
        """CI parameters with the reference loss set to the FSPL at ``d0``."""
        return cls(d0=d0, pl_d0=fspl(frequency, d0), n=n, sigma=sigma)


@dataclass(frozen=True)
class AbModelParams:
    alpha: float
    beta: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise DomainError("sigma must be non-negative")


@dataclass(frozen=True)
class ExtraLossConfig:
    rain_rate: float = 0.0
    atmospheric_coeff: float = 0.0
    penetration_loss: float = 0.0
    frequency: float = 28e9

    def __post_init__(self):
        for name in ("rain_rate", "atmospheric_coeff", "penetration_loss"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if self.frequency <= 0:
            raise DomainError("frequency must be positive")


# Building-material penetration losses at 28 GHz (dB).
PENETRATION_TINTED_GLASS = 40.1
PENETRATION_BRICK = 28.3

# Rain specific attenuation gamma = k * R**a (dB/km, R in mm/h).  Exponents
# and relative k follow ITU-R P.838 horizontal polarisation (approximate);
# k is rescaled so that 25.4 mm/h at 28 GHz gives 7.0 dB/km.
_RAIN_REFERENCE_RATE = 25.4
_RAIN_REFERENCE_GAMMA_28 = 7.0
_ITU_RAIN = {
    28e9: (0.2051, 0.9679),
    38e9: (0.4001, 0.8816),
    60e9: (0.8606, 0.7656),
    73e9: (1.0600, 0.7250),
}
_k28, _a28 = _ITU_RAIN[28e9]
_RAIN_SCALE = _RAIN_REFERENCE_GAMMA_28 / (_k28 * _RAIN_REFERENCE_RATE**_a28)
RAIN_TABLE = {f: (k * _RAIN_SCALE, a) for f, (k, a) in _ITU_RAIN.items()}


def _positive(name, value):
    if not np.all(np.asarray(value) > 0):
        raise DomainError(f"{name} must be positive, got {value!r}")


def db_to_linear(x):
    return np.power(10.0, np.asarray(x) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


def fspl(frequency, distance):
    """Free-space path loss ``20 log10(4 pi d f / c)`` in dB."""
    _positive("frequency", frequency)
    _positive("distance", distance)
    out = 20.0 * np.log10(4.0 * np.pi * np.asarray(distance) * np.asarray(frequency) / SPEED_OF_LIGHT)
    return float(out) if np.ndim(out) == 0 else out


def ci_path_loss(params: CiModelParams, distance, shadowing_draw=0.0):
    """Close-in reference distance model.

    ``PL(d) = PL(d0) + 10 n log10(d / d0) + X``, with the shadowing term
    ``X`` supplied by the caller (normally drawn from N(0, sigma^2)).
    """
    _positive("distance", distance)
    out = params.pl_d0 + 10.0 * params.n * np.log10(np.asarray(distance) / params.d0) + shadowing_draw
    return float(out) if np.ndim(out) == 0 else out


def ab_path_loss(params: AbModelParams, distance, shadowing_draw=0.0):
    """Floating-intercept model ``alpha + 10 beta log10(d) + X``."""
    _positive("distance", distance)
    out = params.alpha + 10.0 * params.beta * np.log10(np.asarray(distance)) + shadowing_draw
    return float(out) if np.ndim(out) == 0 else out


def ci_to_ab(params: CiModelParams) -> AbModelParams:
    """The AB parameters that reproduce a CI model exactly."""
    return AbModelParams(
        alpha=params.pl_d0 - 10.0 * params.n * math.log10(params.d0),
        beta=params.n,
        sigma=params.sigma,
    )


def rain_specific_attenuation(rain_rate, frequency=28e9):
    """Rain attenuation in dB/km.

    The table is interpolated linearly in frequency; frequencies outside it
    use the nearest entry.
    """
    if rain_rate < 0:
        raise DomainError("rain_rate must be non-negative")
    if rain_rate == 0:
        return 0.0
    freqs = sorted(RAIN_TABLE)
    gammas = [k * rain_rate**a for k, a in (RAIN_TABLE[f] for f in freqs)]
    return float(np.interp(frequency, freqs, gammas))


def extra_losses(cfg: ExtraLossConfig, distance):
    """Rain + atmospheric + penetration loss over ``distance`` metres."""
    if np.any(np.asarray(distance) < 0):
        raise DomainError("distance must be non-negative")
    km = np.asarray(distance) / 1000.0
    gamma = rain_specific_attenuation(cfg.rain_rate, cfg.frequency)
    out = gamma * km + cfg.atmospheric_coeff * km + cfg.penetration_loss
    return float(out) if np.ndim(out) == 0 else out


def los_probability(distance, d_los=50.0):
    """P(LOS) = exp(-d / d_los); ``d_los = inf`` means always LOS."""
    if math.isinf(d_los):
        return np.ones_like(np.asarray(distance, dtype=float))
    return np.exp(-np.asarray(distance, dtype=float) / d_los)


def sample_fading(state, rice_k, rng: np.random.Generator, size=None):
    """Unit-mean small-scale power gain in dB.

    NLOS links are Rayleigh (exponential power). LOS links are Rician with
    K-factor ``rice_k`` given in dB; ``rice_k = +inf`` returns 0 dB.
    """
    state = LinkState(state)
    if state is LinkState.NLOS:
        power = rng.exponential(1.0, size=size)
    else:
        if math.isinf(rice_k) and rice_k > 0:
            return 0.0 if size is None else np.zeros(size)
        k = 10.0 ** (rice_k / 10.0)
        los = math.sqrt(k / (k + 1.0))
        scatter = math.sqrt(1.0 / (2.0 * (k + 1.0)))
        re = los + scatter * rng.standard_normal(size)
        im = scatter * rng.standard_normal(size)
        power = re * re + im * im
    return linear_to_db(power)


def noise_floor(radio: RadioConfig):
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(radio.bandwidth) + radio.noise_figure


def link_snr(radio: RadioConfig, total_path_loss, fading_gain=0.0):
    """Link-budget SNR in dB."""
    return (
        radio.tx_power
        + radio.tx_antenna_gain
        + radio.rx_antenna_gain
        - total_path_loss
        + fading_gain
        - noise_floor(radio)
    )
