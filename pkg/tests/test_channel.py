import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from citykpi import channel
from citykpi.channel import (
    AbModelParams,
    CiModelParams,
    DomainError,
    ExtraLossConfig,
    LinkState,
    RadioConfig,
)

# 20 log10(4 pi f / c) at f = 28 GHz, d = 1 m, written with the textbook
# constant: FSPL = 20 log10(f_MHz) + 20 log10(d_km) + 20 log10(4 pi 1e9 / c).
FSPL_28GHZ_1M = 20 * math.log10(28e3) + 20 * math.log10(1e-3) + 20 * math.log10(4e9 * math.pi / 299_792_458.0)


def test_fspl_frozen_value():
    assert FSPL_28GHZ_1M == pytest.approx(61.3909, abs=1e-4)
    assert channel.fspl(28e9, 1.0) == pytest.approx(FSPL_28GHZ_1M, abs=1e-9)


def test_fspl_decade_and_octave():
    assert channel.fspl(28e9, 50.0) - channel.fspl(28e9, 5.0) == pytest.approx(20.0, abs=1e-12)
    assert channel.fspl(56e9, 7.0) - channel.fspl(28e9, 7.0) == pytest.approx(20 * math.log10(2), abs=1e-12)


@pytest.mark.parametrize("f, d", [(0.0, 1.0), (28e9, 0.0), (28e9, -3.0), (-1.0, 2.0)])
def test_fspl_rejects_non_positive(f, d):
    with pytest.raises(DomainError):
        channel.fspl(f, d)


def test_ci_reference_distance_and_decade():
    p = CiModelParams(d0=1.0, pl_d0=61.38, n=2.0)
    assert channel.ci_path_loss(p, 1.0) == 61.38
    assert channel.ci_path_loss(p, 10.0) == 61.38 + 20.0


def test_ci_hand_value():
    p = CiModelParams(d0=1.0, pl_d0=61.38, n=3.2)
    assert channel.ci_path_loss(p, 100.0) == pytest.approx(125.38, abs=0.01)


def test_ci_shadowing_is_additive():
    p = CiModelParams(d0=1.0, pl_d0=61.38, n=3.2, sigma=4.0)
    assert channel.ci_path_loss(p, 30.0, 2.5) - channel.ci_path_loss(p, 30.0) == pytest.approx(2.5)


def test_ci_anchored_uses_fspl():
    p = CiModelParams.anchored(28e9, 2.1)
    assert p.pl_d0 == channel.fspl(28e9, 1.0)


def test_ab_values():
    assert channel.ab_path_loss(AbModelParams(70.0, 2.9), 1.0) == 70.0
    assert channel.ab_path_loss(AbModelParams(70.0, 2.9), 100.0) == pytest.approx(128.0, abs=1e-12)


@pytest.mark.parametrize("fn, params", [(channel.ci_path_loss, CiModelParams(1.0, 61.38, 2.0)),
                                        (channel.ab_path_loss, AbModelParams(70.0, 2.9))])
def test_path_loss_rejects_non_positive_distance(fn, params):
    with pytest.raises(DomainError):
        fn(params, 0.0)


@given(st.floats(0.5, 5.0), st.floats(50.0, 80.0), st.floats(0.1, 10.0), st.floats(1.0, 5000.0))
def test_ci_to_ab_reproduces_ci(n, pl0, d0, d):
    ci = CiModelParams(d0, pl0, n)
    assert channel.ab_path_loss(channel.ci_to_ab(ci), d) == pytest.approx(channel.ci_path_loss(ci, d), abs=1e-9)


def test_ci_regression_recovers_exponent():
    rng = np.random.default_rng(3)
    p = CiModelParams.anchored(28e9, 3.4, sigma=9.7)
    d = 10 ** rng.uniform(0, 3, 10_000)
    pl = channel.ci_path_loss(p, d, rng.normal(0, p.sigma, d.size))
    slope = np.polyfit(10 * np.log10(d), pl, 1)[0]
    assert slope == pytest.approx(3.4, rel=0.02)


def test_rain_attenuation_point_value():
    cfg = ExtraLossConfig(rain_rate=25.4, frequency=28e9)
    assert channel.extra_losses(cfg, 200.0) == pytest.approx(1.4, abs=0.05)


def test_atmospheric_and_penetration():
    assert channel.extra_losses(ExtraLossConfig(atmospheric_coeff=1.0), 1000.0) == pytest.approx(1.0)
    glass = ExtraLossConfig(penetration_loss=channel.PENETRATION_TINTED_GLASS)
    assert channel.extra_losses(glass, 0.0) == 40.1
    assert channel.extra_losses(glass, 750.0) == 40.1
    assert channel.PENETRATION_BRICK == 28.3


def test_rain_interpolates_and_clamps():
    lo, hi = channel.rain_specific_attenuation(10.0, 28e9), channel.rain_specific_attenuation(10.0, 38e9)
    mid = channel.rain_specific_attenuation(10.0, 33e9)
    assert mid == pytest.approx(0.5 * (lo + hi))
    assert channel.rain_specific_attenuation(10.0, 10e9) == lo
    assert channel.rain_specific_attenuation(0.0, 60e9) == 0.0
    with pytest.raises(DomainError):
        channel.rain_specific_attenuation(-1.0)


def test_extra_loss_config_validation():
    with pytest.raises(DomainError):
        ExtraLossConfig(rain_rate=-1.0)


def test_nlos_fading_unit_mean():
    g = channel.sample_fading(LinkState.NLOS, 9.0, np.random.default_rng(0), 100_000)
    assert np.mean(channel.db_to_linear(g)) == pytest.approx(1.0, rel=0.01)


def test_los_fading_unit_mean_and_limit():
    g = channel.sample_fading(LinkState.LOS, 6.0, np.random.default_rng(1), 100_000)
    assert np.mean(channel.db_to_linear(g)) == pytest.approx(1.0, rel=0.01)
    assert channel.sample_fading(LinkState.LOS, math.inf, np.random.default_rng(1)) == 0.0


def test_fading_deterministic_per_seed():
    a = channel.sample_fading("NLOS", 9.0, np.random.default_rng(5), 50)
    b = channel.sample_fading("NLOS", 9.0, np.random.default_rng(5), 50)
    assert np.array_equal(a, b)


def test_link_snr_cancellation_and_linearity():
    radio = RadioConfig()
    pl = radio.tx_power + radio.tx_antenna_gain + radio.rx_antenna_gain - channel.noise_floor(radio)
    assert channel.link_snr(radio, pl) == pytest.approx(0.0, abs=1e-12)
    louder = RadioConfig(tx_power=radio.tx_power + 3.0)
    assert channel.link_snr(louder, 100.0) - channel.link_snr(radio, 100.0) == pytest.approx(3.0)


def test_link_snr_hand_budget():
    radio = RadioConfig(tx_power=30.0, tx_antenna_gain=24.5, rx_antenna_gain=24.5, bandwidth=100e6, noise_figure=7.0)
    # 30 + 49 - 125.38 - (-174 + 80 + 7)
    assert channel.link_snr(radio, 125.38) == pytest.approx(40.62, abs=0.1)


def test_los_probability():
    assert channel.los_probability(0.0) == 1.0
    assert channel.los_probability(50.0, 50.0) == pytest.approx(math.exp(-1))
    assert channel.los_probability(1e4, math.inf) == 1.0


def test_radio_config_validation():
    with pytest.raises(DomainError):
        RadioConfig(bandwidth=0.0)
