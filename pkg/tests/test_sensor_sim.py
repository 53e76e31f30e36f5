import math

import numpy as np
import pytest

from fes.sensor_sim import (
    GasSpecies,
    SampleHoldProtocol,
    SensorGeometry,
    SensorState,
    UvConfig,
    apply_gas_mixture,
    apply_uv,
    min_measurement_time,
    render_sensor_voltage,
    run_sample_and_hold,
)
from fes.signal_synth import Fluctuator, johnson_noise_psd, lorentzian_psd
from fes.spectral import CaptureConfig, welch_psd

GEOM = SensorGeometry(
    surface_A_S=1e-6, thickness_d=1e-3, diffusion_D=1e-6, R0=1e4, hooge_A=1e-12
)


def _tau(corner_hz):
    return 1.0 / (2.0 * math.pi * corner_hz)


def _state(strengths_corners, mean_R=1e4, T=300.0, uv=None):
    bank = tuple(Fluctuator(strength_c=s, tau=_tau(fc)) for s, fc in strengths_corners)
    return SensorState(geometry=GEOM, bank=bank, mean_R=mean_R, temperature=T, uv=uv)


class TestGasSpecies:
    def test_validation(self):
        with pytest.raises(ValueError):
            GasSpecies(name="", band_coeffs=((0.1, 1.0, 2.0),))
        with pytest.raises(ValueError):
            GasSpecies(name="x", band_coeffs=((1.0, 0.5, 2.0),))  # hi <= lo
        with pytest.raises(ValueError):
            GasSpecies(name="x", band_coeffs=((-0.1, 1.0, 2.0),))
        with pytest.raises(ValueError):
            GasSpecies(name="x")  # no nonzero coefficient anywhere
        with pytest.raises(ValueError):
            GasSpecies(name="x", index_coeffs=((0, 1.0),), saturation_c=0.0)

    def test_effective_concentration(self):
        linear = GasSpecies(name="a", index_coeffs=((0, 1.0),))
        assert linear.effective_concentration(3.7) == 3.7
        sat = GasSpecies(name="b", index_coeffs=((0, 1.0),), saturation_c=10.0)
        assert sat.effective_concentration(10.0) == pytest.approx(5.0)
        # asymptote is saturation_c
        assert sat.effective_concentration(1e9) == pytest.approx(10.0, rel=1e-6)


class TestApplyGasMixture:
    # dyadic strengths and coefficients make the increment arithmetic exact,
    # so these comparisons can use == instead of approx
    def test_band_split_even(self):
        base = _state([(4.0, 0.5), (4.0, 2.0), (4.0, 100.0)])
        sp = GasSpecies(name="a", band_coeffs=((0.1, 10.0, 1.0),))
        out = apply_gas_mixture(base, {sp: 0.5})
        s = [f.strength_c for f in out.bank]
        assert s == [4.25, 4.25, 4.0]  # 1.0 * 0.5 split over the two in-band
        assert out.clamp_events == 0
        # base untouched
        assert [f.strength_c for f in base.bank] == [4.0, 4.0, 4.0]

    def test_index_targeting_and_dr(self):
        base = _state([(4.0, 0.5), (4.0, 2.0)], mean_R=100.0)
        sp = GasSpecies(name="a", index_coeffs=((1, 0.5),), dr_coeff=2.0)
        out = apply_gas_mixture(base, {sp: 0.5})
        assert [f.strength_c for f in out.bank] == [4.0, 4.25]
        assert out.mean_R == 101.0

    def test_mixture_is_order_independent(self):
        base = _state([(4.0, 0.5), (4.0, 2.0)])
        a = GasSpecies(name="a", band_coeffs=((0.1, 10.0, 1.0),), dr_coeff=2.0)
        b = GasSpecies(name="b", index_coeffs=((0, 0.25),), dr_coeff=-0.5)
        one_call = apply_gas_mixture(base, {a: 0.5, b: 1.0})
        sequential = apply_gas_mixture(apply_gas_mixture(base, {b: 1.0}), {a: 0.5})
        assert [f.strength_c for f in one_call.bank] == [
            f.strength_c for f in sequential.bank
        ]
        assert one_call.mean_R == sequential.mean_R

    def test_negative_coefficient_clamps_and_counts(self):
        base = _state([(1.0, 0.5), (4.0, 2.0)])
        sp = GasSpecies(name="quencher", index_coeffs=((0, -3.0),))
        out = apply_gas_mixture(base, {sp: 1.0})
        assert out.bank[0].strength_c > 0  # floored, still a valid fluctuator
        assert out.bank[0].strength_c < 1e-200
        assert out.clamp_events == 1

    def test_tau_and_activation_preserved(self):
        bank = (Fluctuator(strength_c=4.0, tau=0.1,
                           activation_energy=3e-20, tau0=1e-9),)
        base = SensorState(geometry=GEOM, bank=bank, mean_R=1e4, temperature=300.0)
        sp = GasSpecies(name="a", index_coeffs=((0, 1.0),))
        out = apply_gas_mixture(base, {sp: 2.0})
        assert out.bank[0].tau == 0.1
        assert out.bank[0].activation_energy == 3e-20
        assert out.bank[0].tau0 == 1e-9

    def test_errors(self):
        base = _state([(4.0, 0.5)])
        sp = GasSpecies(name="a", band_coeffs=((50.0, 60.0, 1.0),))
        with pytest.raises(ValueError, match="no fluctuators"):
            apply_gas_mixture(base, {sp: 1.0})
        oob = GasSpecies(name="b", index_coeffs=((5, 1.0),))
        with pytest.raises(ValueError, match="bank has"):
            apply_gas_mixture(base, {oob: 1.0})
        with pytest.raises(ValueError, match="unknown species"):
            apply_gas_mixture(base, {"nitrogen": 1.0})
        ok = GasSpecies(name="c", index_coeffs=((0, 1.0),))
        with pytest.raises(ValueError, match=">= 0"):
            apply_gas_mixture(base, {ok: -1.0})
        crusher = GasSpecies(name="d", index_coeffs=((0, 0.0), (0, 1.0)), dr_coeff=-1e9)
        with pytest.raises(ValueError, match="non-positive"):
            apply_gas_mixture(base, {crusher: 1.0})

    def test_species_db_lookup(self):
        base = _state([(4.0, 0.5)])
        db = {"ammonia": GasSpecies(name="ammonia", index_coeffs=((0, 2.0),))}
        out = apply_gas_mixture(base, {"ammonia": 0.25}, species_db=db)
        assert out.bank[0].strength_c == 4.5


class TestApplyUv:
    def test_zero_intensity_is_identity(self):
        state = _state([(4.0, 1.0)], uv=UvConfig(intensity=0.0))
        assert apply_uv(state) is state
        assert apply_uv(_state([(4.0, 1.0)])) is not None  # uv=None also fine

    def test_parallel_layer_resistance(self):
        uv = UvConfig(intensity=2.0, saturation_intensity=1.0,
                      penetration_fraction=0.05, modulation_depth=0.3,
                      plateau_strength_scale=0.0)
        state = _state([(4.0, 1.0)], mean_R=300.0, uv=uv)
        out = apply_uv(state)
        u = 2.0 / 3.0
        shrink = 1.0 - 0.3 * u
        assert out.mean_R == pytest.approx(300.0 / (0.95 + 0.05 / shrink), rel=1e-12)
        assert out.mean_R < 300.0  # UV always raises conductance
        assert len(out.bank) == 1  # plateau disabled

    def test_plateau_fluctuator(self):
        uv = UvConfig(intensity=1.0, saturation_intensity=1.0,
                      plateau_corner_hz=10.0, plateau_strength_scale=80.0)
        state = _state([(4.0, 1.0)], uv=uv)
        out = apply_uv(state)
        assert len(out.bank) == 2
        added = out.bank[-1]
        background = lorentzian_psd(state.bank[0], 10.0)
        assert added.strength_c == pytest.approx(80.0 * 0.5 * background, rel=1e-12)
        assert added.tau == pytest.approx(_tau(10.0), rel=1e-12)
        # the added plateau dominates the spectrum at its own corner
        assert lorentzian_psd(added, 10.0) > 10.0 * background

    def test_intensity_saturates(self):
        def r_at(intensity):
            uv = UvConfig(intensity=intensity, saturation_intensity=1.0,
                          plateau_strength_scale=0.0)
            return apply_uv(_state([(4.0, 1.0)], mean_R=1e4, uv=uv)).mean_R

        r1, r2 = r_at(100.0), r_at(200.0)
        assert abs(r2 - r1) / r1 < 0.01  # doubling strong UV changes almost nothing
        r_weak = r_at(0.1)
        assert abs(r_weak - 1e4) < abs(r1 - 1e4)  # weak UV does less


class TestSampleHold:
    PROTO = SampleHoldProtocol(
        heat_temperature=600.0, heat_duration=2.0,
        cold_temperature=300.0, measure_duration=5.0,
    )

    def _activated_state(self):
        # tau0 / activation chosen so both phases have resolvable dwells
        bank = (Fluctuator(strength_c=4.0, tau=0.05,
                           activation_energy=0.25 * 1.602176634e-19, tau0=2e-6),)
        return SensorState(geometry=GEOM, bank=bank, mean_R=1e4, temperature=300.0)

    def test_protocol_validation(self):
        with pytest.raises(ValueError):
            SampleHoldProtocol(heat_temperature=300.0, heat_duration=1.0,
                               cold_temperature=400.0, measure_duration=1.0)
        with pytest.raises(ValueError):
            SampleHoldProtocol(heat_temperature=400.0, heat_duration=-1.0,
                               cold_temperature=300.0, measure_duration=1.0)
        # equal temperatures are a legal control configuration
        SampleHoldProtocol(heat_temperature=300.0, heat_duration=1.0,
                           cold_temperature=300.0, measure_duration=1.0)

    def test_phases_and_determinism(self):
        state = self._activated_state()
        sp = GasSpecies(name="a", index_coeffs=((0, 1.0),))
        out = run_sample_and_hold(state, self.PROTO, {sp: 0.5}, fs=200.0, seed=11)
        assert set(out) == {"hot", "cold"}
        assert len(out["hot"]) == int(2.0 * 200)
        assert len(out["cold"]) == int(5.0 * 200)
        assert out["cold"].unit_label == "ohm"
        again = run_sample_and_hold(state, self.PROTO, {sp: 0.5}, fs=200.0, seed=11)
        assert np.array_equal(out["cold"].samples, again["cold"].samples)
        assert np.array_equal(out["hot"].samples, again["hot"].samples)
        other = run_sample_and_hold(state, self.PROTO, {sp: 0.5}, fs=200.0, seed=12)
        assert not np.array_equal(out["cold"].samples, other["cold"].samples)

    def test_hot_disturbance_only_in_hot_phase(self):
        state = self._activated_state()
        sp = GasSpecies(name="a", index_coeffs=((0, 1.0),))
        kick = Fluctuator(strength_c=4000.0, tau=0.02)
        quiet = run_sample_and_hold(state, self.PROTO, {sp: 0.5}, fs=200.0, seed=3)
        noisy = run_sample_and_hold(state, self.PROTO, {sp: 0.5}, fs=200.0, seed=3,
                                    hot_disturbance=kick)
        assert np.var(noisy["hot"].samples) > 10.0 * np.var(quiet["hot"].samples)
        # cold phase sees the same bank either way
        assert np.array_equal(noisy["cold"].samples, quiet["cold"].samples)


class TestRenderSensorVoltage:
    def test_zero_bias_is_johnson_only(self):
        state = _state([(1e-18, 1.0)], mean_R=1e4, T=300.0)
        ts = render_sensor_voltage(state, 0.0, 120.0, 2000.0, seed=21)
        sigma_mean = math.sqrt(johnson_noise_psd(1e4, 300.0) * 1000.0 / len(ts))
        assert abs(float(np.mean(ts.samples))) < 5.0 * sigma_mean
        spec = welch_psd(ts, CaptureConfig(t_w=1.0, t_m=120.0, fs=2000.0))
        expect = johnson_noise_psd(1e4, 300.0)
        assert spec.band_mean(50.0, 800.0) == pytest.approx(expect, rel=0.03)

    def test_bias_scales_resistance_noise(self):
        state = _state([(4.0, 1.0)], mean_R=1e4, T=300.0)
        bias = 1e-3
        ts = render_sensor_voltage(state, bias, 300.0, 200.0, seed=22)
        # DC level is I * R
        assert float(np.mean(ts.samples)) == pytest.approx(10.0, rel=0.05)
        spec = welch_psd(ts, CaptureConfig(t_w=10.0, t_m=300.0, fs=200.0))
        f = spec.freqs[(spec.freqs >= 0.2) & (spec.freqs < 0.6)]
        analytic = bias**2 * np.mean(
            lorentzian_psd(state.bank[0], f)
        ) + johnson_noise_psd(1e4, 300.0)
        assert spec.band_mean(0.2, 0.6) == pytest.approx(analytic, rel=0.2)

    def test_determinism(self):
        state = _state([(4.0, 1.0)])
        a = render_sensor_voltage(state, 1e-3, 5.0, 500.0, seed=5)
        b = render_sensor_voltage(state, 1e-3, 5.0, 500.0, seed=5)
        assert np.array_equal(a.samples, b.samples)


class TestStateAndGeometry:
    def test_min_measurement_time(self):
        assert min_measurement_time(GEOM) == pytest.approx(1.0)
        half = SensorGeometry(surface_A_S=1e-6, thickness_d=5e-4,
                              diffusion_D=1e-6, R0=1e4, hooge_A=1e-12)
        assert min_measurement_time(half) == pytest.approx(0.25)

    def test_corner_frequencies_and_analytic_psd(self):
        state = _state([(4.0, 1.0), (2.0, 10.0)])
        assert np.allclose(state.corner_frequencies(), [1.0, 10.0], rtol=1e-12)
        grid = np.array([0.1, 1.0, 10.0])
        spec = state.analytic_psd(grid)
        expect = lorentzian_psd(state.bank[0], grid) + lorentzian_psd(state.bank[1], grid)
        assert np.allclose(spec.values, expect, rtol=1e-14)

    def test_state_validation(self):
        with pytest.raises(ValueError):
            SensorState(geometry=GEOM, bank=(), mean_R=1e4, temperature=300.0)
        with pytest.raises(ValueError):
            SensorState(geometry=GEOM, bank=(Fluctuator(4.0, 0.1),),
                        mean_R=0.0, temperature=300.0)
        with pytest.raises(ValueError):
            SensorGeometry(surface_A_S=0.0, thickness_d=1e-3,
                           diffusion_D=1e-6, R0=1e4, hooge_A=1e-12)
