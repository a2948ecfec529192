import math
from dataclasses import FrozenInstanceError

import numpy as np
import pytest

from sps_ems.errors import DomainError, NumericalDivergenceError
from sps_ems.model.params import SystemParams
from sps_ems.model.plant import (
    bus_powers,
    dispatch_step,
    initial_state,
    plant_step,
    soc_update,
)

Q_AS = 72000.0
V_NOM = 12e3


class TestSocUpdate:
    def test_zero_power_keeps_soc(self):
        assert soc_update(0.75, 0.0, V_NOM, 1.0, Q_AS) == 0.75

    def test_discharge_and_charge_examples(self):
        assert soc_update(0.75, 10e6, V_NOM, 1.0, Q_AS) == pytest.approx(0.7384259, abs=1e-7)
        assert soc_update(0.75, -10e6, V_NOM, 1.0, Q_AS) == pytest.approx(0.7615741, abs=1e-7)

    def test_affine_in_power(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a, b = rng.uniform(-3, 3, size=2)
            p1, p2 = rng.uniform(-1e7, 1e7, size=2)
            soc = rng.uniform(0.7, 0.8)
            lhs = soc_update(soc, a * p1 + b * p2, V_NOM, 1.0, Q_AS) - soc
            rhs = a * (soc_update(soc, p1, V_NOM, 1.0, Q_AS) - soc) + b * (soc_update(soc, p2, V_NOM, 1.0, Q_AS) - soc)
            assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-15)

    def test_antisymmetric(self):
        soc = 0.75
        up = soc_update(soc, 4e6, V_NOM, 1.0, Q_AS) - soc
        down = soc_update(soc, -4e6, V_NOM, 1.0, Q_AS) - soc
        assert up == pytest.approx(-down, rel=1e-12)

    def test_k_steps_match_closed_form(self):
        soc = 0.75
        for _ in range(50):
            soc = soc_update(soc, 2e6, V_NOM, 1.0, Q_AS)
        expected = 0.75 - 50 * 2e6 / (Q_AS * V_NOM)
        assert soc == pytest.approx(expected, rel=1e-12)

    def test_no_clamping(self):
        # leaving [0, 1] is reported by the caller, not hidden here
        assert soc_update(0.01, 1e9, V_NOM, 1.0, Q_AS) < 0.0

    @pytest.mark.parametrize(
        "args",
        [
            (math.nan, 0.0, V_NOM, 1.0, Q_AS),
            (0.75, math.inf, V_NOM, 1.0, Q_AS),
            (0.75, 0.0, V_NOM, 1.0, 0.0),
            (0.75, 0.0, 0.0, 1.0, Q_AS),
        ],
    )
    def test_domain_errors(self, args):
        with pytest.raises(DomainError):
            soc_update(*args)


class TestPlantStep:
    def test_state_is_immutable(self, params):
        s = initial_state(params, 15e6, 15e6)
        with pytest.raises(FrozenInstanceError):
            s.soc = 0.5

    def test_zero_battery_current_keeps_soc_exactly(self, params):
        s = initial_state(params, 15e6, 15e6)
        nxt = plant_step(s, 15e6, 0.0, 15e6, 1e-3, params)
        assert nxt.soc == 0.75
        assert nxt.t == pytest.approx(1e-3)

    def test_equilibrium_holds(self, params):
        s = initial_state(params, 20e6, 25e6)
        for _ in range(500):
            s = plant_step(s, 20e6, 5e6, 25e6, 1e-3, params)
        bp = bus_powers(s, 5e6, params)
        assert s.v_c == pytest.approx(V_NOM, rel=1e-9)
        assert bp.p_g == pytest.approx(20e6, rel=1e-9)
        assert bp.p_load == pytest.approx(25e6, rel=1e-9)

    def test_pgm_step_settles_and_bus_stays_in_band(self, params):
        s = initial_state(params, 15e6, 15e6)
        dt = 1e-3
        t, p_g, v = [], [], []
        for _ in range(2000):
            s = plant_step(s, 18e6, -3e6, 15e6, dt, params)
            t.append(s.t)
            p_g.append(bus_powers(s, -3e6, params).p_g)
            v.append(s.v_c)
        t, p_g, v = np.array(t), np.array(p_g), np.array(v)

        assert np.all(np.abs(v - V_NOM) <= 0.05 * V_NOM)
        outside = np.flatnonzero(np.abs(p_g - 18e6) > 0.02 * 18e6)
        settle = t[outside[-1]] if outside.size else 0.0
        assert settle < 0.5

    def test_load_step_tracked(self, params):
        s = initial_state(params, 15e6, 15e6)
        for _ in range(1000):
            s = plant_step(s, 20e6, 5e6, 25e6, 1e-3, params)
        bp = bus_powers(s, 5e6, params)
        assert bp.p_load == pytest.approx(25e6, rel=0.02)
        assert abs(bp.residual) <= 0.02 * 25e6

    def test_non_positive_dt(self, params):
        s = initial_state(params, 15e6, 15e6)
        with pytest.raises(DomainError):
            plant_step(s, 15e6, 0.0, 15e6, 0.0, params)

    def test_unstable_step_reports_divergence(self, params):
        s = initial_state(params, 15e6, 15e6)
        with pytest.raises(NumericalDivergenceError) as ei:
            for _ in range(500):
                s = plant_step(s, 20e6, 0.0, 15e6, 0.5, params)
        assert ei.value.variable in {"i_g", "v_c", "i_L", "soc", "pi_pgm_integ", "pi_plm_integ", "p_b"}


class TestDispatchStep:
    def test_commands_realised_at_nominal_voltage(self, params):
        s = initial_state(params, 15e6, 15e6)
        nxt = dispatch_step(s, 17e6, 9e6, 26e6, 1.0, params)
        assert nxt.v_c == V_NOM
        assert nxt.i_g * V_NOM == pytest.approx(17e6)
        assert nxt.soc == soc_update(0.75, 9e6, V_NOM, 1.0, params.pcm.capacity_as)

    def test_capacity_is_taken_from_params(self):
        small = SystemParams.model_validate({"pcm": {"capacity_ahr": 10.0}})
        s = initial_state(small, 15e6, 15e6)
        nxt = dispatch_step(s, 15e6, 1e6, 16e6, 1.0, small)
        assert 0.75 - nxt.soc == pytest.approx(1e6 / (36000.0 * V_NOM), rel=1e-12)
