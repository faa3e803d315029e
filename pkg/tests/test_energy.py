import dataclasses

import numpy as np
import pytest

from apexcvx import energy as E
from apexcvx import scp as S
from apexcvx import track as T
from apexcvx import vehicle as V


@pytest.fixture(scope="module")
def car():
    return E.hybrid_vehicle(V.default_vehicle())


@pytest.fixture(scope="module")
def oval(car):
    return T.make_test_track("oval", samples=200, straight_length=500,
                             radius=60, half_width=6)


@pytest.fixture(scope="module")
def scenario_suite(oval, car):
    cfg = S.SCPConfig(samples=200, max_iters=15)
    return E.run_scenarios(oval, car, E.default_hybrid(car), cfg)


def test_component_limits_validated(car):
    with pytest.raises(E.EnergyError, match="P_max exceeds"):
        E.PowertrainConfig(
            (E.PowertrainComponent("motor", "R", P_max=2 * car.P_max_R,
                                   battery=True),),
            capacity=1e6).validate(car)
    with pytest.raises(E.EnergyError, match="battery-coupled"):
        E.PowertrainConfig(
            (E.PowertrainComponent("engine", "R", P_max=1e5),),
            capacity=1e6).validate(car)
    with pytest.raises(E.EnergyError, match="capacity"):
        E.PowertrainConfig(
            (E.PowertrainComponent("motor", "R", P_max=1e5, battery=True),),
            capacity=0.0).validate(car)


def test_unlimited_battery_reduces_to_base(oval):
    # motor alone with the full axle envelope and a huge battery behaves like
    # the plain problem
    plain = V.default_vehicle()
    cfg = S.SCPConfig(samples=200, max_iters=15)
    base = S.solve_min_lap_time(oval, plain, cfg)
    pt = E.PowertrainConfig(
        (E.PowertrainComponent("motor", "R", P_max=plain.P_max_R,
                               P_min=-1e6, T_max=plain.T_max_R,
                               T_min=plain.T_min_R, battery=True),
         E.PowertrainComponent("brake_F", "F", P_max=0.0, T_max=0.0,
                               T_min=plain.T_min_F)),
        capacity=1e12)
    cfg_e = dataclasses.replace(cfg, powertrain=pt,
                                scenario=E.EnergyScenario("drain"))
    hybrid = S.solve_min_lap_time(oval, plain, cfg_e)
    assert base.converged and hybrid.converged
    assert abs(hybrid.t_lap - base.t_lap) <= 2 * cfg.epsilon


def test_zero_motor_equals_engine_only(oval, car):
    cfg = S.SCPConfig(samples=200, max_iters=15)
    engine_only_pt = E.PowertrainConfig(
        (E.PowertrainComponent("engine", "R", P_max=440e3, P_min=0.0,
                               T_max=4300.0, T_min=0.0),
         E.PowertrainComponent("motor", "R", P_max=0.0, P_min=0.0,
                               T_max=0.0, T_min=0.0, battery=True),
         E.PowertrainComponent("brake_R", "R", P_max=0.0, T_max=0.0,
                               T_min=car.T_min_R),
         E.PowertrainComponent("brake_F", "F", P_max=0.0, T_max=0.0,
                               T_min=car.T_min_F)),
        capacity=6e5)
    laps = {}
    for kind in ("drain", "sustain"):
        cfg_e = dataclasses.replace(cfg, powertrain=engine_only_pt,
                                    scenario=E.EnergyScenario(kind))
        rep = S.solve_min_lap_time(oval, car, cfg_e)
        assert rep.converged
        laps[kind] = rep.t_lap
    # dead motor: the scenario boundary conditions cannot matter
    assert abs(laps["drain"] - laps["sustain"]) <= 2 * cfg.epsilon


def test_scenario_ordering(scenario_suite):
    td = scenario_suite.t("drain", "free")
    ts = scenario_suite.t("sustain", "free")
    tf = scenario_suite.t("fill", "free")
    assert td <= ts + 1e-6
    assert ts <= tf + 1e-6


def test_drain_fixed_equals_free(scenario_suite):
    eps = 0.01
    assert abs(scenario_suite.t("drain", "fixed")
               - scenario_suite.t("drain", "free")) <= 2 * eps


def test_sustain_fill_fixed_gap_small(scenario_suite):
    eps = 0.01
    for kind in ("sustain", "fill"):
        free = scenario_suite.t(kind, "free")
        fixed = scenario_suite.t(kind, "fixed")
        gap = (fixed - free) / free
        assert gap >= -2 * eps / free
        assert gap <= 0.005


def test_battery_stays_in_box(scenario_suite):
    cap = scenario_suite.capacity
    for run in scenario_suite.runs:
        assert run.status == "converged"
        assert run.battery_min >= -1e-3 * cap
        assert run.battery_max <= cap * (1 + 1e-6)


def test_energy_accounting_recheck(scenario_suite):
    for run in scenario_suite.runs:
        assert run.recheck_error < 0.005


def test_regen_never_exceeds_braking(oval, car):
    # braking demand: decelerating wheel force summed over the axles that brake
    cfg = S.SCPConfig(samples=200, max_iters=15, powertrain=E.default_hybrid(car),
                      scenario=E.EnergyScenario("sustain"))
    rep = S.solve_min_lap_time(oval, car, cfg)
    assert rep.converged
    it = rep.final
    regen = np.maximum(-it.components["motor"], 0.0)
    total_brake = np.maximum(-it.FwR, 0.0) + np.maximum(-it.FwF, 0.0)
    tol = 1e-3 * car.m * car.g
    assert np.all(regen <= total_brake + tol)
