import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import simpson

from mcdesign import engine, marchenko
from mcdesign.domain import ChannelSystem, MatrixSolution, PiecewiseConstant
from mcdesign.engine import SolverConfig
from mcdesign.errors import InvalidSpecError, SingularTransformError


def test_zero_weights_return_flagged_free_system():
    res = marchenko.create_reflectionless((0.0, 1.0), -0.5, [0.0, 0.0])
    assert res.degenerate_request
    assert np.max(np.abs(res.potential.matrix_batch(np.linspace(-5, 5, 50)))) == 0.0


def test_one_channel_creation_is_the_soliton_well():
    kap = 0.8
    m_w = 1.3
    pot = marchenko.ReflectionlessPotential((0.0,), -kap ** 2, [m_w])
    x0 = math.log(m_w ** 2 / (2 * kap)) / (2 * kap)
    xs = np.linspace(-8.0, 8.0, 100)
    expected = -2 * kap ** 2 / np.cosh(kap * (xs - x0)) ** 2
    assert np.max(np.abs(pot.matrix_batch(xs)[:, 0, 0] - expected)) < 1e-12


def test_created_state_is_normalized_and_solves_the_system(cfg):
    res = marchenko.create_reflectionless((0.0, 1.0), -0.5, [1.0, 1.0], x_max=40.0)
    xs = engine.system_grid(res.system, cfg)
    psi, dpsi = res.potential.state(xs)
    assert abs(simpson(np.sum(psi ** 2, axis=1), x=xs) - 1.0) < 1e-6
    ms = MatrixSolution(-0.5, "regular", xs, psi, dpsi)
    assert engine.solution_residual(res.system, ms) < 1e-6


def test_engine_finds_exactly_the_created_level(cfg_fast):
    res = marchenko.create_reflectionless((0.0, 1.0), -0.5, [1.0, 1.0], x_max=40.0)
    found = engine.find_bound_states(res.system, (-1.3, -0.05),
                                     SolverConfig(step=2e-3, bracket_step=0.02))
    assert len(found) == 1
    assert abs(found[0].energy + 0.5) < 1e-6


@settings(max_examples=10, deadline=None)
@given(st.floats(min_value=1.2, max_value=9.0))
def test_transparency_at_random_energies(energy):
    res = marchenko.create_reflectionless((0.0, 1.0), -0.5, [1.0, 1.0], x_max=40.0)
    d = engine.scattering_matrix(res.system, energy, SolverConfig(step=2e-3))
    assert np.max(np.abs(d.reflection_right)) < 1e-3


def test_left_tail_exponents_follow_the_anomaly():
    report = marchenko.asymptotic_anomaly_report((0.0, 1.0), -0.5, [1.0, 1.0])
    k1, k2 = math.sqrt(0.5), math.sqrt(1.5)
    assert report.anomalous
    assert abs(report.fitted[0] - (2 * k2 - k1)) / (2 * k2 - k1) < 0.02
    assert abs(report.fitted[1] - k2) / k2 < 0.02


def test_equal_thresholds_have_natural_tails():
    report = marchenko.asymptotic_anomaly_report((0.0, 0.0), -0.5, [1.0, 0.6])
    assert not report.anomalous
    assert np.allclose(report.expected, report.natural)


def test_effective_reduction_asymptote_and_residual():
    red = marchenko.effective_one_channel((0.0, 1.0), -0.5, [1.0, 1.0])
    k1, k2 = math.sqrt(0.5), math.sqrt(1.5)
    assert red.asymptote == pytest.approx(4 * k2 * (k2 - k1), abs=1e-12)
    assert abs(red.potential(np.array([-30.0]))[0] - red.asymptote) < 1e-6
    assert red.residual() < 1e-5


def test_equal_thresholds_reduction_has_zero_asymptote():
    red = marchenko.effective_one_channel((0.0, 0.0), -0.5, [1.0, 1.0])
    assert red.asymptote == 0.0


def test_reduction_requires_first_weight():
    with pytest.raises(InvalidSpecError):
        marchenko.effective_one_channel((0.0, 1.0), -0.5, [0.0, 1.0])


def test_two_level_reduces_to_one_when_second_vanishes():
    one = marchenko.ReflectionlessPotential((0.0, 1.0), -0.5, [1.0, 1.0])
    two = marchenko.TwoLevelPotential((0.0, 1.0), (-0.5, [1.0, 1.0]),
                                      (-0.7, [0.0, 0.0]))
    xs = np.linspace(-15.0, 15.0, 500)
    assert np.max(np.abs(one.matrix_batch(xs) - two.matrix_batch(xs))) < 1e-10


def test_degenerate_pair_requires_independent_weights():
    with pytest.raises(SingularTransformError):
        marchenko.create_two_states((0.0, 0.0), (-0.5, [1.0, 1.0]),
                                    (-0.5, [2.0, 2.0]))


def test_two_created_states_carry_the_requested_weights(cfg_fast):
    res = marchenko.create_two_states((0.0, 0.0), (-0.5, [1.0, 1.0]),
                                      (-0.7, [1.0, -0.6]), x_max=40.0)
    found = engine.find_bound_states(res.system, (-1.0, -0.1),
                                     SolverConfig(step=2e-3, bracket_step=0.02))
    assert len(found) == 2
    for state, (e_req, m_req) in zip(found, [(-0.7, [1.0, -0.6]), (-0.5, [1.0, 1.0])]):
        assert abs(state.energy - e_req) < 1e-6
        got = state.m_datum.weights
        m_req = np.asarray(m_req)
        got = got * np.sign(got[0]) * np.sign(m_req[0])
        # the closed forms are unit normalized; rescale the request likewise
        kap = np.sqrt(-e_req + np.array([0.0, 0.0]))
        scale = np.linalg.norm(got) / np.linalg.norm(m_req)
        assert np.max(np.abs(got / scale - m_req)) < 1e-4 * np.max(np.abs(m_req))


def test_level_can_cross_another_without_singularity():
    # sweep the second level through the first; independent weights
    for e2 in np.linspace(-0.9, -0.2, 29):
        pot = marchenko.TwoLevelPotential((0.0, 0.0), (-0.5, [1.0, 0.3]),
                                          (float(e2), [0.2, 1.0]))
        xs = np.linspace(-30.0, 10.0, 400)
        assert np.all(np.isfinite(pot.matrix_batch(xs)))


def test_add_zero_weights_returns_the_base(cfg):
    m = np.array([[-3.0, 0.4], [0.4, -2.0]])
    pot = PiecewiseConstant(2, pieces=[(-1.5, 1.5, m)])
    base = ChannelSystem((0.0, 1.0), pot, "whole_line", 25.0)
    res = marchenko.add_bound_state(base, -6.0, [0.0, 0.0], cfg)
    xs = res.grid
    assert np.max(np.abs(res.potential.matrix_batch(xs)
                         - base.potential.matrix_batch(xs))) == 0.0


def test_add_on_free_background_matches_direct_creation(cfg):
    free_sys = ChannelSystem((0.0, 1.0), PiecewiseConstant(2), "whole_line", 30.0)
    res = marchenko.add_bound_state(free_sys, -0.5, [1.0, 1.0], cfg)
    direct = marchenko.ReflectionlessPotential((0.0, 1.0), -0.5, [1.0, 1.0])
    xs = res.grid
    inner = (xs > -20.0) & (xs < 20.0)
    dev = res.potential.matrix_batch(xs[inner]) - direct.matrix_batch(xs[inner])
    assert np.max(np.abs(dev)) < 1e-9


def test_add_keeps_spectrum_and_s_matrix():
    m = np.array([[-3.0, 0.4], [0.4, -2.0]])
    pot = PiecewiseConstant(2, pieces=[(-1.5, 1.5, m)])
    base = ChannelSystem((0.0, 1.0), pot, "whole_line", 25.0)
    cfg = SolverConfig(step=1e-3, bracket_step=0.05)
    base_states = engine.find_bound_states(base, (-3.0, -0.05), cfg)
    res = marchenko.add_bound_state(base, -1.8, [1.0, 0.7], cfg)
    new_states = engine.find_bound_states(res.system, (-3.0, -0.05), cfg)
    assert len(new_states) == len(base_states) + 1
    assert any(abs(s.energy + 1.8) < 1e-6 for s in new_states)
    olds = [s.energy for s in new_states if abs(s.energy + 1.8) > 1e-4]
    for e_new, e_old in zip(olds, [s.energy for s in base_states]):
        assert abs(e_new - e_old) < 1e-6
    for e_probe in (1.5, 2.5, 4.0, 6.0, 8.0):
        d0 = engine.scattering_matrix(base, e_probe, cfg)
        d1 = engine.scattering_matrix(res.system, e_probe, cfg)
        # scattering probabilities and the right reflection amplitudes are
        # exact; transmission phases carry the unimodular bound-pole factor
        assert np.max(np.abs(np.abs(d1.s_matrix) - np.abs(d0.s_matrix))) < 1e-4
        assert np.max(np.abs(d1.reflection_right - d0.reflection_right)) < 1e-4


def test_jost_map_agrees_with_direct_integration(cfg_fast):
    m = np.array([[-3.0, 0.4], [0.4, -2.0]])
    pot = PiecewiseConstant(2, pieces=[(-1.5, 1.5, m)])
    base = ChannelSystem((0.0, 1.0), pot, "whole_line", 25.0)
    cfg = SolverConfig(step=2e-3)
    res = marchenko.add_bound_state(base, -1.8, [1.0, 0.7], cfg)
    e_probe = 3.0
    jost_base = engine.integrate_jost(base, e_probe, cfg)
    mapped = res.map_jost(jost_base)
    direct = engine.integrate_jost(res.system, e_probe, cfg)
    probes = np.linspace(-8.0, 20.0, 25)
    worst = 0.0
    scale = 0.0
    for x in probes:
        mv, _ = mapped.at(x)
        dv, _ = direct.at(x)
        worst = max(worst, float(np.max(np.abs(mv - dv))))
        scale = max(scale, float(np.max(np.abs(dv))))
    assert worst < 1e-5 * scale


def test_removal_of_the_created_level_restores_free_motion(cfg_fast):
    cfg = SolverConfig(step=2e-3, bracket_step=0.05)
    res = marchenko.create_reflectionless((0.0, 1.0), -0.5, [1.0, 1.0], x_max=30.0)
    states = engine.find_bound_states(res.system, (-1.2, -0.05), cfg)
    assert len(states) == 1
    removed = marchenko.remove_bound_state(res.system, states[0], cfg)
    xs = removed.grid
    inner = (xs > -15.0) & (xs < 15.0)
    assert np.max(np.abs(removed.potential.matrix_batch(xs[inner]))) < 1e-5
    assert engine.find_bound_states(removed.system, (-1.2, -0.05), cfg) == []


def test_move_level_keeps_s_and_other_levels(coupled_well_system, cfg):
    states = engine.find_bound_states(coupled_well_system, (-4.99, -0.02), cfg)
    gs = states[0]
    res = marchenko.move_level(coupled_well_system, gs, gs.energy + 0.3, cfg=cfg)
    found = engine.find_bound_states(res.system, (-4.99, -0.02), cfg)
    targets = [gs.energy + 0.3] + [s.energy for s in states[1:]]
    assert len(found) == len(targets)
    assert all(abs(s.energy - t) < 1e-5 for s, t in zip(found, targets))
    for e_probe in (1.5, 3.5, 5.5):
        d0 = engine.scattering_matrix(coupled_well_system, e_probe, cfg)
        d1 = engine.scattering_matrix(res.system, e_probe, cfg)
        assert np.max(np.abs(d1.s_matrix - d0.s_matrix)) < 1e-4
    got = found[0].m_datum.weights
    req = gs.m_datum.weights
    got = got * np.sign(got[0]) * np.sign(req[0])
    assert np.max(np.abs(got / req - 1.0)) < 1e-4


def test_requested_energy_must_sit_below_thresholds(cfg):
    free_sys = ChannelSystem((0.0, 1.0), PiecewiseConstant(2), "whole_line", 20.0)
    with pytest.raises(InvalidSpecError):
        marchenko.add_bound_state(free_sys, 0.5, [1.0, 1.0], cfg)
