"""Network solve and line-flow formula tests.

Golden values were produced by a standalone complex-arithmetic script
evaluating the closed forms directly, then frozen here.
"""

import math
import random

import pytest

from droopsim.errors import DegenerateNetworkError, InvalidParameterError
from droopsim.powerflow import (
    LineModel,
    LoadModel,
    Phasor,
    complex_line_flow,
    load_admittance,
    lossless_line_flow,
    power_balance_residual,
    small_angle_flow,
    solve_star_network,
)

SQRT3 = math.sqrt(3.0)

LINE = LineModel(r_ohm=0.5, x_ohm=2.5)
LOAD = LoadModel(p_rated_w=10000.0, q_rated_var=5000.0, v_ref_ll=400.0)


def test_phasor_polar_round_trip():
    for mag, angle in [(230.94, 0.0), (1.0, 1.2), (400.0, -2.9),
                       (0.5, 3.1), (123.4, -0.0001)]:
        p = Phasor.from_polar(mag, angle)
        assert abs(p.mag - mag) < 1e-12 * mag
        back = Phasor.from_polar(p.mag, p.angle)
        assert abs(back.re - p.re) < 1e-12 * mag
        assert abs(back.im - p.im) < 1e-12 * mag


def test_phasor_complex_conversion():
    p = Phasor(3.0, -4.0)
    assert complex(p) == complex(3.0, -4.0)
    assert abs(p.mag - 5.0) < 1e-12


def test_line_model_rejects_bad_values():
    with pytest.raises(InvalidParameterError):
        LineModel(r_ohm=0.5, x_ohm=0.0)
    with pytest.raises(InvalidParameterError):
        LineModel(r_ohm=-0.1, x_ohm=2.5)


def test_load_model_rejects_bad_values():
    with pytest.raises(InvalidParameterError):
        LoadModel(p_rated_w=1000.0, q_rated_var=0.0, v_ref_ll=0.0)
    with pytest.raises(InvalidParameterError):
        LoadModel(p_rated_w=-1.0, q_rated_var=0.0, v_ref_ll=400.0)


def test_load_admittance_zero_load():
    y = load_admittance(LoadModel(p_rated_w=0.0, q_rated_var=0.0,
                                  v_ref_ll=400.0))
    assert y == 0.0


def test_load_admittance_components():
    y = load_admittance(LOAD)
    v_ln = 400.0 / SQRT3
    assert abs(y.real - 10000.0 / (3.0 * v_ln ** 2)) < 1e-15
    assert abs(y.imag + 5000.0 / (3.0 * v_ln ** 2)) < 1e-15


def test_load_admittance_round_trip():
    # a bus held at exactly the reference voltage draws the ratings back
    y = load_admittance(LOAD)
    v_ln = 400.0 / SQRT3
    s = 3.0 * v_ln ** 2 * y.conjugate()
    assert abs(s.real - 10000.0) < 1e-9 * 10000.0
    assert abs(s.imag - 5000.0) < 1e-9 * 5000.0


def test_star_single_source_open_circuit():
    e = Phasor.from_polar(230.94, 0.1)
    sol = solve_star_network([e], [LINE], 0.0)
    assert abs(sol.v_pcc.re - e.re) < 1e-12
    assert abs(sol.v_pcc.im - e.im) < 1e-12
    assert sol.currents[0].mag < 1e-12
    assert abs(sol.s_out[0][0]) < 1e-9
    assert abs(sol.s_out[0][1]) < 1e-9


def test_star_two_identical_sources_split_evenly():
    e = Phasor.from_polar(230.94, 0.0)
    sol = solve_star_network([e, e], [LINE, LINE], load_admittance(LOAD))
    assert sol.s_out[0] == sol.s_out[1]
    assert sol.currents[0] == sol.currents[1]


def test_star_golden_case():
    # two 230.94 V sources, 0.5 + j2.5 lines, 10 kW / 5 kvar rated load
    e = Phasor.from_polar(230.94, 0.0)
    sol = solve_star_network([e, e], [LINE, LINE], load_admittance(LOAD))
    tol = 1e-9
    assert abs(sol.v_pcc.re - 217.99646017699118) < tol * 230.0
    assert abs(sol.v_pcc.im - (-14.533097345132745)) < tol * 230.0
    assert abs(sol.s_out[0][0] - 4562.434290265484) < tol * 1e4
    assert abs(sol.s_out[0][1] - 2674.530446017691) < tol * 1e4
    assert abs(sol.s_load[0] - 8950.062669026549) < tol * 1e4
    assert abs(sol.s_load[1] - 4475.0313345132745) < tol * 1e4
    assert abs(sol.s_losses[0][0] - 87.4029557522122) < tol * 1e4
    assert abs(sol.s_losses[0][1] - 437.01477876106094) < tol * 1e4


def test_star_kirchhoff_at_bus():
    e1 = Phasor.from_polar(231.0, 0.05)
    e2 = Phasor.from_polar(228.0, -0.02)
    y = load_admittance(LOAD)
    sol = solve_star_network([e1, e2], [LINE, LineModel(0.3, 1.8)], y)
    i_sum = complex(sol.currents[0]) + complex(sol.currents[1])
    i_load = complex(sol.v_pcc) * y
    assert abs(i_sum - i_load) < 1e-9 * abs(i_load)


def test_star_permutation_symmetry():
    e1 = Phasor.from_polar(231.0, 0.05)
    e2 = Phasor.from_polar(228.0, -0.02)
    e3 = Phasor.from_polar(233.0, 0.01)
    lines = [LINE, LineModel(0.3, 1.8), LineModel(0.1, 3.0)]
    y = load_admittance(LOAD)
    sol = solve_star_network([e1, e2, e3], lines, y)
    perm = solve_star_network([e3, e1, e2], [lines[2], lines[0], lines[1]], y)
    # summation order changes, so agreement is to rounding, not bitwise
    assert abs(complex(sol.v_pcc) - complex(perm.v_pcc)) < 1e-12 * 231.0
    pairs = [(0, 1), (1, 2), (2, 0)]
    for a, b in pairs:
        assert abs(sol.s_out[a][0] - perm.s_out[b][0]) < 1e-9
        assert abs(sol.s_out[a][1] - perm.s_out[b][1]) < 1e-9


def test_star_scaling_property():
    e1 = Phasor.from_polar(231.0, 0.05)
    e2 = Phasor.from_polar(228.0, -0.02)
    y = load_admittance(LOAD)
    lines = [LINE, LineModel(0.3, 1.8)]
    base = solve_star_network([e1, e2], lines, y)
    k = 1.7
    scaled = solve_star_network(
        [Phasor(k * e1.re, k * e1.im), Phasor(k * e2.re, k * e2.im)],
        lines, y)
    assert abs(scaled.v_pcc.mag - k * base.v_pcc.mag) < 1e-9 * base.v_pcc.mag
    for i in range(2):
        assert abs(scaled.s_out[i][0] - k * k * base.s_out[i][0]) \
            < 1e-9 * abs(base.s_out[i][0])
        assert abs(scaled.s_out[i][1] - k * k * base.s_out[i][1]) \
            < 1e-9 * abs(base.s_out[i][1])


def test_star_power_balance_random_networks():
    rng = random.Random(987)
    for _ in range(25):
        n = rng.randint(1, 5)
        emfs = [Phasor.from_polar(200.0 + 60.0 * rng.random(),
                                  0.3 * (rng.random() - 0.5))
                for _ in range(n)]
        lines = [LineModel(r_ohm=rng.random(), x_ohm=0.5 + 3.0 * rng.random())
                 for _ in range(n)]
        load = LoadModel(p_rated_w=2e4 * rng.random(),
                         q_rated_var=1e4 * rng.random(),
                         v_ref_ll=400.0)
        sol = solve_star_network(emfs, lines, load_admittance(load))
        assert power_balance_residual(sol) < 1e-9


def test_star_degenerate_network():
    # load admittance engineered to cancel the line admittances exactly
    e = Phasor.from_polar(230.0, 0.0)
    lines = [LineModel(r_ohm=0.0, x_ohm=1.0), LineModel(r_ohm=0.0, x_ohm=1.0)]
    with pytest.raises(DegenerateNetworkError):
        solve_star_network([e, e], lines, complex(0.0, 2.0))


def test_star_rejects_bad_inputs():
    with pytest.raises(InvalidParameterError):
        solve_star_network([], [], 0.0)
    with pytest.raises(InvalidParameterError):
        solve_star_network([Phasor(230.0, 0.0)], [LINE, LINE], 0.0)


def test_complex_line_flow_zero_difference():
    v = Phasor.from_polar(230.94, 0.3)
    p, q = complex_line_flow(v, v, LINE)
    assert p == 0.0
    assert q == 0.0


def test_complex_line_flow_golden():
    vs = Phasor.from_polar(230.94, 0.05)
    vr = Phasor.from_polar(230.94, 0.0)
    p, q = complex_line_flow(vs, vr, LineModel(r_ohm=0.0, x_ohm=2.5))
    assert abs(p - 3198.663850566591) < 1e-9 * 3200.0
    assert abs(q - 79.98326013770239) < 1e-9 * 3200.0


def test_complex_matches_lossless_when_r_zero():
    vs = Phasor.from_polar(230.94, 0.05)
    vr = Phasor.from_polar(230.94, 0.0)
    p3, q3 = complex_line_flow(vs, vr, LineModel(r_ohm=0.0, x_ohm=2.5))
    p1, q1 = lossless_line_flow(230.94, 230.94, 0.05, 2.5)
    scale = max(abs(p3), abs(q3))
    assert abs(p3 - 3.0 * p1) < 1e-12 * scale
    assert abs(q3 - 3.0 * q1) < 1e-12 * scale


def test_lossless_zero_angle_equal_mags():
    p, q = lossless_line_flow(230.94, 230.94, 0.0, 2.5)
    assert p == 0.0
    assert q == 0.0


def test_lossless_max_transfer_at_quarter_turn():
    p, _ = lossless_line_flow(230.0, 225.0, math.pi / 2.0, 2.5)
    assert abs(p - 230.0 * 225.0 / 2.5) < 1e-9


def test_lossless_golden():
    p, q = lossless_line_flow(230.94, 230.94, 0.05, 2.5)
    assert abs(p - 1066.2212835221972) < 1e-9 * 1100.0
    assert abs(q - 26.66108671256734) < 1e-9 * 1100.0


def test_small_angle_trivial_zeros():
    delta, dv = small_angle_flow(0.0, 0.0, 230.94, 230.94, 2.5)
    assert delta == 0.0
    assert dv == 0.0


def test_small_angle_matches_exact_inversion():
    # For modest angles, feeding the exact per-phase flows back through
    # the linearized equations recovers the angle within 1% and the
    # voltage difference within 1% of the voltage scale.
    v1 = 230.94
    for ratio in (0.98, 0.99, 1.0, 1.01, 1.02):
        v2 = v1 * ratio
        for delta_true in (-0.1, -0.05, 0.01, 0.05, 0.1):
            p, q = lossless_line_flow(v1, v2, delta_true, 2.5)
            delta_est, dv_est = small_angle_flow(p, q, v1, v2, 2.5)
            assert abs(delta_est - delta_true) < 0.01 * abs(delta_true)
            assert abs(dv_est - (v1 - v2)) < 0.01 * v1


def test_small_angle_rejects_bad_inputs():
    with pytest.raises(InvalidParameterError):
        small_angle_flow(100.0, 0.0, 0.0, 230.0, 2.5)
    with pytest.raises(InvalidParameterError):
        small_angle_flow(100.0, 0.0, 230.0, 230.0, -1.0)
    with pytest.raises(InvalidParameterError):
        lossless_line_flow(230.0, 230.0, 0.1, 0.0)


def test_complex_line_flow_rejects_zero_impedance():
    import types

    stub = types.SimpleNamespace(z=0j)
    with pytest.raises(InvalidParameterError):
        complex_line_flow(Phasor(230.0, 0.0), Phasor(229.0, 0.0), stub)
