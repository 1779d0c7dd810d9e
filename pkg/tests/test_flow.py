"""Flow-field evaluation against independent finite-difference oracles."""

import math

import numpy as np
import pytest

from effdiff.flow import (
    Mode,
    check_divergence_free,
    check_parity,
    divergence_field,
    eval_F,
    eval_F_batch,
    eval_F_gradient,
    from_coefficient_table,
    from_stream_modes,
    taylor_green,
    taylor_green_modes,
)

TWO_PI = 2.0 * math.pi


def psi_tg(x):
    return math.sin(x[0]) * math.sin(x[1])


def skew_gradient_fd(psi, x, h=1e-6):
    """Independent oracle: F = (-dpsi/dx2, dpsi/dx1) by central differences."""
    d2 = (psi((x[0], x[1] + h)) - psi((x[0], x[1] - h))) / (2 * h)
    d1 = (psi((x[0] + h, x[1])) - psi((x[0] - h, x[1]))) / (2 * h)
    return np.array([-d2, d1])


@pytest.mark.parametrize("point", [(0.5 * math.pi, 0.0), (0.0, 0.0),
                                   (0.5 * math.pi, 0.5 * math.pi),
                                   (1.3, -2.7), (4.0, 9.0)])
def test_taylor_green_matches_finite_difference_oracle(point):
    flow = taylor_green()
    got = eval_F(flow, np.array(point))[:, 0]
    want = skew_gradient_fd(psi_tg, point)
    assert np.allclose(got, want, atol=5e-10)


def test_taylor_green_hand_values():
    flow = taylor_green()
    # Frozen from hand differentiation of sin(x1) sin(x2).
    assert np.allclose(eval_F(flow, np.array([0.5 * math.pi, 0.0]))[:, 0], [-1.0, 0.0],
                       atol=1e-15)
    assert np.allclose(eval_F(flow, np.array([0.0, 0.0]))[:, 0], [0.0, 0.0])
    assert np.allclose(eval_F(flow, np.array([0.5 * math.pi, 0.5 * math.pi]))[:, 0],
                       [0.0, 0.0], atol=1e-15)


def test_eval_dimension_mismatch():
    flow = taylor_green()
    with pytest.raises(ValueError):
        eval_F(flow, np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        eval_F_batch(flow, np.zeros((4, 3)))


def test_taylor_green_agrees_with_two_mode_stream_function():
    tg = taylor_green()
    fourier = from_stream_modes(taylor_green_modes())
    rng = np.random.default_rng(7)
    Z = rng.uniform(-20.0, 20.0, size=(1000, 2))
    diff = np.abs(eval_F_batch(tg, Z) - eval_F_batch(fourier, Z))
    assert diff.max() <= 1e-14


def test_amplitude_linearity_exact():
    rng = np.random.default_rng(3)
    Z = rng.uniform(0.0, TWO_PI, size=(200, 2))
    base = eval_F_batch(taylor_green(amplitude=1.0), Z)
    scaled = eval_F_batch(taylor_green(amplitude=2.5), Z)
    assert np.array_equal(scaled, 2.5 * base)


def test_periodicity_bit_identical_with_dyadic_period():
    # Dyadic period and coarse dyadic positions keep the shifted coordinates
    # exactly representable, so wrapping must reproduce identical bits.
    flow = from_coefficient_table(
        {(0, 0): [Mode((1, 0), 1.0, 0.3)], (1, 0): [Mode((0, 2), 0.7, 1.1)]},
        dim_d=2, dim_n=1, period=(2.0, 2.0))
    rng = np.random.default_rng(11)
    Z = rng.integers(0, 2**21, size=(100, 2)) * 2.0**-20
    for shift in ((2.0, 0.0), (-4.0, 2.0), (8.0, -6.0)):
        assert np.array_equal(eval_F_batch(flow, Z),
                              eval_F_batch(flow, Z + np.array(shift)))


def test_taylor_green_periodicity_close():
    flow = taylor_green()
    rng = np.random.default_rng(13)
    Z = rng.uniform(0.0, TWO_PI, size=(100, 2))
    diff = np.abs(eval_F_batch(flow, Z + TWO_PI * np.array([3.0, -2.0]))
                  - eval_F_batch(flow, Z))
    assert diff.max() < 1e-12


def test_parity_taylor_green():
    report = check_parity(taylor_green(), samples=256, tol=1e-12)
    assert report.passes
    assert report.max_violation <= 1e-12


def test_parity_odd_stream_function_fails():
    # psi = sin(x1) is odd, so F = (0, cos(x1)) is even and violates
    # F(-z) = -F(z) at generic points.  (An even psi, e.g. cos(x1) cos(x2),
    # yields an odd skew gradient and keeps parity.)
    broken = from_stream_modes([[Mode((1, 0), 1.0, 0.0)]])
    report = check_parity(broken, samples=128, tol=1e-12)
    assert not report.passes
    assert report.max_violation > 0.1


def test_parity_even_stream_function_keeps_parity():
    half_pi = 0.5 * math.pi
    even_psi = from_stream_modes([[Mode((1, -1), 0.5, half_pi),
                                   Mode((1, 1), 0.5, half_pi)]])
    assert check_parity(even_psi, samples=128, tol=1e-12).passes


def test_parity_zero_amplitude():
    report = check_parity(taylor_green(amplitude=0.0), samples=32, tol=1e-12)
    assert report.passes
    assert report.max_violation == 0.0


def test_divergence_free_taylor_green():
    assert check_divergence_free(taylor_green(), grid_per_axis=64, order=4) <= 1e-8


def test_divergence_zero_amplitude():
    assert check_divergence_free(taylor_green(amplitude=0.0), grid_per_axis=16) == 0.0


def test_divergence_compressible_table_field():
    # F = (sin(x1), 0) has div = cos(x1); the stencil must recover it.
    flow = from_coefficient_table({(0, 0): [Mode((1, 0), 1.0, 0.0)]},
                                  dim_d=2, dim_n=1, period=(TWO_PI, TWO_PI))
    grid = 64
    div = divergence_field(flow, grid_per_axis=grid, order=4)[:, 0]
    x1 = np.repeat(np.arange(grid) * TWO_PI / grid, grid)
    assert np.allclose(div, np.cos(x1), atol=1e-6)
    assert math.isclose(check_divergence_free(flow, grid), 1.0, rel_tol=1e-4)


def test_divergence_free_generic_stream_function():
    flow = from_stream_modes([[Mode((2, 1), 0.8, 0.4), Mode((1, 3), -0.3, 2.0)]])
    assert check_divergence_free(flow, grid_per_axis=128, order=4) < 5e-4


def test_gradient_matches_finite_differences():
    flows = [
        taylor_green(amplitude=1.7),
        from_stream_modes([[Mode((2, 1), 0.8, 0.4)], [Mode((1, -1), 0.5, 1.0)]]),
        from_coefficient_table({(0, 0): [Mode((1, 2), 0.6, 0.2)],
                                (1, 0): [Mode((3, 0), -0.4, 1.5)]},
                               dim_d=2, dim_n=1, period=(TWO_PI, TWO_PI)),
    ]
    rng = np.random.default_rng(5)
    h = 1e-6
    for flow in flows:
        for _ in range(5):
            z = rng.uniform(0.0, TWO_PI, size=2)
            grad = eval_F_gradient(flow, z)
            for axis in range(2):
                e = np.zeros(2)
                e[axis] = h
                fd = (eval_F(flow, z + e) - eval_F(flow, z - e)) / (2 * h)
                assert np.allclose(grad[:, :, axis], fd, atol=1e-6)


def test_invalid_constructions():
    with pytest.raises(ValueError):
        from_stream_modes([[Mode((1,), 1.0, 0.0)]])   # wavevector length
    with pytest.raises(ValueError):
        from_coefficient_table({}, dim_d=2, dim_n=1, period=(0.0, 1.0))
    with pytest.raises(ValueError):
        check_parity(taylor_green(), samples=0)
    with pytest.raises(ValueError):
        check_divergence_free(taylor_green(), grid_per_axis=2)
