import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ambibin.ambisonics import (
    AmbisonicClip,
    Direction,
    Normalization,
    PlaneWaveField,
    acn_to_nm,
    convert_normalization,
    encode_plane_wave,
    normalization_factors,
    omni_channel,
    sh_matrix,
    sh_real,
)
from ambibin.dsp import TimeSignal
from ambibin.grids import gauss_legendre_grid, lebedev_26, octahedral_rotations, t_design

SN3D, N3D = Normalization.SN3D, Normalization.N3D


def gram(grid, order, norm=N3D):
    y = sh_matrix(order, grid.elevation, grid.azimuth, norm)
    return (y * grid.weights[:, None]).T @ y


def test_acn_mapping():
    assert [acn_to_nm(i) for i in range(9)] == [
        (0, 0), (1, -1), (1, 0), (1, 1), (2, -2), (2, -1), (2, 0), (2, 1), (2, 2)
    ]


@pytest.mark.parametrize("direction", [Direction(0.3, 1.0), Direction(-1.2, 4.0), Direction(0, 0)])
def test_omni_is_one_in_sn3d(direction):
    assert sh_real(0, direction, SN3D) == 1.0


def test_first_order_closed_forms():
    assert sh_real(2, Direction(math.pi / 2, 0.7)) == pytest.approx(1.0)
    assert sh_real(2, Direction(0.0, 0.7)) == pytest.approx(0.0, abs=1e-15)
    d = Direction(0.4, 2.1)
    c = math.cos(d.elevation)
    assert sh_real(1, d) == pytest.approx(c * math.sin(d.azimuth))
    assert sh_real(3, d) == pytest.approx(c * math.cos(d.azimuth))


def test_second_order_sn3d_matches_ambix_table():
    d = Direction(0.35, 1.3)
    x, y, z = d.cartesian()
    s3 = math.sqrt(3)
    expected = [s3 * x * y, s3 * y * z, 0.5 * (3 * z * z - 1), s3 * x * z, s3 / 2 * (x * x - y * y)]
    got = [sh_real(i, d) for i in range(4, 9)]
    np.testing.assert_allclose(got, expected, atol=1e-14)


def test_n3d_orthonormal_on_lebedev_and_gauss_grids():
    for grid in (lebedev_26(), gauss_legendre_grid(3)):
        assert np.abs(gram(grid, 3) - np.eye(16)).max() <= 1e-6


def test_builtin_t_designs_integrate_to_their_degree():
    for n_points, order in ((6, 1), (12, 2), (24, 3)):
        grid = t_design(n_points)
        k = (order + 1) ** 2
        np.testing.assert_allclose(gram(grid, order), np.eye(k), atol=1e-12)
        assert grid.weights.sum() == pytest.approx(4 * np.pi)


def test_24_point_design_is_an_orbit_of_the_cube_group():
    rots = octahedral_rotations()
    assert len(rots) == 24
    pts = t_design(24).xyz
    for r in rots:
        moved = pts @ r.T
        d = np.linalg.norm(moved[:, None] - pts[None], axis=-1)
        assert np.allclose(d.min(axis=1), 0, atol=1e-12)


def test_encode_front_plane_wave():
    s = np.random.default_rng(0).standard_normal(100)
    clip = encode_plane_wave(PlaneWaveField(Direction(0, 0), TimeSignal(s, 48000)), 1, SN3D)
    np.testing.assert_allclose(clip.samples, np.stack([s, 0 * s, 0 * s, s]), atol=1e-15)


def test_encode_pole_and_zero_source():
    s = np.linspace(-1, 1, 50)
    clip = encode_plane_wave(PlaneWaveField(Direction(math.pi / 2, 2.0), TimeSignal(s, 8000)))
    np.testing.assert_allclose(clip.samples[2], s)
    np.testing.assert_allclose(clip.samples[[1, 3]], 0, atol=1e-15)
    zero = encode_plane_wave(PlaneWaveField(Direction(0.1, 0.2), TimeSignal(np.zeros(20), 8000)))
    assert not np.any(zero.samples)


@settings(max_examples=25, deadline=None)
@given(el=st.floats(-1.5, 1.5), az=st.floats(0, 6.28), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_encode_is_linear(el, az, a, b):
    rng = np.random.default_rng(1)
    s1, s2 = rng.standard_normal((2, 30))
    d = Direction(el, az)
    enc = lambda s: encode_plane_wave(PlaneWaveField(d, TimeSignal(s, 8000)), 2).samples
    np.testing.assert_allclose(enc(a * s1 + b * s2), a * enc(s1) + b * enc(s2), atol=1e-12)


def test_omni_channel():
    s = np.random.default_rng(2).standard_normal(64)
    clip = encode_plane_wave(PlaneWaveField(Direction(0.5, 3.0), TimeSignal(s, 8000)))
    np.testing.assert_allclose(omni_channel(clip).samples[0], s)
    ramp = np.tile(np.arange(10.0), (4, 1))
    ramp[1:] = 7.0
    assert np.array_equal(omni_channel(AmbisonicClip(TimeSignal(ramp, 8000), 1)).samples[0], np.arange(10.0))


def test_n3d_omni_scaled_by_inverse_sqrt_4pi():
    s = np.random.default_rng(3).standard_normal(64)
    clip = encode_plane_wave(PlaneWaveField(Direction(0.5, 3.0), TimeSignal(s, 8000)), 1, SN3D)
    n3d = convert_normalization(clip, N3D)
    np.testing.assert_allclose(omni_channel(n3d).samples[0], s / math.sqrt(4 * math.pi))


def test_normalization_factor_table_against_quadrature_norms():
    # oracle: ratio of N3D to SN3D basis functions measured through their quadrature norms
    grid = lebedev_26()
    sn3d_norms = np.sqrt(np.diag(gram(grid, 3, SN3D)))
    factors = normalization_factors(3, SN3D, N3D)
    np.testing.assert_allclose(factors * sn3d_norms, 1.0, atol=1e-12)
    # degree-1 channels scale by sqrt(3) relative to the omni channel
    np.testing.assert_allclose(factors[1:4] / factors[0], math.sqrt(3))


@settings(max_examples=20, deadline=None)
@given(order=st.integers(0, 3), seed=st.integers(0, 1000))
def test_normalization_round_trip(order, seed):
    x = np.random.default_rng(seed).standard_normal(((order + 1) ** 2, 40))
    clip = AmbisonicClip(TimeSignal(x, 8000), order, SN3D)
    back = convert_normalization(convert_normalization(clip, N3D), SN3D)
    assert np.linalg.norm(back.samples - x) <= 1e-12 * np.linalg.norm(x)
    assert convert_normalization(clip, SN3D).samples is not x


def test_clip_channel_count_enforced():
    with pytest.raises(ValueError):
        AmbisonicClip(TimeSignal(np.zeros((3, 10)), 8000), 1)
    with pytest.raises(ValueError):
        AmbisonicClip.from_signal(TimeSignal(np.zeros((5, 10)), 8000))


def test_direction_from_cartesian_round_trip():
    d = Direction(-0.3, 5.0)
    e = Direction.from_cartesian(d.cartesian())
    assert e.elevation == pytest.approx(d.elevation) and e.azimuth == pytest.approx(d.azimuth)
