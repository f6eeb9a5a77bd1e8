import numpy as np
import pytest

from nearps.camera import CameraIntrinsics, backproject
from nearps.leds import (LedRig, LedSource, lighting_vector, mu_from_half_angle,
                         rig_t_derivatives, rig_t_fields, t_field, t_field_rgb)


def cam(f=350.0):
    return CameraIntrinsics(f=f, principal_point=(31.5, 31.5), width=64, height=64)


def test_mu_from_half_angle_lambertian():
    assert np.isclose(mu_from_half_angle(np.pi / 3), 1.0, atol=1e-12)


def test_mu_from_half_angle_quarter_pi():
    assert np.isclose(mu_from_half_angle(np.pi / 4), 2.0, atol=1e-12)


def test_mu_from_half_angle_bisection_oracle():
    # solve cos(theta_half)^mu = 1/2 for mu by bisection and compare
    theta = 0.2

    def half_intensity_gap(mu):
        return np.cos(theta) ** mu - 0.5

    lo, hi = 1.0, 100.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if half_intensity_gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    assert np.isclose(mu_from_half_angle(theta), 0.5 * (lo + hi), rtol=1e-10)


def test_mu_from_half_angle_domain():
    for bad in (0.0, np.pi / 2, -0.1, 2.0):
        with pytest.raises(ValueError):
            mu_from_half_angle(bad)


def test_lighting_vector_isotropic_unit_distance():
    src = LedSource((0, 0, 0), (0, 0, 1), mu=0.0, psi=1.0)
    s, behind = lighting_vector(src, (0.0, 0.0, 1.0))
    assert np.allclose(s, (0, 0, -1))
    assert not behind


def test_lighting_vector_on_axis_lambertian():
    src = LedSource((0, 0, 0), (0, 0, 1), mu=1.0, psi=1.0)
    s, _ = lighting_vector(src, (0.0, 0.0, 1.0))
    assert np.allclose(s, (0, 0, -1))


def test_lighting_vector_inverse_square():
    src = LedSource((0, 0, 0), (0, 0, 1), mu=1.0, psi=1.0)
    s, _ = lighting_vector(src, (0.0, 0.0, 2.0))
    assert np.allclose(s, (0, 0, -0.25))


def test_lighting_vector_falloff_law():
    # |s| * r^2 == psi * cos(theta)^mu for points in the emission half-space
    rng = np.random.default_rng(7)
    src = LedSource((5.0, -2.0, 1.0), tuple(np.array([1.0, 2.0, 2.0]) / 3.0),
                    mu=1.7, psi=4.2)
    for _ in range(50):
        x = np.asarray(src.position) + rng.standard_normal(3) * 10
        s, behind = lighting_vector(src, x)
        v = np.asarray(src.position) - x
        r = np.linalg.norm(v)
        cos = -v @ np.asarray(src.direction) / r
        if behind:
            assert np.allclose(s, 0.0)
        else:
            assert np.isclose(np.linalg.norm(s) * r ** 2,
                              src.psi * cos ** src.mu, atol=1e-12)


def test_lighting_vector_source_coincidence():
    src = LedSource((0, 0, 0), (0, 0, 1), mu=1.0, psi=1.0)
    with pytest.raises(ValueError):
        lighting_vector(src, (0.0, 0.0, 0.0))


def test_t_field_matches_lighting_at_backprojection():
    c = cam()
    rng = np.random.default_rng(8)
    src = LedSource((120.0, -40.0, 10.0), tuple(np.array([-0.2, 0.1, 0.9737]) /
                                                np.linalg.norm([-0.2, 0.1, 0.9737])),
                    mu=1.3, psi=2.5e5)
    for _ in range(25):
        p = rng.uniform(-30, 30, size=2)
        zt = np.log(rng.uniform(400, 900))
        t, _ = t_field(src, c, p, zt)
        s, _ = lighting_vector(src, backproject(c, p, np.exp(zt)))
        assert np.allclose(t, s, atol=1e-12 * np.linalg.norm(s))


def test_t_field_on_axis_source_at_camera():
    c = cam()
    src = LedSource((0, 0, 0), (0, 0, 1), mu=3.0, psi=1.0)
    t, _ = t_field(src, c, (0.0, 0.0), np.log(2.0))
    # v = (0,0,-2), cos=1: t = v / 8 = (0, 0, -0.25)
    assert np.allclose(t, (0, 0, -0.25), atol=1e-14)


def test_t_field_magnitude_decreases_with_depth():
    c = cam()
    src = LedSource((0, 0, 0), (0, 0, 1), mu=1.0, psi=1.0)
    depths = np.log(np.linspace(300, 1200, 12))
    mags = [np.linalg.norm(t_field(src, c, (0.0, 0.0), zt)[0]) for zt in depths]
    assert np.all(np.diff(mags) < 0)


def test_t_field_homogeneous_in_psi():
    c = cam()
    base = LedSource((10, 20, 0), (0, 0, 1), mu=1.0, psi=1.0)
    scaled = LedSource((10, 20, 0), (0, 0, 1), mu=1.0, psi=7.5)
    t1, _ = t_field(base, c, (3.0, -4.0), np.log(600.0))
    t2, _ = t_field(scaled, c, (3.0, -4.0), np.log(600.0))
    assert np.allclose(t2, 7.5 * t1, atol=1e-12)


def test_t_field_isotropic_ignores_direction():
    c = cam()
    rng = np.random.default_rng(9)
    p, zt = (5.0, 5.0), np.log(500.0)
    results = []
    for _ in range(2):
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        src = LedSource((50, 60, 0), tuple(d), mu=0.0, psi=3.0)
        results.append(t_field(src, c, p, zt)[0])
    assert np.allclose(results[0], results[1], atol=1e-14)


def test_t_field_behind_source_zero_for_positive_mu():
    c = cam()
    # principal direction pointing away from the scene
    src = LedSource((0, 0, 0), (0, 0, -1), mu=2.0, psi=1.0)
    t, behind = t_field(src, c, (0.0, 0.0), np.log(100.0))
    assert behind
    assert np.allclose(t, 0.0)


def test_t_field_rgb_gray_channels_match_scalar():
    c = cam()
    src_rgb = LedSource((30, 0, 0), (0, 0, 1), mu=1.0, psi_rgb=(2.0, 2.0, 2.0))
    src_gray = LedSource((30, 0, 0), (0, 0, 1), mu=1.0, psi=2.0)
    t3, _ = t_field_rgb(src_rgb, c, (1.0, 2.0), np.log(400.0))
    t1, _ = t_field(src_gray, c, (1.0, 2.0), np.log(400.0))
    for channel in range(3):
        assert np.allclose(t3[channel], t1, atol=1e-14)


def test_t_field_rgb_linear_in_psi():
    c = cam()
    src = LedSource((30, 0, 0), (0, 0, 1), mu=1.0, psi_rgb=(1.0, 2.0, 3.0))
    t3, _ = t_field_rgb(src, c, (1.0, 2.0), np.log(400.0))
    assert np.allclose(t3[1], 2.0 * t3[0], atol=1e-14)
    assert np.allclose(t3[2], 3.0 * t3[0], atol=1e-14)


def test_rig_t_derivatives_match_finite_differences():
    c = cam()
    rng = np.random.default_rng(10)
    d = np.array([0.3, -0.2, 0.9327])
    rig = LedRig((
        LedSource((200.0, 0.0, 0.0), tuple(d / np.linalg.norm(d)), mu=1.0, psi=1e5),
        LedSource((0.0, -150.0, 30.0), (0, 0, 1), mu=2.3, psi=3e5),
        LedSource((-100.0, 50.0, 0.0), (0, 0, 1), mu=0.0, psi=2e4),
    ))
    pixels = rng.uniform(-25, 25, size=(40, 2))
    zt = np.log(rng.uniform(500, 800, size=40))
    eps = 1e-6
    analytic = rig_t_derivatives(rig, c, pixels, zt)
    numeric = (rig_t_fields(rig, c, pixels, zt + eps)
               - rig_t_fields(rig, c, pixels, zt - eps)) / (2 * eps)
    assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_source_validation():
    with pytest.raises(ValueError):
        LedSource((0, 0, 0), (0, 0, 2.0), mu=1.0, psi=1.0)
    with pytest.raises(ValueError):
        LedSource((0, 0, 0), (0, 0, 1), mu=-0.5, psi=1.0)
    with pytest.raises(ValueError):
        LedSource((0, 0, 0), (0, 0, 1), mu=1.0)
    with pytest.raises(ValueError):
        LedSource((0, 0, 0), (0, 0, 1), mu=1.0, psi=1.0, psi_rgb=(1, 1, 1))
    with pytest.raises(ValueError):
        LedRig((LedSource((0, 0, 0), (0, 0, 1), mu=1.0, psi=1.0),
                LedSource((1, 0, 0), (0, 0, 1), mu=1.0, psi_rgb=(1, 1, 1))))
