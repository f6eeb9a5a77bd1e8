import numpy as np
import pytest

from nearps.calibrate import (PlanePoseObservation, ReflectedRayBundle,
                              calibrate_anisotropic, calibrate_isotropic,
                              calibrate_rgb, triangulate_source)
from nearps.errors import CalibrationError


def model_intensity(x, n, x_s, n_s, mu, psi):
    """Scalar evaluation of the plane-calibration image model (the oracle)."""
    v = np.asarray(x_s) - np.asarray(x)
    r = np.linalg.norm(v)
    cos = np.asarray(n_s) @ (-v) / r
    return psi * cos ** mu * max(v @ np.asarray(n), 0.0) / r ** 3


def make_observations(x_s, n_s, mu, psi, q=10, seed=0, samples=30):
    """Synthetic plane poses lit by one LED; psi may be a scalar or 3 values."""
    rng = np.random.default_rng(seed)
    psis = np.atleast_1d(np.asarray(psi, dtype=np.float64))
    observations = []
    for _ in range(q):
        center = np.array([0.0, 0.0, 700.0]) + rng.uniform(-80, 80, 3) * [1, 1, 0.5]
        normal = np.asarray(x_s) - center
        normal = normal / np.linalg.norm(normal)
        tilt = rng.uniform(-0.3, 0.3, 3)
        normal = normal + tilt
        normal /= np.linalg.norm(normal)
        e1 = np.cross(normal, [1.0, 0.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(normal, e1)
        ab = rng.uniform(-60, 60, size=(samples, 2))
        points = center + ab[:, :1] * e1 + ab[:, 1:] * e2
        inten = np.array([[model_intensity(x, normal, x_s, n_s, mu, p)
                           for p in psis] for x in points])
        observations.append(PlanePoseObservation(normal, points,
                                                 inten if psis.size > 1 else inten[:, 0]))
    return observations


LED_POS = np.array([250.0, -180.0, 40.0])
LED_DIR = np.array([0.0, 0.0, 700.0]) - LED_POS
LED_DIR /= np.linalg.norm(LED_DIR)


def test_triangulate_exact_intersection():
    point = np.array([1.0, 2.0, 3.0])
    dirs = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
    dirs[1] /= np.linalg.norm(dirs[1])
    bundle = ReflectedRayBundle(origins=np.array([point - 5 * dirs[0],
                                                  point - 2 * dirs[1]]),
                                directions=dirs)
    x, resid = triangulate_source(bundle)
    assert np.allclose(x, point, atol=1e-12)
    assert resid < 1e-12


def test_triangulate_skew_lines_yield_midpoint():
    bundle = ReflectedRayBundle(
        origins=np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]]),
        directions=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    x, resid = triangulate_source(bundle)
    assert np.allclose(x, [0.0, 0.0, 0.0], atol=1e-12)
    assert np.isclose(resid, 1.0, atol=1e-12)  # each line is at distance 1


def test_triangulate_monte_carlo_perturbed_rays():
    # rays from a few units away with 1e-3 rad direction noise; averaging
    # over ten of them keeps the least-squares point within 5e-3 units
    rng = np.random.default_rng(14)
    point = np.array([1.2, -0.3, 5.5])
    origins = point + rng.uniform(-5, 5, size=(10, 3))
    dirs = point - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs += rng.normal(0.0, 1e-3, size=dirs.shape)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    x, _ = triangulate_source(ReflectedRayBundle(origins, dirs))
    assert np.linalg.norm(x - point) < 5e-3


def test_triangulate_rigid_equivariance():
    rng = np.random.default_rng(5)
    point = np.array([10.0, 20.0, 30.0])
    origins = point + rng.uniform(-50, 50, size=(6, 3))
    dirs = point - origins + rng.normal(0, 0.01, size=(6, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    x, _ = triangulate_source(ReflectedRayBundle(origins, dirs))
    # random rotation + translation
    angle = 0.7
    R = np.array([[np.cos(angle), -np.sin(angle), 0],
                  [np.sin(angle), np.cos(angle), 0],
                  [0, 0, 1.0]])
    t = np.array([3.0, -8.0, 12.0])
    x2, _ = triangulate_source(ReflectedRayBundle(origins @ R.T + t, dirs @ R.T))
    assert np.allclose(x2, R @ x + t, atol=1e-10)


def test_triangulate_parallel_rays_rejected():
    bundle = ReflectedRayBundle(
        origins=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
        directions=np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(CalibrationError, match="parallel"):
        triangulate_source(bundle)


def test_calibrate_isotropic_recovers_psi():
    obs = make_observations(LED_POS, LED_DIR, mu=0.0, psi=7.0, seed=1)
    psi = calibrate_isotropic(obs, LED_POS)
    assert np.isclose(psi, 7.0, atol=1e-10)


def test_calibrate_isotropic_linear_in_intensity():
    obs = make_observations(LED_POS, LED_DIR, mu=0.0, psi=3.0, seed=2)
    doubled = [PlanePoseObservation(o.normal, o.points, 2.0 * o.intensities)
               for o in obs]
    assert np.isclose(calibrate_isotropic(doubled, LED_POS),
                      2.0 * calibrate_isotropic(obs, LED_POS), rtol=1e-12)


def test_calibrate_isotropic_single_sample():
    x = np.array([0.0, 0.0, 700.0])
    n = LED_POS - x
    n /= np.linalg.norm(n)
    I = model_intensity(x, n, LED_POS, LED_DIR, 0.0, 5.5)
    v = LED_POS - x
    s = max(v @ n, 0.0) / np.linalg.norm(v) ** 3
    obs = PlanePoseObservation(n, x[None], np.array([I]))
    assert np.isclose(calibrate_isotropic([obs], LED_POS), I / s, rtol=1e-12)


def test_calibrate_isotropic_all_shadowed_rejected():
    x = np.array([[0.0, 0.0, 700.0]])
    n = np.array([0.0, 0.0, 1.0])  # faces away from the LED above it
    obs = PlanePoseObservation(n, x, np.array([0.0]))
    with pytest.raises(CalibrationError, match="shadow"):
        calibrate_isotropic([obs], np.array([0.0, 0.0, 0.0]))


def test_calibrate_anisotropic_recovers_direction_and_psi():
    psi_true = 2.4e6
    obs = make_observations(LED_POS, LED_DIR, mu=1.0, psi=psi_true, seed=3)
    n_s, psi = calibrate_anisotropic(obs, LED_POS, mu=1.0)
    assert np.linalg.norm(n_s - LED_DIR) < 1e-8
    assert abs(psi - psi_true) / psi_true < 1e-8


def test_calibrate_anisotropic_general_mu():
    psi_true = 8.0e5
    obs = make_observations(LED_POS, LED_DIR, mu=2.5, psi=psi_true, seed=4)
    n_s, psi = calibrate_anisotropic(obs, LED_POS, mu=2.5)
    assert np.linalg.norm(n_s - LED_DIR) < 1e-7
    assert abs(psi - psi_true) / psi_true < 1e-7


def test_calibrate_anisotropic_axis_symmetry():
    x_s = np.array([0.0, 0.0, 10.0])
    axis = np.array([0.0, 0.0, 1.0])
    obs = make_observations(x_s, axis, mu=1.0, psi=100.0, seed=5)
    n_s, _ = calibrate_anisotropic(obs, x_s, mu=1.0)
    assert np.allclose(np.cross(n_s, axis), 0.0, atol=1e-8)


def test_calibrate_anisotropic_intensity_scaling():
    obs = make_observations(LED_POS, LED_DIR, mu=1.0, psi=1e5, seed=6)
    scaled = [PlanePoseObservation(o.normal, o.points, 3.0 * o.intensities)
              for o in obs]
    n1, p1 = calibrate_anisotropic(obs, LED_POS, mu=1.0)
    n2, p2 = calibrate_anisotropic(scaled, LED_POS, mu=1.0)
    assert np.allclose(n1, n2, atol=1e-9)
    assert np.isclose(p2, 3.0 * p1, rtol=1e-9)


def test_calibrate_anisotropic_optimality_on_noisy_data():
    rng = np.random.default_rng(7)
    psi_true = 1e5
    obs = make_observations(LED_POS, LED_DIR, mu=1.0, psi=psi_true, seed=8)
    noisy = [PlanePoseObservation(
        o.normal, o.points,
        np.maximum(o.intensities * (1.0 + 0.02 * rng.standard_normal(o.intensities.shape)), 0.0))
        for o in obs]
    n_hat, psi_hat = calibrate_anisotropic(noisy, LED_POS, mu=1.0)

    def residual(n_s, psi):
        total = 0.0
        m_s = psi ** 1.0 * np.asarray(n_s)  # mu = 1
        for o in noisy:
            dot = (LED_POS[None] - o.points) @ o.normal
            keep = (dot > 0) & (o.intensities[:, 0] > 0)
            r = np.linalg.norm(LED_POS[None] - o.points[keep], axis=1)
            rhs = o.intensities[keep, 0] * r ** 4 / dot[keep]
            lhs = (o.points[keep] - LED_POS[None]) @ m_s
            total += np.sum((lhs - rhs) ** 2)
        return total

    assert residual(n_hat, psi_hat) <= residual(LED_DIR, psi_true) + 1e-9


def test_calibrate_handles_shadowed_samples():
    obs = make_observations(LED_POS, LED_DIR, mu=1.0, psi=1e5, seed=9)
    flipped = PlanePoseObservation(-obs[0].normal, obs[0].points,
                                   np.zeros_like(obs[0].intensities))
    n_s, psi = calibrate_anisotropic(list(obs) + [flipped], LED_POS, mu=1.0)
    assert np.linalg.norm(n_s - LED_DIR) < 1e-8


def test_calibrate_rgb_identical_channels_match_gray():
    psi = 5e4
    obs = make_observations(LED_POS, LED_DIR, mu=1.0, psi=(psi, psi, psi), seed=10)
    result = calibrate_rgb(obs, LED_POS, mu=1.0)
    gray_obs = make_observations(LED_POS, LED_DIR, mu=1.0, psi=psi, seed=10)
    n_gray, _ = calibrate_anisotropic(gray_obs, LED_POS, mu=1.0)
    assert np.allclose(result.fused_direction, n_gray, atol=1e-9)
    assert np.allclose(result.psis, psi, rtol=1e-8)


def test_calibrate_rgb_recovers_channel_intensities():
    psi_rgb = (3.10e7, 5.49e7, 3.37e7)
    obs = make_observations(LED_POS, LED_DIR, mu=1.0, psi=psi_rgb, seed=11)
    result = calibrate_rgb(obs, LED_POS, mu=1.0)
    assert np.allclose(result.psis, psi_rgb, rtol=1e-8)
    for c in range(3):
        assert np.linalg.norm(result.directions[c] - LED_DIR) < 1e-8


def test_calibrate_rgb_fused_direction_in_channel_cone():
    # perturb each channel's data slightly so the three estimates differ
    rng = np.random.default_rng(12)
    obs = make_observations(LED_POS, LED_DIR, mu=1.0,
                            psi=(3.1e7, 5.5e7, 3.4e7), seed=13)
    noisy = [PlanePoseObservation(
        o.normal, o.points,
        np.maximum(o.intensities * (1.0 + 0.01 * rng.standard_normal(o.intensities.shape)), 0.0))
        for o in obs]
    result = calibrate_rgb(noisy, LED_POS, mu=1.0)
    pairwise = min(result.directions[i] @ result.directions[j]
                   for i in range(3) for j in range(i + 1, 3))
    for c in range(3):
        assert result.fused_direction @ result.directions[c] >= pairwise - 1e-12


def test_calibrate_rgb_failure_names_channel():
    obs = make_observations(LED_POS, LED_DIR, mu=1.0, psi=(1e5, 1e5, 1e5), seed=14)
    dark_blue = [PlanePoseObservation(o.normal, o.points,
                                      o.intensities * [1.0, 1.0, 0.0])
                 for o in obs]
    with pytest.raises(CalibrationError, match="channel B"):
        calibrate_rgb(dark_blue, LED_POS, mu=1.0)
