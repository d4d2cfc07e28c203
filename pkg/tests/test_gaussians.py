"""Scalar Gaussian algebra and log-domain distribution kernels."""

import numpy as np
import pytest

from ldsrx.gaussians import (
    VARIANCE_CAP,
    VARIANCE_FLOOR,
    ClampCounter,
    DiscreteDist,
    GaussianMsg,
    cgauss_pdf,
    expit,
    gaussian_product,
    gaussian_quotient,
    log_cgauss_pdf,
    log_sum_exp,
    normalize_log,
    project_mixture,
)


def test_pdf_at_mean_is_inverse_pi_variance():
    assert cgauss_pdf(0.0 + 0.0j, 0.0 + 0.0j, 1.0) == pytest.approx(1.0 / np.pi, rel=1e-12)
    assert cgauss_pdf(2.0 - 1.0j, 2.0 - 1.0j, 0.37) == pytest.approx(1.0 / (np.pi * 0.37), rel=1e-12)


def test_pdf_one_sigma_point():
    assert cgauss_pdf(1.0 + 0.0j, 0.0 + 0.0j, 1.0) == pytest.approx(np.exp(-1.0) / np.pi, rel=1e-12)


def test_pdf_total_mass_is_one():
    # midpoint rule on a grid wide enough for the tails
    grid = np.linspace(-6, 6, 601)
    step = grid[1] - grid[0]
    re, im = np.meshgrid(grid, grid)
    dens = np.exp(log_cgauss_pdf(re + 1j * im, 0.3 - 0.4j, 0.8))
    assert dens.sum() * step * step == pytest.approx(1.0, abs=1e-6)


def test_pdf_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        cgauss_pdf(0.0 + 0.0j, 0.0 + 0.0j, 0.0)


def test_log_pdf_matches_pdf():
    rng = np.random.default_rng(7)
    for _ in range(200):
        x = complex(rng.normal(), rng.normal())
        m = complex(rng.normal(), rng.normal())
        v = float(rng.uniform(0.05, 4.0))
        assert log_cgauss_pdf(x, m, v) == pytest.approx(np.log(cgauss_pdf(x, m, v)), rel=1e-12)


def test_product_symmetric_halving():
    out = gaussian_product(GaussianMsg(0.0 + 0.0j, 1.0), GaussianMsg(0.0 + 0.0j, 1.0))
    assert out.mean == 0.0 + 0.0j
    assert out.variance == pytest.approx(0.5, rel=1e-12)


def test_product_precision_weighted_mean():
    out = gaussian_product(GaussianMsg(1.0 + 0.0j, 2.0), GaussianMsg(3.0 + 0.0j, 1.0))
    assert out.mean == pytest.approx(7.0 / 3.0, rel=1e-12)
    assert out.variance == pytest.approx(2.0 / 3.0, rel=1e-12)


def test_product_with_vacuous_is_identity():
    out = gaussian_product(GaussianMsg(1.5 - 0.5j, 0.3), GaussianMsg(0.0 + 0.0j, VARIANCE_CAP))
    assert abs(out.mean - (1.5 - 0.5j)) < 1e-7
    assert out.variance == pytest.approx(0.3, rel=1e-7)


def test_quotient_undoes_product():
    a = GaussianMsg(1.0 + 0.0j, 2.0)
    b = GaussianMsg(3.0 + 0.0j, 1.0)
    back = gaussian_quotient(gaussian_product(a, b), b)
    assert abs(back.mean - a.mean) < 1e-12
    assert back.variance == pytest.approx(a.variance, rel=1e-12)


def test_quotient_clamps_nonpositive_precision():
    counter = ClampCounter()
    out = gaussian_quotient(GaussianMsg(0.0 + 0.0j, 2.0), GaussianMsg(0.0 + 0.0j, 1.0), counter)
    assert out.variance == VARIANCE_CAP
    assert out.mean == 0.0 + 0.0j
    assert counter.count == 1


def test_quotient_plain_values():
    out = gaussian_quotient(GaussianMsg(2.0 + 0.0j, 1.0), GaussianMsg(0.0 + 0.0j, 4.0))
    assert out.variance == pytest.approx(4.0 / 3.0, rel=1e-12)
    assert out.mean == pytest.approx(8.0 / 3.0, rel=1e-12)


def test_mixture_of_symmetric_points():
    out = project_mixture([(0.5, 1.0 + 0.0j), (0.5, -1.0 + 0.0j)])
    assert out.mean == 0.0 + 0.0j
    assert out.variance == pytest.approx(1.0, rel=1e-12)


def test_mixture_single_component_identity():
    out = project_mixture([(1.0, GaussianMsg(1.0 + 0.0j, 0.1))])
    assert out.mean == 1.0 + 0.0j
    assert out.variance == pytest.approx(0.1, rel=1e-12)


def test_mixture_unit_energy_constellation():
    pts = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0)
    out = project_mixture([(0.25, p) for p in pts])
    assert abs(out.mean) < 1e-15
    assert out.variance == pytest.approx(1.0, rel=1e-12)


def test_mixture_rejects_degenerate_weights():
    with pytest.raises(ValueError):
        project_mixture([(0.0, 1.0 + 0.0j)])
    with pytest.raises(ValueError):
        project_mixture([(-0.1, 1.0 + 0.0j), (1.0, 0.0 + 0.0j)])


def test_normalize_log_uniform_pair():
    d = normalize_log(DiscreteDist(np.arange(2), np.zeros(2)))
    assert np.allclose(d.weights(), [0.5, 0.5])


def test_normalize_log_hard_zero():
    d = normalize_log(DiscreteDist(np.arange(2), np.array([0.0, -np.inf])))
    assert np.allclose(d.weights(), [1.0, 0.0])


def test_normalize_log_overflow_safe():
    d = normalize_log(DiscreteDist(np.arange(2), np.array([1000.0, 1001.0])))
    expect = np.array([1.0, np.e]) / (1.0 + np.e)
    assert np.allclose(d.weights(), expect, rtol=1e-12)


def test_normalize_log_rejects_all_minus_inf():
    with pytest.raises(ValueError):
        normalize_log(DiscreteDist(np.arange(2), np.array([-np.inf, -np.inf])))


def test_log_sum_exp_matches_direct_and_handles_axes():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(5, 7))
    assert log_sum_exp(a) == pytest.approx(np.log(np.exp(a).sum()), rel=1e-12)
    by_row = log_sum_exp(a, axis=1)
    assert np.allclose(by_row, np.log(np.exp(a).sum(axis=1)), rtol=1e-12)


def test_expit_saturates_without_warnings():
    x = np.array([-1000.0, -1.0, 0.0, 1.0, 1000.0])
    out = expit(x)
    assert out[0] == 0.0
    assert out[-1] == 1.0
    assert out[2] == 0.5
    assert np.all(np.isfinite(out))


def test_product_quotient_round_trip_randomized():
    """Quotient then product reproduces the joint when nothing clamps."""
    rng = np.random.default_rng(3)
    for _ in range(500):
        joint_v = float(rng.uniform(0.01, 2.0))
        den_v = joint_v + float(rng.uniform(0.05, 3.0))  # strictly wider: no clamp
        joint = GaussianMsg(complex(rng.normal(), rng.normal()), joint_v)
        den = GaussianMsg(complex(rng.normal(), rng.normal()), den_v)
        q = gaussian_quotient(joint, den)
        back = gaussian_product(q, den)
        assert abs(back.mean - joint.mean) < 1e-9
        assert abs(back.variance - joint.variance) < 1e-9


def test_projection_matches_direct_moments_randomized():
    rng = np.random.default_rng(4)
    for _ in range(300):
        n_comp = int(rng.integers(1, 6))
        comps = []
        w = rng.uniform(0.05, 1.0, size=n_comp)
        for i in range(n_comp):
            if rng.uniform() < 0.5:
                comps.append((w[i], complex(rng.normal(), rng.normal())))
            else:
                comps.append(
                    (w[i], GaussianMsg(complex(rng.normal(), rng.normal()), float(rng.uniform(0.01, 2.0))))
                )
        out = project_mixture(comps)
        wsum = w.sum()
        mean = sum(
            wi * (c.mean if isinstance(c, GaussianMsg) else c) for wi, c in comps
        ) / wsum
        second = sum(
            wi * ((abs(c.mean) ** 2 + c.variance) if isinstance(c, GaussianMsg) else abs(c) ** 2)
            for wi, c in comps
        ) / wsum
        var = second - abs(mean) ** 2
        assert abs(out.mean - mean) < 1e-10
        assert abs(out.variance - max(var, VARIANCE_FLOOR)) < 1e-10
