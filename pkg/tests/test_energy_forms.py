"""Operator calculus: theta, covariant derivatives, energies, variations."""
import numpy as np
import pytest

from twistdiff import kernels
from twistdiff.energy_forms import (MetricField, PeriodicGrid,
                                    admissibility_check, cov_deriv, energy,
                                    first_variation, full_stencil_mask,
                                    harmonic_residual, modified_energy,
                                    scale_field, tail_integral, theta, _ct)
from twistdiff.errors import AdmissibilityError
from twistdiff.flat_bundle import (SecondKindData, SingularData, SurfaceSpec)
from twistdiff.grid import CompositeGrid
from twistdiff.model_metric import ModelMetric

rng = np.random.default_rng(7)

SPHERE = SurfaceSpec(mode="sphere_chart", punctures=(0j,), disk_radius=0.5,
                     box=(-2.0, 2.0, -2.0, 2.0))


@pytest.fixture(scope="module")
def grid():
    return CompositeGrid(SPHERE, bg_res=96, n_theta=256, radial_ratio=1.03,
                         r_min=0.05)


@pytest.fixture(scope="module")
def model_field(grid):
    sd = SingularData(per_puncture=(SecondKindData(slots=(((1, 1.0),),)),))
    return MetricField.from_model(grid, ModelMetric(SPHERE, sd))


def smooth_field(g, n, scale=0.2, modes=2):
    res = g.res
    f = np.zeros((res, res, n, n), complex)
    for kx in range(-modes, modes + 1):
        for ky in range(-modes, modes + 1):
            amp = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) \
                * scale / (1 + kx * kx + ky * ky) ** 2
            ph = np.exp(2j * np.pi * (kx * np.real(g.pos)
                                      + ky * np.imag(g.pos))
                        / g.length).reshape(res, res)
            f += ph[:, :, None, None] * amp
    f = f + _ct(f)
    return f.reshape(res * res, n, n)


def test_theta_constant_field(grid):
    K = MetricField.constant(grid, 2)
    th = theta(K)
    assert np.max(np.abs(th.dz)) == 0.0
    assert np.max(np.abs(th.dzbar)) == 0.0


def test_theta_scalar_closed_form(grid):
    # H = e^u with u = 2 Re(1/z): theta_dz = -(1/2) du/dz = (1/2) z^-2
    u = 2.0 * np.real(1.0 / grid.pos)
    K = MetricField(grid, logdiag=u[:, None])
    th = theta(K).dz[:, 0, 0]
    sel = full_stencil_mask(grid) & (grid.patch_id == -1) \
        & (np.abs(grid.pos) > 1.2)
    want = 0.5 / grid.pos[sel] ** 2
    assert np.max(np.abs(th[sel] - want) / np.abs(want)) < 5e-3


def test_theta_block_diagonal():
    g = PeriodicGrid(16)
    d = smooth_field(g, 1)[:, 0, 0].real
    L = np.zeros((g.num_nodes, 2))
    L[:, 0] = d
    L[:, 1] = -d
    th = theta(MetricField(g, logdiag=L)).dz
    assert np.max(np.abs(th[:, 0, 1])) == 0.0
    assert np.allclose(th[:, 0, 0], -th[:, 1, 1])


def test_adjoint_transport():
    g = PeriodicGrid(32)
    K = MetricField(g, logmat=smooth_field(g, 3))
    th = theta(K)
    H = K.H()
    ref = np.max(np.abs(th.dz))
    err = np.max(np.abs(th.dzbar - H @ _ct(th.dz) @ np.linalg.inv(H)))
    assert err / ref < 1e-10


def test_cov_deriv_scalar_and_identity():
    g = PeriodicGrid(16)
    K = MetricField(g, logmat=smooth_field(g, 1))
    h = smooth_field(g, 1)
    cd = cov_deriv(h, K)
    dh = K.deriv().d_dz(h)
    assert np.max(np.abs(cd.dz - dh)) < 1e-12     # scalar commutator vanishes
    K2 = MetricField(g, logmat=smooth_field(g, 2))
    eye = np.broadcast_to(np.eye(2), (g.num_nodes, 2, 2))
    cd2 = cov_deriv(eye, K2)
    assert np.max(np.abs(cd2.dz)) < 1e-12


def test_two_route_adjoint_identity():
    g = PeriodicGrid(32)
    worst = 0.0
    for _ in range(5):
        n = int(rng.integers(1, 4))
        K = MetricField(g, logmat=smooth_field(g, n))
        K0 = MetricField(g, logmat=smooth_field(g, n))
        th, th0 = theta(K), theta(K0)
        h = K.H() @ np.linalg.inv(K0.H())
        route2 = -0.5 * cov_deriv(h, K0).dzbar @ np.linalg.inv(h) + th0.dzbar
        ref = np.max(np.abs(th.dz)) + 1e-30
        worst = max(worst, np.max(np.abs(th.dzbar - route2)) / ref)
    assert worst < 1e-8


def test_energy_constant_zero(grid):
    assert energy(MetricField.constant(grid, 2)) == 0.0


def test_energy_annulus_closed_form(grid):
    # u = 2 Re(1/z) over 1/4 <= |z| <= 1/2 (local radii (1/2, 1)):
    # (1/8) int |grad u|^2 = (pi/2)(16 - 4) = 6 pi
    u = 2.0 * np.real(1.0 / np.where(np.abs(grid.pos) > 0, grid.pos, 1.0))
    K = MetricField(grid, logdiag=u[:, None])
    val = energy(K, ("annulus", 0, 0.5, 1.0))
    assert val == pytest.approx(6.0 * np.pi, rel=2e-2)


def test_energy_diag_additivity(grid):
    d1 = np.real(grid.pos) * 0.3
    d2 = np.imag(grid.pos) * 0.2
    K12 = MetricField(grid, logdiag=np.stack([d1, d2], axis=1))
    e1 = energy(MetricField(grid, logdiag=d1[:, None]))
    e2 = energy(MetricField(grid, logdiag=d2[:, None]))
    assert energy(K12) == pytest.approx(e1 + e2, rel=1e-12)


def test_modified_energy_at_model(model_field):
    K0 = model_field
    assert modified_energy(K0, K0) == pytest.approx(
        energy(K0, "compact"), abs=1e-12)
    assert modified_energy(K0, K0) >= 0.0


def test_modified_energy_rejects_inadmissible(grid, model_field):
    K = model_field.copy()
    bad = np.where(grid.local_r <= 1.0,
                   2.0 * np.real(1.0 / np.where(grid.local_r <= 1.0,
                                                grid.pos / 0.5, 1.0)), 0.0)
    K.logdiag[:, 0] += np.where(np.isfinite(bad), bad, 0.0)
    with pytest.raises(AdmissibilityError):
        modified_energy(K, model_field, bounds={"tail_bound": 10.0})


def test_admissibility_scalar_scaling(grid, model_field):
    out = admissibility_check(model_field, model_field)
    assert out["admissible"] and out["max_distance"] == 0.0 \
        and out["tail_integral"] == 0.0
    K = model_field.copy()
    K.logdiag += 0.7
    out = admissibility_check(K, model_field)
    assert out["max_distance"] == pytest.approx(0.7)
    assert out["tail_integral"] == pytest.approx(0.0, abs=1e-14)


def test_tail_locality(grid, model_field):
    # changing K only deep inside the half-disk changes only the tail term
    K = model_field.copy()
    deep = grid.local_r < 0.25
    K.logdiag[deep] += 0.1 * np.cos(
        4.0 * np.angle(grid.pos[deep]))[:, None]
    assert energy(K, "compact") == pytest.approx(
        energy(model_field, "compact"), abs=1e-12)
    assert tail_integral(K, model_field) > 1e-6


def test_harmonic_residual_constant(grid):
    assert harmonic_residual(MetricField.constant(grid, 1)) == 0.0


def test_harmonic_residual_discrete_harmonic(grid):
    # relax a scalar field to discrete harmonicity; residual ~ solver tol
    vals = np.real(grid.pos)[:, None].copy()
    free = grid.free_mask("all")
    vals[free] = 0.0
    plan = grid.sweep_plan(free)
    sigma = np.zeros((grid.num_sigma, 1))
    for _ in range(40000):
        if kernels.sweep_scalar(vals, sigma, 1.92, plan) < 1e-13:
            break
    K = MetricField(grid, logdiag=vals)
    bg_only = grid.patch_id == -1
    assert harmonic_residual(K, bg_only) < 1e-8


def test_harmonic_residual_model_refinement():
    sd = SingularData(per_puncture=(SecondKindData(slots=(((1, 1.0),),)),))
    vals = []
    for nt in (128, 256):
        g = CompositeGrid(SPHERE, bg_res=96, n_theta=nt,
                          radial_ratio=1.0 + 128.0 / (32 * nt), r_min=0.05)
        K0 = MetricField.from_model(g, ModelMetric(SPHERE, sd))
        vals.append(harmonic_residual(K0, ("annulus", 0, 0.1, 1.0)))
    assert vals[1] < vals[0] / 2.0


def test_first_variation_fd():
    g = PeriodicGrid(32)
    worst = 0.0
    for _ in range(5):
        n = int(rng.integers(1, 4))
        K = MetricField(g, logmat=smooth_field(g, n))
        h = smooth_field(g, n, scale=0.1) @ np.linalg.inv(K.H())
        fv = first_variation(K, h)
        eps = 1e-4
        fd = (energy(scale_field(K, h, eps))
              - energy(scale_field(K, h, -eps))) / (2 * eps)
        worst = max(worst, abs(fv - fd) / max(abs(fd), 1e-30))
    assert worst < 1e-6


def test_first_variation_zero_direction(grid, model_field):
    z = np.zeros((grid.num_nodes, 1))
    assert first_variation(model_field, z) == 0.0


def test_first_variation_criticality(grid):
    # at a discretely harmonic scalar field the variation vanishes for
    # interior-supported directions
    vals = np.real(grid.pos)[:, None].copy()
    free = grid.free_mask("all")
    vals[free] = 0.0
    plan = grid.sweep_plan(free)
    sigma = np.zeros((grid.num_sigma, 1))
    for _ in range(40000):
        if kernels.sweep_scalar(vals, sigma, 1.92, plan) < 1e-13:
            break
    K = MetricField(grid, logdiag=vals)
    interior = free & (grid.patch_id == -1) & full_stencil_mask(grid)
    h = np.zeros((grid.num_nodes, 1))
    h[interior, 0] = np.cos(np.real(grid.pos[interior]))
    hollow = interior.copy()
    fv = first_variation(K, h, region=hollow)
    # include all edges touching the support
    fv_all = first_variation(K, h, region="all")
    assert abs(fv_all) < 1e-8 * max(np.max(np.abs(h)), 1.0)
    assert abs(fv) <= abs(fv_all) + 1e-8


def test_gauge_covariance_energy():
    g = PeriodicGrid(24)
    K = MetricField(g, logmat=smooth_field(g, 2))
    e0 = energy(K)
    # constant unitary congruence leaves the energy invariant
    q, _ = np.linalg.qr(rng.normal(size=(2, 2))
                        + 1j * rng.normal(size=(2, 2)))
    H2 = q @ K.H() @ _ct(np.broadcast_to(q, K.H().shape))
    from twistdiff.energy_forms import _logm_batch
    K2 = MetricField(g, logmat=_logm_batch(
        0.5 * (H2 + _ct(H2))))
    assert energy(K2) == pytest.approx(e0, rel=1e-10)
