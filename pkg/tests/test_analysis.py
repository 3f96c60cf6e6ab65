"""One-form extraction, asymptotics checks, maximum-principle monitors."""
import numpy as np
import pytest

from twistdiff.analysis import (LaurentTable, differential,
                                distance_squared_laplacian,
                                holomorphy_residual, laurent_extract,
                                max_principle_check, oracle_scalar, require,
                                subharmonicity_check, verify_asymptotics)
from twistdiff.energy_forms import MetricField, OneFormField
from twistdiff.errors import ConfigError, VerificationError
from twistdiff.flat_bundle import (SecondKindData, SingularData, SurfaceSpec,
                                   ThirdKindData)
from twistdiff.grid import CompositeGrid
from twistdiff.model_metric import ModelMetric

SPHERE = SurfaceSpec(mode="sphere_chart", punctures=(0j,), disk_radius=0.5,
                     box=(-2.0, 2.0, -2.0, 2.0))


@pytest.fixture(scope="module")
def grid():
    return CompositeGrid(SPHERE, bg_res=96, n_theta=256, radial_ratio=1.015,
                         r_min=0.05)


def probe_form(grid, fn):
    """OneFormField with phi_dz = fn(local t) / R on every node."""
    R = grid.surface.disk_radius
    t = (grid.pos - grid.surface.puncture_array[0]) / R
    vals = (fn(t) / R)[:, None, None]
    return OneFormField(vals, np.zeros_like(vals))


def test_laurent_exact_pole(grid):
    table = laurent_extract(probe_form(grid, lambda t: t ** -2.0), grid, 0)
    assert table.coeff(-2)[0, 0] == pytest.approx(1.0, abs=1e-12)
    others = [table.coeff(m)[0, 0] for m in table.ms if m != -2]
    assert np.max(np.abs(others)) < 1e-12
    assert table.extraction_error < 1e-10


def test_laurent_residue(grid):
    table = laurent_extract(probe_form(grid, lambda t: 1.0 / t), grid, 0)
    assert table.residues[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_laurent_contour_independence(grid):
    fn = lambda t: 0.7 / t - 2.0 / t ** 2 + 0.3 * t
    t1 = laurent_extract(probe_form(grid, fn), grid, 0, r_c=0.25)
    t2 = laurent_extract(probe_form(grid, fn), grid, 0, r_c=0.5)
    err = np.max(np.abs(t1.coeffs - t2.coeffs))
    assert err < t1.extraction_error + t2.extraction_error + 1e-12


def test_laurent_requires_resolution():
    g = CompositeGrid(SPHERE, bg_res=48, n_theta=128, radial_ratio=1.03,
                      r_min=0.05)
    phi = probe_form(g, lambda t: 1.0 / t)
    with pytest.raises(ConfigError):
        laurent_extract(phi, g, 0)


def test_third_kind_model_residues():
    surf = SurfaceSpec(mode="sphere_chart", punctures=(0j, 0.6 + 0j),
                       disk_radius=0.2, box=(-2.0, 2.0, -2.0, 2.0))
    sd = SingularData(per_puncture=(ThirdKindData(residues=(1.0,)),
                                    ThirdKindData(residues=(-1.0,))))
    g = CompositeGrid(surf, bg_res=96, n_theta=256, radial_ratio=1.03,
                      r_min=0.05)
    K0 = MetricField.from_model(g, ModelMetric(surf, sd))
    phi = differential(K0)
    tables = [laurent_extract(phi, g, ip) for ip in range(2)]
    assert tables[0].residues[0, 0] == pytest.approx(1.0, abs=1e-8)
    assert tables[1].residues[0, 0] == pytest.approx(-1.0, abs=1e-8)
    report = verify_asymptotics(tables, sd, tol=1e-6)
    assert report.ok
    assert np.max(np.abs(np.diag(report.residue_sums))) < 1e-8


def test_holomorphy_analytic_vs_antianalytic(grid):
    # a linear analytic probe leaves only polar-patch truncation error
    hol = OneFormField(grid.pos[:, None, None],
                       np.zeros((grid.num_nodes, 1, 1)))
    anti = OneFormField(np.conj(grid.pos)[:, None, None],
                        np.zeros((grid.num_nodes, 1, 1)))
    r_hol = holomorphy_residual(hol, grid)
    r_anti = holomorphy_residual(anti, grid)
    assert r_hol < 1e-3
    # dbar of conj(z) is 1, so the residual is about the sqrt of the area
    assert r_anti > 0.5


def _table(coeffs, m_max=2, err=1e-12):
    return LaurentTable(puncture=0, radius=0.25, m_min=-m_max, m_max=m_max,
                        coeffs=np.asarray(coeffs, dtype=complex),
                        extraction_error=err)


def test_verify_asymptotics_second_kind():
    sd = SingularData(per_puncture=(SecondKindData(slots=(((1, 1.0),),)),))
    coeffs = np.zeros((5, 1, 1), dtype=complex)
    coeffs[0, 0, 0] = -1.0          # C_-2 = -k a_k
    good = verify_asymptotics([_table(coeffs)], sd, tol=1e-6)
    assert good.ok and not good.messages
    coeffs[0, 0, 0] = -0.9
    bad = verify_asymptotics([_table(coeffs)], sd, tol=1e-6)
    assert not bad.ok and bad.messages


def test_verify_asymptotics_offdiagonal():
    sd = SingularData(per_puncture=(SecondKindData(
        slots=(((1, 1.0),), ())),))
    coeffs = np.zeros((5, 2, 2), dtype=complex)
    coeffs[0, 0, 0] = -1.0
    coeffs[1, 0, 1] = 0.5           # off-diagonal residue must flag
    bad = verify_asymptotics([_table(coeffs)], sd, tol=1e-6)
    assert not bad.ok
    assert any("off-diagonal" in m for m in bad.messages)


def test_verify_asymptotics_residue_sum():
    sd = SingularData(per_puncture=(ThirdKindData(residues=(1.0,)),
                                    ThirdKindData(residues=(-1.0,))))
    c1 = np.zeros((5, 1, 1), dtype=complex)
    c2 = np.zeros((5, 1, 1), dtype=complex)
    c1[1, 0, 0] = 1.0               # residues at order -1
    c2[1, 0, 0] = -1.0 + 1e-3
    report = verify_asymptotics([_table(c1), _table(c2)], sd, tol=1e-2,
                                residue_sum_tol=1e-8)
    assert not report.ok
    assert any("residue sum" in m for m in report.messages)


def test_subharmonicity_scalar_identity(grid):
    # d(K1, K2)^2 = x^2 for u1 = Re z, u2 = 0: the Laplacian is positive
    K1 = MetricField(grid, logdiag=np.real(grid.pos)[:, None])
    K2 = MetricField.constant(grid, 1)
    lap, mask = distance_squared_laplacian(K1, K2)
    assert np.min(lap[mask]) > 0.0
    assert subharmonicity_check(K1, K2) <= np.min(lap[mask])


def test_subharmonicity_constant_zero(grid):
    K1 = MetricField.constant(grid, 1)
    K2 = K1.copy()
    K2.logdiag += 0.3
    lap, mask = distance_squared_laplacian(K1, K2)
    assert np.max(np.abs(lap[mask])) < 1e-10


def test_max_principle_constant(grid):
    sd = SingularData(per_puncture=(SecondKindData(slots=(((1, 1.0),),)),))
    K0 = MetricField.from_model(grid, ModelMetric(SPHERE, sd))
    K = K0.copy()
    K.logdiag += 0.2
    out = max_principle_check(K, K0, 0)
    assert out["ok"] and out["constant"]


def test_max_principle_interior_bump(grid):
    sd = SingularData(per_puncture=(SecondKindData(slots=(((1, 1.0),),)),))
    K0 = MetricField.from_model(grid, ModelMetric(SPHERE, sd))
    K = K0.copy()
    bump = np.exp(-((grid.local_r - 0.4) / 0.05) ** 2)
    K.logdiag[:, 0] += np.where(grid.patch_id == 0, bump, 0.0)
    out = max_principle_check(K, K0, 0)
    assert not out["ok"]
    assert out["max_ring"] < out["outer_ring"] - 1


def test_oracle_scalar_matches_model():
    sd = SingularData(per_puncture=(SecondKindData(slots=(((1, 1.0),),)),))
    oracle = oracle_scalar(SPHERE, sd)
    model = ModelMetric(SPHERE, sd)
    z = np.array([0.2 + 0.1j, 0.8 - 0.3j])
    assert np.allclose(oracle["log_diag"](z), model.log_diag(z))
    raw = oracle_scalar(SPHERE, sd, include_mirror=False)
    t = z / 0.5
    assert np.allclose(raw["log_diag"](z)[:, 0], 2.0 * np.real(1.0 / t))
    assert np.allclose(raw["phi"](z)[:, 0], -2.0 / t ** 2 / 0.5)


def test_require():
    require(True, "fine")
    with pytest.raises(VerificationError):
        require(False, "broken")
