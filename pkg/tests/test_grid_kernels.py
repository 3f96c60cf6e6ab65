"""Composite grid structure and relaxation kernels."""
import numpy as np
import pytest

from twistdiff import kernels
from twistdiff.flat_bundle import SurfaceSpec
from twistdiff.grid import CompositeGrid
from twistdiff.kernels import SweepPlan, pure

SPHERE = SurfaceSpec(mode="sphere_chart", punctures=(0.3 + 0.2j,),
                     disk_radius=0.4, box=(-2.0, 2.0, -2.0, 2.0))


@pytest.fixture(scope="module")
def grid():
    return CompositeGrid(SPHERE, bg_res=48, n_theta=64, radial_ratio=1.06,
                         r_min=0.05)


def test_grid_partition(grid):
    # sharp partition: background nodes keep distance >= R from punctures
    bg = grid.patch_id == -1
    d = np.abs(grid.pos[bg] - (0.3 + 0.2j))
    assert np.min(d) >= 0.4 - 1e-12
    # polar nodes span (r_min, 1] in local radius
    pol = grid.patch_id == 0
    assert grid.local_r[pol].min() >= 0.05 - 1e-12
    assert grid.local_r[pol].max() == pytest.approx(1.0)


def test_edge_weights_conformal(grid):
    # angular edges weight ds/dtheta, radial edges dtheta/ds
    patch = grid.patches[0]
    pol = (grid.patch_id[grid.edge_src] == 0) & \
          (grid.patch_id[grid.edge_dst] == 0)
    ws = np.unique(np.round(grid.edge_w[pol], 12))
    assert np.min(np.abs(ws - patch.dtheta / patch.ds)) < 1e-10
    assert np.min(np.abs(ws - patch.ds / patch.dtheta)) < 1e-10


def test_plan_coloring(grid):
    plan = grid.sweep_plan(grid.free_mask("all"))
    colors = np.full(grid.num_nodes, -1)
    for c in range(plan.n_colors):
        colors[plan.nodes[plan.color_ptr[c]:plan.color_ptr[c + 1]]] = c
    # no free node reads a same-colored free node
    for i, node in enumerate(plan.nodes):
        nbrs = plan.he_nbr[plan.ptr[i]:plan.ptr[i + 1]]
        free_nbrs = nbrs[colors[nbrs] >= 0]
        assert np.all(colors[free_nbrs] != colors[node])


def test_pure_cython_equivalence(grid):
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(grid.num_nodes, 2))
    sigma = rng.normal(size=(grid.num_sigma, 2)) * 0.01
    plan = grid.sweep_plan(grid.free_mask("all"))
    v1, v2 = vals.copy(), vals.copy()
    for _ in range(50):
        r1 = kernels.sweep_scalar(v1, sigma, 1.8, plan)
        r2 = pure.sweep_scalar(v2, sigma, 1.8, plan)
    assert np.max(np.abs(v1 - v2)) < 1e-12
    assert abs(r1 - r2) < 1e-12


def test_matrix_sweep_matches_scalar(grid):
    rng = np.random.default_rng(1)
    vals = rng.normal(size=(grid.num_nodes, 1))
    sigma = rng.normal(size=(grid.num_sigma, 1)) * 0.01
    plan = grid.sweep_plan(grid.free_mask("all"))
    vs = vals.copy()
    vm = vals[:, :, None].astype(complex).copy()
    for _ in range(10):
        pure.sweep_scalar(vs, sigma, 1.5, plan)
        pure.sweep_matrix(vm, sigma[:, :, None].astype(complex), 1.5, plan)
    assert np.max(np.abs(vm[:, 0, 0].real - vs[:, 0])) < 1e-12


def _seam_error(bg, probe):
    surf = SurfaceSpec(mode="sphere_chart", punctures=(0j,), disk_radius=0.5,
                       box=(-2.0, 2.0, -2.0, 2.0))
    g = CompositeGrid(surf, bg_res=bg, n_theta=2 * bg,
                      radial_ratio=1.0 + 4.0 / bg, r_min=0.05)
    exact = probe(g.pos)
    vals = exact.copy()[:, None]
    free = g.free_mask("all")
    vals[free] = 0.0
    plan = g.sweep_plan(free)
    sigma = np.zeros((g.num_sigma, 1))
    for _ in range(40000):
        if kernels.sweep_scalar(vals, sigma, 1.92, plan) < 1e-11:
            break
    return float(np.max(np.abs(vals[:, 0] - exact)))


def test_seam_consistency_second_order():
    # harmonic probe reproduced through the patch seams at O(h^2)
    e1 = _seam_error(48, lambda z: z.real + 0.3 * z.imag)
    e2 = _seam_error(96, lambda z: z.real + 0.3 * z.imag)
    assert e1 < 5e-3
    assert e1 / e2 > 2.5


def test_torus_wrap_edges():
    surf = SurfaceSpec(mode="torus", punctures=(0.5 + 0.5j,),
                       disk_radius=0.2)
    g = CompositeGrid(surf, bg_res=32, n_theta=64, radial_ratio=1.06,
                      r_min=0.05)
    from twistdiff.grid import GEN_A, GEN_B
    assert np.sum(g.edge_gen == GEN_A) > 0
    assert np.sum(g.edge_gen == GEN_B) > 0
    # wrap edges connect opposite sides of the fundamental domain
    wa = g.edge_gen == GEN_A
    dx = np.abs(g.pos[g.edge_src[wa]].real - g.pos[g.edge_dst[wa]].real)
    assert np.all(dx > 0.9)
