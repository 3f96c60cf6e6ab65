"""Extraction and verification of the twisted meromorphic differential.

From a solved metric field the differential phi = (dH/dz) H^-1 = -2 theta
is computed per node; near each puncture its Laurent coefficients in the
local coordinate t = (z - p)/R are extracted by trapezoid contour sums
over the polar rings (spectrally accurate on circles), and compared with
the targets prescribed by the singular data: coefficient -k a_k at order
t^(-k-1) for second-kind slots, residue a at t^-1 for third-kind slots,
with vanishing off-diagonal principal parts and zero residue sum across
punctures in the third-kind case. Qualitative checks on solved fields
(holomorphy of phi away from the punctures, subharmonicity of squared
distances of harmonic fields, the annulus maximum principle) and the
scalar closed-form reference solutions are also provided here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy_forms import MetricField, OneFormField, _d_dzbar, \
    full_stencil_mask, theta
from .errors import ConfigError, VerificationError
from .flat_bundle import SingularData, SurfaceSpec
from .grid import CompositeGrid
from .model_metric import ModelMetric


def differential(K: MetricField) -> OneFormField:
    """phi = (dH/dz) H^-1 = -2 theta_K (and its (0,1) companion)."""
    th = theta(K)
    return OneFormField(-2.0 * th.dz, -2.0 * th.dzbar)


def holomorphy_residual(phi: OneFormField, grid: CompositeGrid,
                        excise_factor=2.0):
    """L2 norm of the discrete dbar of phi_dz away from the punctures.

    Punctures are excised at radius excise_factor * r_min. Nodes without
    a full interior stencil use one-sided differences for phi, so both
    they and their neighbours (whose dbar stencil reads those lower-order
    values) are skipped; the remaining nodes differentiate a smoothly
    varying truncation error and converge at second order.
    """
    from .energy_forms import _CompositeDeriv

    dbar = _d_dzbar(_CompositeDeriv(grid), phi.dz)
    good = full_stencil_mask(grid)
    near_bad = np.zeros(grid.num_nodes, dtype=bool)
    bad_src = ~good[grid.edge_src]
    bad_dst = ~good[grid.edge_dst]
    np.logical_or.at(near_bad, grid.edge_dst, bad_src)
    np.logical_or.at(near_bad, grid.edge_src, bad_dst)
    mask = good & ~near_bad & (grid.local_r > excise_factor * grid.r_min)
    mag2 = np.sum(np.abs(dbar) ** 2, axis=(1, 2))
    return float(np.sqrt(np.dot(grid.node_area()[mask], mag2[mask])))


@dataclass
class LaurentTable:
    puncture: int
    radius: float
    m_min: int
    m_max: int
    coeffs: np.ndarray          # (2 m_max + 1, n, n), order m_min..m_max
    extraction_error: float

    @property
    def ms(self):
        return np.arange(self.m_min, self.m_max + 1)

    def coeff(self, m):
        if not self.m_min <= m <= self.m_max:
            raise ConfigError(f"order {m} outside extracted range")
        return self.coeffs[m - self.m_min]

    @property
    def residues(self):
        return self.coeff(-1)


def _ring_coeffs(phi_dz, grid, ip, ring, m_values):
    """Trapezoid contour coefficients of phi in the local coordinate.

    phi_z dz = phi_t dt with phi_t = R phi_z; on |t| = r the trapezoid
    sum C_m = mean_theta phi_t t^-m is spectrally accurate.
    """
    patch = grid.patches[ip]
    nodes = patch.ring_nodes(ring)
    r = float(patch.radii[ring])
    th = patch.dtheta * np.arange(patch.n_theta)
    t = r * np.exp(1j * th)
    phi_t = grid.surface.disk_radius * phi_dz[nodes]
    out = np.empty((len(m_values),) + phi_t.shape[1:], dtype=complex)
    for i, m in enumerate(m_values):
        out[i] = np.mean(phi_t * (t ** (-m))[:, None, None], axis=0)
    return out, r


def laurent_extract(phi: OneFormField, grid: CompositeGrid, puncture,
                    m_max=4, r_c=0.25):
    """Laurent table of phi near one puncture from a ring contour.

    Coefficients are extracted on the polar ring closest to local radius
    r_c and cross-checked on the ring closest to r_c / 2; the largest
    disagreement is the reported extraction error.
    """
    patch = grid.patches[puncture]
    if patch.n_theta < 256:
        raise ConfigError("contour extraction requires >= 256 angular "
                          "samples; increase the angular resolution")
    if not grid.r_min < r_c <= 1.0:
        raise ConfigError("contour radius must lie in (r_min, 1]")
    ms = np.arange(-m_max, m_max + 1)
    ring = patch.ring_at_radius(r_c)
    half = patch.ring_at_radius(max(r_c / 2.0, grid.r_min * 1.5))
    coeffs, r = _ring_coeffs(phi.dz, grid, puncture, ring, ms)
    if half != ring:
        check, _ = _ring_coeffs(phi.dz, grid, puncture, half, ms)
        err = float(np.max(np.abs(coeffs - check)))
    else:
        err = float(np.max(np.abs(coeffs))) * 1e-12
    return LaurentTable(puncture=puncture, radius=r, m_min=-m_max,
                        m_max=m_max, coeffs=coeffs,
                        extraction_error=err + 1e-14)


@dataclass
class AsymptoticsReport:
    ok: bool
    per_puncture: list = field(default_factory=list)
    residue_sums: np.ndarray = None
    messages: list = field(default_factory=list)


def verify_asymptotics(tables, data: SingularData, tol=1e-3,
                       offdiag_tol=None, residue_sum_tol=1e-8):
    """Compare extracted Laurent tables against the prescribed data.

    Second kind: C_(-k-1) must equal -k a_k slotwise. Third kind: the
    residue C_(-1) must equal the prescribed a, and the slotwise residue
    sums across punctures must vanish. Off-diagonal principal parts must
    vanish within the extraction error in both cases.
    """
    if len(tables) != len(data.per_puncture):
        raise ConfigError("one Laurent table per puncture is required")
    n = data.n
    report = AsymptoticsReport(ok=True)
    ressum = np.zeros((n, n), dtype=complex)
    for table, pd_ in zip(tables, data.per_puncture):
        entry = {"puncture": table.puncture, "errors": {}, "ok": True}
        od_tol = offdiag_tol if offdiag_tol is not None else \
            max(10.0 * table.extraction_error, 1e-10)
        ressum += table.residues
        if data.kind == "second":
            for j, slot in enumerate(pd_.slots):
                for k, a in slot:
                    got = table.coeff(-k - 1)[j, j]
                    target = -k * a
                    err = abs(got - target) / max(abs(target), 1.0)
                    entry["errors"][(j, -k - 1)] = err
                    if err > tol:
                        entry["ok"] = False
                        report.messages.append(
                            f"puncture {table.puncture} slot {j}: "
                            f"C_{-k-1} = {got:.6g}, want {target:.6g}")
        else:
            for j, a in enumerate(pd_.residues):
                got = table.residues[j, j]
                err = abs(got - a) / max(abs(a), 1.0)
                entry["errors"][(j, -1)] = err
                if err > tol:
                    entry["ok"] = False
                    report.messages.append(
                        f"puncture {table.puncture} slot {j}: residue "
                        f"{got:.6g}, want {a:.6g}")
        # off-diagonal principal parts
        off = 0.0
        for m in range(table.m_min, 0):
            c = table.coeff(m).copy()
            np.fill_diagonal(c, 0.0)
            off = max(off, float(np.max(np.abs(c))) if c.size else 0.0)
        entry["offdiag"] = off
        if off > od_tol:
            entry["ok"] = False
            report.messages.append(
                f"puncture {table.puncture}: off-diagonal principal part "
                f"{off:.3g} exceeds {od_tol:.3g}")
        report.ok = report.ok and entry["ok"]
        report.per_puncture.append(entry)
    report.residue_sums = ressum
    if data.kind == "third":
        s = float(np.max(np.abs(np.diag(ressum))))
        if s > residue_sum_tol:
            report.ok = False
            report.messages.append(
                f"residue sum {s:.3g} exceeds {residue_sum_tol:.3g}")
    return report


def distance_squared_laplacian(K1: MetricField, K2: MetricField, region=None):
    """Discrete Laplacian of the squared node distance of two fields.

    Returns (laplacian values, node mask). The edge stencil of the grid
    is used with conformal area normalization; only full-stencil nodes
    are reported. The distance is holonomy-invariant, so no wrap shifts
    enter.
    """
    grid = K1.grid
    d2 = K1.distance_to(K2) ** 2
    flux = np.zeros(grid.num_nodes)
    contrib = grid.edge_w * (d2[grid.edge_dst] - d2[grid.edge_src])
    np.add.at(flux, grid.edge_src, contrib)
    np.add.at(flux, grid.edge_dst, -contrib)
    lap = flux / grid.node_area()
    mask = full_stencil_mask(grid)
    if region is not None:
        mask = mask & np.asarray(region, dtype=bool)
    return lap, mask


def subharmonicity_check(K1: MetricField, K2: MetricField, region=None):
    """Min discrete Laplacian of distance^2 over the region (>= 0 for
    harmonic fields, up to discretization error)."""
    lap, mask = distance_squared_laplacian(K1, K2, region)
    return float(np.min(lap[mask], initial=0.0))


def max_principle_check(K: MetricField, K0: MetricField, puncture,
                        tol=1e-6):
    """Locate the maximum of distance(K, K0) over one annulus patch.

    Passes when the maximum lies on the outermost ring within one cell,
    or when the distance field is constant within tol.
    """
    grid = K.grid
    patch = grid.patches[puncture]
    d = K.distance_to(K0)
    dp = grid.patch_view(d, puncture)
    top = float(np.max(dp))
    if top - float(np.min(dp)) <= tol:
        return {"ok": True, "constant": True, "max_value": top,
                "max_ring": None}
    ring = int(np.unravel_index(np.argmax(dp), dp.shape)[0])
    ok = ring >= patch.n_s - 2 or top - float(np.max(dp[-1])) <= tol
    return {"ok": bool(ok), "constant": False, "max_value": top,
            "max_ring": ring, "outer_ring": patch.n_s - 1}


def oracle_scalar(surface: SurfaceSpec, singular: SingularData,
                  include_mirror=True):
    """Closed-form reference field for diagonal data with trivial holonomy.

    Returns dict with callables log_diag(z) and phi(z) (per-slot values,
    shapes z.shape + (n,)) and the model used. Second kind: per slot
    2 a Re(t^-k) plus, when include_mirror, the reflection term
    4^k Re(t^k) that matches the half-disk pinned boundary condition.
    Third kind: 2 a log|z - p| sums with zero residue sum.
    """
    if surface.mode != "sphere_chart":
        raise ConfigError("the scalar oracle requires sphere_chart mode")
    model = ModelMetric(surface, singular)
    if include_mirror or singular.kind == "third":
        return {"log_diag": model.log_diag, "phi": model.phi_diag,
                "model": model}
    ps = surface.puncture_array
    R = surface.disk_radius
    n = singular.n

    def log_diag(z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape + (n,))
        for p, data in zip(ps, singular.per_puncture):
            t = (z - p) / R
            for j, slot in enumerate(data.slots):
                for k, a in slot:
                    out[..., j] += 2.0 * a * np.real(t ** (-k))
        return out

    def phi(z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape + (n,), dtype=complex)
        for p, data in zip(ps, singular.per_puncture):
            t = (z - p) / R
            for j, slot in enumerate(data.slots):
                for k, a in slot:
                    out[..., j] += -2.0 * a * k * t ** (-k - 1) / R
        return out

    return {"log_diag": log_diag, "phi": phi, "model": model}


def require(ok, message):
    """Raise VerificationError with message when a check fails."""
    if not ok:
        raise VerificationError(message)
