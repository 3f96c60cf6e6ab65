"""Two-phase minimization of the modified energy.

The minimizer alternates, starting from the model field K0:

  (a) a relaxation solve on the compact part (background plus polar
      nodes with local radius > 1/2), boundary held at the current
      values on the half-disk rims and the chart-box boundary;
  (b) per puncture, an annulus solve on r in (r_min, 1] with the outer
      ring frozen at the current values and the innermost ring pinned to
      K0, reached through an exhaustion schedule of shrinking inner
      radii 1/k whose consecutive solutions are Cauchy-monitored.

All solves are colored SOR sweeps (kernels) on the per-slot log fields
targeting the discrete harmonic equation, with holonomy wrap shifts
only: on each annulus the deviation functional and the raw energy share
their minimizer under fixed boundary data (the model field is harmonic
there), so relaxing the plain harmonic equation minimizes both. Rows
that cross the patch seams are one-way interpolation stencils (accurate
but not variational); the outer loop therefore re-evaluates the
recorded energy after every phase and only accepts nonincreasing steps,
backtracking the relaxation factor when a seam-induced increase above
round-off is seen.

The recorded modified energy uses the shifted edge quadrature from
energy_forms.hat_sigma (tail rows shifted by the model differences);
the debug_inconsistent_quadrature flag instead records the unshifted
(tail-dropped) quadrature, a deliberately broken bookkeeping used as a
negative control for the monotonicity checks.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .energy_forms import (MetricField, _edge_quadrature, admissibility_check,
                           energy, hat_sigma)
from .errors import (AdmissibilityError, ConfigError, EnergyIncreaseError,
                     NonConvergenceError)
from .flat_bundle import semisimplicity_check
from .grid import CompositeGrid


@dataclass
class SolverConfig:
    omega: float = 1.9                 # SOR relaxation factor in (0, 2)
    eps_energy_rel: float = 1e-10      # energy plateau, relative to Ehat(K0)
    eps_residual: float = 1e-6         # sup-norm Gauss-Seidel residual
    eps_step: float = 1e-6             # sup-norm change per outer iteration
    max_sweeps: int = 60000            # per inner solve
    max_outer: int = 30
    exhaustion_k0: int = 2             # inner radii 1/k, k = k0, k0+dk, ...
    exhaustion_dk: int = 1
    armijo_c: float = 1e-4             # acceptance slack for energy steps
    armijo_backtrack: float = 0.5      # omega backtracking on energy increase
    energy_increase_tolerance: float = 1e-2  # relative rise that is a hard error
    restarts: int = 0                  # perturbed restarts (uniqueness monitor)
    seed: int = 0
    debug_inconsistent_quadrature: bool = False

    def __post_init__(self):
        if not 0.0 < self.omega < 2.0:
            raise ConfigError("relaxation factor must lie in (0, 2)")
        for name in ("eps_energy_rel", "eps_residual", "eps_step"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"tolerance {name} must be positive")
        if self.exhaustion_k0 < 2 or self.exhaustion_dk < 1:
            raise ConfigError("exhaustion schedule must start at k >= 2 "
                              "and be strictly decreasing in radius")


@dataclass
class SolveReport:
    iterations: list = field(default_factory=list)
    mu: float = np.nan                 # final (lowest accepted) Ehat
    ehat_initial: float = np.nan
    converged: bool = False
    accepted_monotone: bool = True
    cauchy: dict = field(default_factory=dict)
    admissibility: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)
    anchor_node: int = -1
    sweeps_total: int = 0

    @property
    def ehat_history(self):
        return [rec["ehat"] for rec in self.iterations]


def anchor_node(grid: CompositeGrid):
    """Background node farthest from every puncture (gauge pin)."""
    pos = grid.pos[: grid.n_bg]
    ps = grid.surface.puncture_array
    if len(ps) == 0:
        return 0
    d = np.min(np.abs(pos[:, None] - ps[None, :]), axis=1)
    return int(np.argmax(d))


def recorded_energy(K: MetricField, K0: MetricField, config: SolverConfig):
    """The modified-energy value logged by the outer loop."""
    grid = K.grid
    sig = hat_sigma(K0, drop_tail=config.debug_inconsistent_quadrature)
    emask = np.ones(grid.num_edges, dtype=bool)
    return _edge_quadrature(grid, K.logdiag, sig[: grid.num_edges], emask)


def relax_sweep(K: MetricField, plan, sigma, omega):
    """One colored SOR sweep; returns the pre-update sup residual."""
    if K.kind == "diag":
        return kernels.sweep_scalar(K.logdiag, sigma, omega, plan)
    return kernels.sweep_matrix(K.logmat, sigma, omega, plan)


def dirichlet_solve(K: MetricField, free, sigma, config: SolverConfig,
                    omega=None):
    """Sweep the free nodes to the Gauss-Seidel residual tolerance.

    Frozen nodes are never touched. Returns (residual, sweeps).
    """
    if not np.any(free):
        return 0.0, 0
    plan = K.grid.sweep_plan(free)
    omega = config.omega if omega is None else omega
    resid = np.inf
    for sweep in range(1, config.max_sweeps + 1):
        resid = relax_sweep(K, plan, sigma, omega)
        if resid < config.eps_residual * min(1.0, 1.0 - abs(1.0 - omega)):
            # the GS residual of the relaxed iterate is bounded by the
            # pre-update residual scaled back by the over-relaxation
            return resid, sweep
    raise NonConvergenceError(
        f"relaxation stalled at residual {resid:.3e} after "
        f"{config.max_sweeps} sweeps")


def exhaustion_schedule(grid: CompositeGrid, config: SolverConfig):
    """Inner rings for radii 1/k down to the grid floor r_min."""
    patch = grid.patches[0]
    rings = []
    k = config.exhaustion_k0
    while 1.0 / k > grid.r_min:
        ring = patch.ring_at_radius(1.0 / k)
        if ring > 0 and (not rings or ring < rings[-1]):
            rings.append(ring)
        k += config.exhaustion_dk
        if k > 10 * int(1.0 / grid.r_min) + 10:
            break
    rings.append(0)
    return rings


def annulus_exhaustion_solve(K: MetricField, K0: MetricField, ip, sigma,
                             config: SolverConfig, rings=None):
    """Exhaustion solves on patch ip; outer ring r=1 stays frozen.

    For each inner ring in the schedule, the ring is pinned to K0 and
    the annulus above it is solved; the sup-distance between consecutive
    solutions on the common annulus is recorded. Returns (cauchy list,
    sweeps).
    """
    grid = K.grid
    patch = grid.patches[ip]
    if rings is None:
        rings = exhaustion_schedule(grid, config)
    cauchy = []
    sweeps = 0
    prev = None
    prev_free = None
    for ring in rings:
        nodes = patch.ring_nodes(ring)
        K.logdiag[nodes] = K0.logdiag[nodes]
        r_in = float(patch.radii[ring])
        free = grid.free_mask("annulus", patch=ip, r_inner=r_in, r_outer=1.0)
        _, s = dirichlet_solve(K, free, sigma, config)
        sweeps += s
        if prev is not None:
            common = prev_free & free
            d = np.sqrt(np.sum(
                (K.logdiag[common] - prev[common]) ** 2, axis=1))
            cauchy.append(float(np.max(d, initial=0.0)))
        prev = K.logdiag.copy()
        prev_free = free
    return cauchy, sweeps


def two_step_minimize(K0: MetricField, config: SolverConfig = None):
    """Alternating compact/annulus minimization from the model field K0.

    Returns (final field, SolveReport). The accepted recorded-energy
    sequence is nonincreasing; an increase beyond the acceptance slack
    after omega backtracking is a hard error.
    """
    config = config or SolverConfig()
    if K0.kind != "diag":
        raise ConfigError("the minimizer solves per-slot log fields; "
                          "supply a diagonal model")
    grid = K0.grid
    check = admissibility_check(K0, K0)
    if not check["admissible"]:
        raise AdmissibilityError("start field is not admissible")

    K = K0.copy()
    # relaxation targets the harmonic equation: wrap shifts only. The
    # deviation form of the annulus functional has the same minimizer
    # under fixed boundary data; the recorded (hat) quadrature is used
    # solely for energy bookkeeping.
    sigma = K0.sigma_wrap()
    report = SolveReport()
    report.anchor_node = -1
    ehat0 = recorded_energy(K, K0, config)
    report.ehat_initial = ehat0
    eps_energy = config.eps_energy_rel * max(ehat0, 1.0)

    free_compact = grid.free_mask("compact")
    if np.all(free_compact):
        # nothing frozen anywhere (e.g. torus without punctures): pin the
        # farthest background node to fix the additive gauge freedom
        report.anchor_node = anchor_node(grid)
        free_compact = free_compact.copy()
        free_compact[report.anchor_node] = False

    ehat_prev = ehat0
    best = K.logdiag.copy()
    first_pass = True
    t_compact = t_annulus = 0.0
    for outer in range(1, config.max_outer + 1):
        before = K.logdiag.copy()
        omega = config.omega
        while True:
            t0 = time.perf_counter()
            resid_a, s_a = dirichlet_solve(K, free_compact, sigma, config,
                                           omega=omega)
            t_compact += time.perf_counter() - t0
            t0 = time.perf_counter()
            s_b = 0
            for ip in range(len(grid.patches)):
                rings = None if first_pass else [0]
                cauchy, s = annulus_exhaustion_solve(K, K0, ip, sigma,
                                                     config, rings=rings)
                s_b += s
                if first_pass:
                    report.cauchy[ip] = cauchy
            t_annulus += time.perf_counter() - t0
            first_pass = False
            report.sweeps_total += s_a + s_b

            ehat = recorded_energy(K, K0, config)
            accepted = (ehat <= ehat_prev + 1e-12 * max(ehat0, 1.0)
                        or config.debug_inconsistent_quadrature)
            if accepted or omega <= 1.0:
                break
            # rule out over-relaxation overshoot before giving up: redo
            # the pass as plain Gauss-Seidel (exact local minimization)
            K.logdiag[:] = before
            omega = max(1.0, omega * config.armijo_backtrack)

        if not accepted:
            rel_rise = (ehat - ehat_prev) / max(ehat_prev, 1e-30)
            if rel_rise > config.energy_increase_tolerance:
                raise EnergyIncreaseError(
                    f"recorded energy rose from {ehat_prev:.12e} to "
                    f"{ehat:.12e}; discretization bookkeeping inconsistent")
            # increase at quadrature-consistency scale: the previous
            # accepted iterate is already optimal for the recorded
            # energy; keep it and stop
            K.logdiag[:] = best
            report.converged = True
            break

        max_step = float(np.max(np.abs(K.logdiag - before), initial=0.0))
        report.iterations.append({
            "outer": outer, "ehat": ehat,
            "energy_compact": energy(K, "compact"),
            "residual": resid_a, "max_step": max_step,
            "sweeps": s_a + s_b})
        if ehat > ehat_prev:
            report.accepted_monotone = False
        ehat_prev = min(ehat_prev, ehat)
        best = K.logdiag.copy()
        delta_e = (report.iterations[-2]["ehat"] - ehat
                   if len(report.iterations) > 1 else np.inf)
        if (abs(delta_e) < eps_energy and resid_a < config.eps_residual
                and max_step < config.eps_step):
            report.converged = True
            break
    else:
        raise NonConvergenceError(
            f"no convergence in {config.max_outer} outer iterations "
            f"(last residual {resid_a:.3e}, step {max_step:.3e})")

    K.logdiag[:] = best
    report.mu = ehat_prev
    report.admissibility = admissibility_check(K, K0)
    report.wall_clock = {"compact": t_compact, "annulus": t_annulus}
    return K, report


def perturbed_start(K0: MetricField, free, magnitude, rng):
    """Model field moved along a random smooth direction on free nodes.

    The perturbation is a low-frequency random field scaled so the
    largest per-node distance to K0 equals the magnitude.
    """
    grid = K0.grid
    z = grid.pos
    psi = np.zeros((grid.num_nodes, K0.n))
    for _ in range(4):
        kx, ky = rng.normal(size=2)
        ph = rng.uniform(0, 2 * np.pi)
        amp = rng.normal(size=K0.n)
        psi += np.cos(kx * z.real + ky * z.imag + ph)[:, None] * amp
    psi[~free] = 0.0
    norms = np.sqrt(np.sum(psi**2, axis=1))
    top = np.max(norms, initial=0.0)
    if top > 0:
        psi *= magnitude / top
    K = K0.copy()
    K.logdiag += psi
    return K


def uniqueness_monitor(K0: MetricField, config: SolverConfig,
                       reference: MetricField = None):
    """Re-solve from perturbed admissible starts and compare final fields.

    Returns a dict with the per-restart sup-distances to the reference
    solution and the pass verdict (agreement within 10x the step
    tolerance). Disagreement is reported, not raised.
    """
    if reference is None:
        # run the unperturbed start through the same driver as the
        # restarts so all runs share one stopping rule
        reference, _ = two_step_minimize_from(K0, K0, config)
    rng = np.random.default_rng(config.seed)
    free = K0.grid.free_mask("compact")
    distances = []
    fields = []
    for _ in range(max(config.restarts, 0)):
        start = perturbed_start(K0, free, 0.5, rng)
        final, _ = two_step_minimize_from(start, K0, config)
        fields.append(final)
        distances.append(reference.sup_distance(final))
    tol = 10.0 * config.eps_step
    verdict = all(d <= tol for d in distances)
    semis = None
    if K0.rep is not None:
        semis = semisimplicity_check(K0.rep).verdict
    return {"distances": distances, "tolerance": tol, "agrees": verdict,
            "semisimplicity": semis, "reference": reference,
            "fields": fields}


def two_step_minimize_from(start: MetricField, K0: MetricField,
                           config: SolverConfig):
    """two_step_minimize but from an arbitrary admissible start field."""
    config = config or SolverConfig()
    check = admissibility_check(start, K0)
    if not check["admissible"]:
        raise AdmissibilityError("start field is not admissible")
    return _TwoStepDriver(K0, config).run(start)


class _TwoStepDriver:
    """Internal: two_step_minimize split so a custom start can be used."""

    def __init__(self, K0, config):
        self.K0 = K0
        self.config = config

    def run(self, K):
        K0, config = self.K0, self.config
        grid = K0.grid
        sigma = K0.sigma_wrap()
        free_compact = grid.free_mask("compact")
        if np.all(free_compact):
            free_compact = free_compact.copy()
            free_compact[anchor_node(grid)] = False
        # frozen tail nodes must carry model data for the tail split
        K = K.copy()
        K.logdiag[~free_compact & (grid.local_r <= 0.5)] = \
            K0.logdiag[~free_compact & (grid.local_r <= 0.5)]
        report = SolveReport()
        ehat_prev = recorded_energy(K, K0, config)
        report.ehat_initial = ehat_prev
        first = True
        for outer in range(1, config.max_outer + 1):
            before = K.logdiag.copy()
            dirichlet_solve(K, free_compact, sigma, config)
            for ip in range(len(grid.patches)):
                annulus_exhaustion_solve(K, K0, ip, sigma, config,
                                         rings=None if first else [0])
            first = False
            ehat = recorded_energy(K, K0, config)
            step = float(np.max(np.abs(K.logdiag - before), initial=0.0))
            report.iterations.append({"outer": outer, "ehat": ehat,
                                      "max_step": step})
            if step < config.eps_step:
                report.converged = True
                break
            ehat_prev = ehat
        report.mu = ehat
        return K, report
