"""Configuration ingestion, run orchestration, persistence and plots.

A run is described by one YAML file with blocks surface / singular /
grid / solver / output (plus an optional analysis block and a seed).
Complex scalars are encoded as [re, im] pairs; torus generator matrices
as nested lists of such pairs. The CLI verbs are

  validate        parse and cross-check the configuration
  solve           assemble K0, minimize, dump the field and a report
  verify          solve, then extract and verify the differential
  oracle-compare  solver vs closed form on oracle-eligible configs
  plot            SVG heatmaps (log det H, log |phi|) from a field dump

Exit codes: 0 ok, 2 config error, 3 non-convergence, 4 verification
failure. Reports contain no timings or timestamps, so identical config
and seed give byte-identical report files.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np
import yaml

from .analysis import (differential, holomorphy_residual, laurent_extract,
                       max_principle_check, oracle_scalar, verify_asymptotics)
from .energy_forms import MetricField
from .errors import (ConfigError, EnergyIncreaseError, NonConvergenceError,
                     TwistdiffError, VerificationError)
from .flat_bundle import (Representation, SecondKindData, SingularData,
                          SurfaceSpec, ThirdKindData, semisimplicity_check)
from .grid import CompositeGrid
from .model_metric import ModelMetric
from .solver import SolverConfig, two_step_minimize, uniqueness_monitor

log = logging.getLogger("twistdiff")

_SOLVER_KEYS = ("omega", "eps_energy_rel", "eps_residual", "eps_step",
                "max_sweeps", "max_outer", "exhaustion_k0", "exhaustion_dk",
                "armijo_c", "armijo_backtrack", "energy_increase_tolerance",
                "restarts", "seed", "debug_inconsistent_quadrature")


@dataclass
class GridConfig:
    bg_res: int = 128
    n_theta: int = 256
    radial_ratio: float = 1.02
    r_min: float = 0.02


@dataclass
class OutputConfig:
    formats: tuple = ("text", "npz")
    plots: bool = False
    prefix: str = "run"


@dataclass
class AnalysisConfig:
    m_max: int = 3
    r_contour: float = 0.25
    laurent_tol: float = 1e-3
    residue_sum_tol: float = 1e-6


@dataclass
class RunConfig:
    surface: SurfaceSpec
    rep: Representation
    singular: SingularData
    grid: GridConfig
    solver: SolverConfig
    output: OutputConfig
    analysis: AnalysisConfig
    seed: int = 0


def _complex(v, what):
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 \
            and all(isinstance(x, (int, float)) for x in v):
        return complex(v[0], v[1])
    raise ConfigError(f"{what}: expected a number or [re, im] pair, "
                      f"got {v!r}")


def _cmatrix(rows, what):
    try:
        return np.array([[_complex(x, what) for x in row] for row in rows])
    except TypeError:
        raise ConfigError(f"{what}: expected a matrix of [re, im] pairs") \
            from None


def _reject_unknown(block, allowed, what):
    if not isinstance(block, dict):
        raise ConfigError(f"{what} block must be a mapping")
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")


def _parse_surface(block):
    _reject_unknown(block, ("mode", "punctures", "disk_radius", "box",
                            "generators"), "surface")
    mode = block.get("mode", "sphere_chart")
    punctures = tuple(_complex(p, "puncture") for p in
                      block.get("punctures", ()))
    box = tuple(float(v) for v in block["box"]) if "box" in block else None
    surface = SurfaceSpec(mode=mode, punctures=punctures,
                          disk_radius=float(block.get("disk_radius", 0.2)),
                          box=box)
    gens = block.get("generators")
    if gens is not None:
        _reject_unknown(gens, ("a", "b"), "generators")
        if mode != "torus":
            raise ConfigError("generators are only meaningful on the torus")
        a = _cmatrix(gens["a"], "generator a")
        b = _cmatrix(gens["b"], "generator b")
        rep = Representation(a.shape[0], (a, b))
    elif mode == "torus":
        raise ConfigError("torus mode requires generator images")
    else:
        rep = None
    return surface, rep


def _parse_singular(block, num_punctures):
    _reject_unknown(block, ("kind", "per_puncture",
                            "rational_denominator_bound"), "singular")
    kind = block.get("kind", "second")
    per = []
    for entry in block.get("per_puncture", ()):
        if kind == "second":
            _reject_unknown(entry, ("slots",), "per_puncture")
            slots = tuple(tuple((int(k), float(a)) for k, a in slot)
                          for slot in entry["slots"])
            per.append(SecondKindData(slots=slots))
        elif kind == "third":
            _reject_unknown(entry, ("residues",), "per_puncture")
            per.append(ThirdKindData(
                residues=tuple(float(a) for a in entry["residues"])))
        else:
            raise ConfigError(f"unknown singularity kind {kind!r}")
    if len(per) != num_punctures:
        raise ConfigError(f"{len(per)} singular prescriptions for "
                          f"{num_punctures} punctures")
    data = SingularData(
        per_puncture=tuple(per),
        rational_denominator_bound=int(
            block.get("rational_denominator_bound", 64)))
    data.validate_third_kind(check_rational=True)
    return data


def load_config(path):
    """Parse and cross-validate a run configuration file."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _reject_unknown(raw, ("surface", "singular", "grid", "solver", "output",
                          "analysis", "seed"), "config")
    surface, rep = _parse_surface(raw.get("surface", {}))
    singular = _parse_singular(raw.get("singular", {}),
                               surface.num_punctures)
    if rep is not None and singular.n and rep.n != singular.n:
        raise ConfigError(f"singular data has {singular.n} slots but the "
                          f"representation acts on C^{rep.n}")

    gblock = dict(raw.get("grid", {}))
    _reject_unknown(gblock, ("bg_res", "n_theta", "radial_ratio", "r_min"),
                    "grid")
    grid = GridConfig(**{k: type(getattr(GridConfig, k))(v)
                         for k, v in gblock.items()})

    sblock = dict(raw.get("solver", {}))
    _reject_unknown(sblock, _SOLVER_KEYS, "solver")
    solver = SolverConfig(**sblock)

    oblock = dict(raw.get("output", {}))
    _reject_unknown(oblock, ("formats", "plots", "prefix"), "output")
    if "formats" in oblock:
        oblock["formats"] = tuple(oblock["formats"])
        bad = set(oblock["formats"]) - {"text", "npz"}
        if bad:
            raise ConfigError(f"unknown output formats: {sorted(bad)}")
    output = OutputConfig(**oblock)

    ablock = dict(raw.get("analysis", {}))
    _reject_unknown(ablock, ("m_max", "r_contour", "laurent_tol",
                             "residue_sum_tol"), "analysis")
    analysis = AnalysisConfig(**ablock)

    seed = int(raw.get("seed", 0))
    solver.seed = seed
    return RunConfig(surface=surface, rep=rep, singular=singular, grid=grid,
                     solver=solver, output=output, analysis=analysis,
                     seed=seed)


def assemble(cfg: RunConfig):
    """Grid and model start field for a validated configuration."""
    grid = CompositeGrid(cfg.surface, bg_res=cfg.grid.bg_res,
                         n_theta=cfg.grid.n_theta,
                         radial_ratio=cfg.grid.radial_ratio,
                         r_min=cfg.grid.r_min)
    model = ModelMetric(cfg.surface, cfg.singular)
    K0 = MetricField.from_model(grid, model, rep=cfg.rep)
    return grid, K0


# ------------------------------------------------------------- persistence
def field_dump_path(out_dir, prefix, fmt):
    ext = {"text": "field.txt", "npz": "field.npz"}[fmt]
    return os.path.join(out_dir, f"{prefix}.{ext}")


def write_field_dump(K: MetricField, out_dir, prefix, formats):
    grid = K.grid
    paths = []
    if "text" in formats:
        path = field_dump_path(out_dir, prefix, "text")
        H = K.H()
        n = K.n
        with open(path, "w") as fh:
            fh.write(f"# twistdiff field dump n={n} "
                     f"nodes={grid.num_nodes}\n")
            fh.write("# node patch x y " + " ".join(
                f"H{i}{j}_re H{i}{j}_im" for i in range(n)
                for j in range(n)) + "\n")
            for a in range(grid.num_nodes):
                cells = [str(a), str(int(grid.patch_id[a])),
                         f"{grid.pos[a].real:.17g}",
                         f"{grid.pos[a].imag:.17g}"]
                for i in range(n):
                    for j in range(n):
                        cells += [f"{H[a, i, j].real:.17g}",
                                  f"{H[a, i, j].imag:.17g}"]
                fh.write(" ".join(cells) + "\n")
        paths.append(path)
    if "npz" in formats:
        path = field_dump_path(out_dir, prefix, "npz")
        payload = {"pos": grid.pos, "patch_id": grid.patch_id,
                   "kind": np.array(K.kind)}
        if K.kind == "diag":
            payload["logdiag"] = K.logdiag
        else:
            payload["logmat"] = K.logmat
        np.savez(path, **payload)
        paths.append(path)
    return paths


def read_field_dump(path, grid, rep=None):
    """Re-read an npz field dump onto a matching grid (exact values)."""
    with np.load(path) as data:
        if not np.array_equal(data["pos"], grid.pos):
            raise ConfigError("field dump does not match the grid")
        if str(data["kind"]) == "diag":
            return MetricField(grid, logdiag=data["logdiag"].copy(), rep=rep)
        return MetricField(grid, logmat=data["logmat"].copy(), rep=rep)


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.12e}"
    if isinstance(x, complex):
        return f"{x.real:.12e}{x.imag:+.12e}j"
    return str(x)


def write_report(path, rows):
    """Columnar key/value report; deterministic for fixed inputs."""
    with open(path, "w") as fh:
        for key, value in rows:
            fh.write(f"{key:32s} {_fmt(value)}\n")


# ------------------------------------------------------------------- verbs
def run_solve(cfg: RunConfig, out_dir):
    grid, K0 = assemble(cfg)
    log.info("grid: %d nodes (%d background), %d patches",
             grid.num_nodes, grid.n_bg, len(grid.patches))
    K, report = two_step_minimize(K0, cfg.solver)
    log.info("solve: converged=%s outer=%d sweeps=%d wall=%.2fs",
             report.converged, len(report.iterations), report.sweeps_total,
             sum(report.wall_clock.values()))
    monitor = None
    if cfg.solver.restarts > 0:
        monitor = uniqueness_monitor(K0, cfg.solver)
        log.info("restarts: agree=%s distances=%s", monitor["agrees"],
                 ["%.2e" % d for d in monitor["distances"]])
    os.makedirs(out_dir, exist_ok=True)
    paths = write_field_dump(K, out_dir, cfg.output.prefix,
                             cfg.output.formats)
    rows = [("converged", report.converged),
            ("accepted_monotone", report.accepted_monotone),
            ("outer_iterations", len(report.iterations)),
            ("sweeps_total", report.sweeps_total),
            ("ehat_initial", report.ehat_initial),
            ("ehat_final", report.mu),
            ("admissible", report.admissibility["admissible"]),
            ("max_distance_to_model", report.admissibility["max_distance"]),
            ("tail_integral", report.admissibility["tail_integral"])]
    for i, e in enumerate(report.ehat_history):
        rows.append((f"ehat[{i}]", e))
    for ip, cauchy in report.cauchy.items():
        for i, c in enumerate(cauchy):
            rows.append((f"cauchy[{ip}][{i}]", c))
    if monitor is not None:
        rows.append(("restarts_agree", monitor["agrees"]))
        for i, d in enumerate(monitor["distances"]):
            rows.append((f"restart_distance[{i}]", d))
        if monitor["semisimplicity"] is not None:
            rows.append(("semisimplicity", monitor["semisimplicity"]))
    rpath = os.path.join(out_dir, f"{cfg.output.prefix}.solve_report.txt")
    write_report(rpath, rows)
    paths.append(rpath)
    if cfg.output.plots:
        paths += emit_plots(K, out_dir, cfg.output.prefix)
    return grid, K0, K, report, paths


def run_verify(cfg: RunConfig, out_dir):
    grid, K0, K, report, paths = run_solve(cfg, out_dir)
    phi = differential(K)
    rows = []
    tables = []
    failures = []
    if not report.converged:
        failures.append("solver did not converge")
    if not report.accepted_monotone:
        failures.append("accepted energy sequence not monotone")
    if not report.admissibility["admissible"]:
        failures.append("final field inadmissible")
    for ip in range(len(grid.patches)):
        tables.append(laurent_extract(phi, grid, ip,
                                      m_max=cfg.analysis.m_max,
                                      r_c=cfg.analysis.r_contour))
        mp = max_principle_check(K, K0, ip)
        rows.append((f"max_principle[{ip}]", mp["ok"]))
        if not mp["ok"]:
            failures.append(f"maximum principle violated on patch {ip}")
    if tables:
        asym = verify_asymptotics(tables, cfg.singular,
                                  tol=cfg.analysis.laurent_tol,
                                  residue_sum_tol=cfg.analysis.residue_sum_tol)
        rows.append(("asymptotics_ok", asym.ok))
        for table in tables:
            for m in table.ms:
                for j in range(cfg.singular.n):
                    rows.append((f"C[{table.puncture}][{m}][{j}]",
                                 complex(table.coeff(m)[j, j])))
            rows.append((f"extraction_error[{table.puncture}]",
                         table.extraction_error))
        if cfg.singular.kind == "third" and cfg.singular.n:
            rows.append(("residue_sum", float(np.max(np.abs(
                np.diag(asym.residue_sums))))))
        if not asym.ok:
            failures.extend(asym.messages)
    rows.append(("holomorphy_residual", holomorphy_residual(phi, grid)))
    if cfg.rep is not None:
        rows.append(("semisimplicity",
                     semisimplicity_check(cfg.rep).verdict))
    rows.append(("verified", not failures))
    rpath = os.path.join(out_dir, f"{cfg.output.prefix}.verify_report.txt")
    write_report(rpath, rows)
    paths.append(rpath)
    if failures:
        raise VerificationError("; ".join(failures))
    return paths


def _refined(cfg: RunConfig):
    g = cfg.grid
    fine = GridConfig(bg_res=2 * g.bg_res, n_theta=2 * g.n_theta,
                      radial_ratio=1.0 + (g.radial_ratio - 1.0) / 2.0,
                      r_min=g.r_min)
    return RunConfig(surface=cfg.surface, rep=cfg.rep, singular=cfg.singular,
                     grid=fine, solver=cfg.solver, output=cfg.output,
                     analysis=cfg.analysis, seed=cfg.seed)


def run_oracle_compare(cfg: RunConfig, out_dir):
    """Solver vs closed form at two grid levels, with convergence orders."""
    if cfg.surface.mode != "sphere_chart" or (
            cfg.rep is not None and not cfg.rep.is_trivial):
        raise ConfigError("oracle comparison requires trivial holonomy on "
                          "a sphere chart")
    oracle = oracle_scalar(cfg.surface, cfg.singular)
    rows = []
    level_stats = []
    for level, lcfg in enumerate((cfg, _refined(cfg))):
        grid, K0 = assemble(lcfg)
        K, report = two_step_minimize(K0, lcfg.solver)
        target = oracle["log_diag"](grid.pos)
        sup_all = 0.0
        for ip in range(len(grid.patches)):
            sel = grid.patch_id == ip
            sup = float(np.max(np.abs(K.logdiag[sel] - target[sel]),
                               initial=0.0))
            rows.append((f"level{level}_patch{ip}_sup_error", sup))
            sup_all = max(sup_all, sup)
        sel = grid.patch_id == -1
        sup_bg = float(np.max(np.abs(K.logdiag[sel] - target[sel])))
        rows.append((f"level{level}_background_sup_error", sup_bg))
        phi = differential(K)
        lau = 0.0
        for ip in range(len(grid.patches)):
            table = laurent_extract(phi, grid, ip, m_max=cfg.analysis.m_max,
                                    r_c=cfg.analysis.r_contour)
            lau = max(lau, _laurent_target_error(table, cfg.singular, ip))
        holo = holomorphy_residual(phi, grid)
        rows.append((f"level{level}_laurent_error", lau))
        rows.append((f"level{level}_holomorphy_residual", holo))
        level_stats.append({"laurent": lau, "holomorphy": holo,
                            "sup": max(sup_all, sup_bg),
                            "converged": report.converged})
    for key in ("laurent", "holomorphy"):
        e0, e1 = level_stats[0][key], level_stats[1][key]
        order = np.log2(e0 / e1) if e1 > 0 else np.inf
        rows.append((f"order_{key}", float(order)))
    ok = (all(s["converged"] for s in level_stats)
          and level_stats[1]["laurent"] <= cfg.analysis.laurent_tol
          and level_stats[1]["holomorphy"] <= level_stats[0]["holomorphy"])
    rows.append(("oracle_compare_ok", ok))
    os.makedirs(out_dir, exist_ok=True)
    rpath = os.path.join(out_dir, f"{cfg.output.prefix}.oracle_report.txt")
    write_report(rpath, rows)
    line = "PASS" if ok else "FAIL"
    print(f"{line} oracle-compare {cfg.output.prefix}: "
          f"laurent {level_stats[1]['laurent']:.3e} "
          f"holomorphy {level_stats[0]['holomorphy']:.3e}"
          f"->{level_stats[1]['holomorphy']:.3e}")
    if not ok:
        raise VerificationError("oracle comparison failed")
    return [rpath]


def _laurent_target_error(table, singular, ip):
    data = singular.per_puncture[ip]
    err = 0.0
    if singular.kind == "second":
        for j, slot in enumerate(data.slots):
            for k, a in slot:
                err = max(err, abs(table.coeff(-k - 1)[j, j] + k * a))
    else:
        for j, a in enumerate(data.residues):
            err = max(err, abs(table.residues[j, j] - a))
    return err


def emit_plots(K: MetricField, out_dir, prefix):
    """SVG heatmaps of log det H and log |phi_dz|, punctures marked."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "twistdiff"
    grid = K.grid
    logdet = np.sum(K.logdiag, axis=1) if K.kind == "diag" else \
        np.trace(K.logmat, axis1=1, axis2=2).real
    phi = differential(K)
    mag = np.sqrt(np.sum(np.abs(phi.dz) ** 2, axis=(1, 2)))
    logmag = np.log10(np.maximum(mag, 1e-300))
    paths = []
    for tag, vals in (("logdetH", logdet), ("logphi", logmag)):
        fig, ax = plt.subplots(figsize=(6, 5))
        good = np.isfinite(vals)
        sc = ax.scatter(grid.pos[good].real, grid.pos[good].imag, s=2.0,
                        c=vals[good], cmap="viridis", linewidths=0,
                        rasterized=True)
        ps = grid.surface.puncture_array
        ax.plot(ps.real, ps.imag, "rx", markersize=8)
        ax.set_aspect("equal")
        ax.set_title(tag)
        fig.colorbar(sc, ax=ax)
        path = os.path.join(out_dir, f"{prefix}.{tag}.svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def run_plot(cfg: RunConfig, out_dir):
    dump = field_dump_path(out_dir, cfg.output.prefix, "npz")
    grid, K0 = assemble(cfg)
    if os.path.exists(dump):
        K = read_field_dump(dump, grid, rep=cfg.rep)
    else:
        K, _ = two_step_minimize(K0, cfg.solver)
    os.makedirs(out_dir, exist_ok=True)
    return emit_plots(K, out_dir, cfg.output.prefix)


def _set_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="twistdiff",
        description="harmonic metrics with prescribed pole singularities "
                    "on flat bundles over punctured surfaces")
    parser.add_argument("verb", choices=("validate", "solve", "verify",
                                         "oracle-compare", "plot"))
    parser.add_argument("--config", required=True, help="run config (YAML)")
    parser.add_argument("--out", default=".", help="artifact directory")
    parser.add_argument("--threads", type=int, default=0,
                        help="worker thread cap (0: leave unchanged)")
    parser.add_argument("--log-level", default="warning",
                        choices=("debug", "info", "warning", "error"))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(message)s")
    if args.threads > 0:
        _set_threads(args.threads)
    try:
        cfg = load_config(args.config)
        if args.verb == "validate":
            # assemble cheaply enough to exercise cross-field checks
            print(f"ok: {cfg.surface.mode}, {cfg.surface.num_punctures} "
                  f"punctures, kind {cfg.singular.kind}, "
                  f"n={max(cfg.singular.n, 1)}")
        elif args.verb == "solve":
            for path in run_solve(cfg, args.out)[-1]:
                print(path)
        elif args.verb == "verify":
            for path in run_verify(cfg, args.out):
                print(path)
        elif args.verb == "oracle-compare":
            for path in run_oracle_compare(cfg, args.out):
                print(path)
        elif args.verb == "plot":
            for path in run_plot(cfg, args.out):
                print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NonConvergenceError, EnergyIncreaseError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 4
    except TwistdiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
