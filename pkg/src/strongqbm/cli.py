"""Command-line pipeline: kernels -> propagator -> covariance -> coefficients -> L1 -> evolution.

Every subcommand computes the stages it depends on and writes its own
outputs (columnar text, PNG figures next to them, and ``manifest.json``).

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 consistency-check failure.
"""

import argparse
import logging
import sys
import time
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import plotting
from .bath import kernel_table
from .checks import consistency_suite
from .config import build_config, read_config, validate
from .covariance import check_psd, sigma_table
from .errors import ConfigError, QBMError
from .evolve import WindowWarning, evolve, init_gaussian, write_snapshot
from .master import build_L1, hpz_table
from .opalg import dumps
from .oracle import equal_time_covariance, run_langevin, two_time_covariance
from .propagator import greens_function, volterra_residual
from .tables import monomial_name, versions, write_manifest, write_table

log = logging.getLogger(__name__)

STAGES = ("kernels", "propagator", "covariance", "coeffs", "l1", "evolve", "oracle", "check")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4
COMPONENTS = (("xx", 0, 0), ("xp", 0, 1), ("px", 1, 0), ("pp", 1, 1))
SYMMETRIC = (("xx", 0, 0), ("xp", 0, 1), ("pp", 1, 1))


@dataclass
class RunReport:
    """Outcome of one pipeline run."""

    stage: str
    files: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def failed(self):
        return [c for c in self.checks if not c.passed]

    @property
    def exit_code(self):
        return EXIT_CHECK if self.failed else EXIT_OK


class Pipeline:
    """Lazily computed stages for one configuration."""

    def __init__(self, config):
        self.config = config

    @cached_property
    def kernels(self):
        return kernel_table(self.config.model, self.config.grid)

    @cached_property
    def propagator(self):
        return greens_function(self.config.model, self.config.grid)

    @cached_property
    def covariance(self):
        cov = sigma_table(self.propagator, self.kernels)
        check_psd(cov)
        return cov

    @cached_property
    def master(self):
        return hpz_table(self.propagator, self.covariance)

    @cached_property
    def first_order(self):
        spec = self.config.forcing_spec()
        if spec is None:
            raise ConfigError("forcing: this stage needs a forcing block")
        return build_L1(spec, self.propagator, self.covariance, self.master, self.config.contraction_sign)


class _Writer:
    def __init__(self, config, out, report):
        self.config, self.out, self.report = config, Path(out), report
        self.plots = config.outputs.get("plots", True)
        self.out.mkdir(parents=True, exist_ok=True)

    def header(self, quantity):
        return {"config_hash": self.config.hash, "quantity": quantity, "model": self.config.model.describe()}

    def table(self, name, columns, quantity):
        path = write_table(self.out / f"{name}.txt", columns, self.header(quantity))
        self.report.files.append(path.name)
        return path

    def figure(self, name, fn, *args, **kwargs):
        if self.plots:
            path = fn(self.out / f"{name}.png", *args, **kwargs)
            self.report.files.append(path.name)


def _grid_rows(config):
    return np.arange(0, len(config.grid), config.master_stride)


def _stage_kernels(pipe, w):
    k = pipe.kernels
    w.table("kernels", {"t": k.t, "gamma": k.gamma, "nu": k.nu, "nu_cell": k.nu_cell},
            "damping kernel gamma(t), noise kernel nu(t) and its cell average")
    w.figure("kernels", plotting.plot_series, k.t, {"gamma": k.gamma, "nu": k.nu, "nu_cell": k.nu_cell},
             title="bath kernels")
    w.report.notes.extend(k.notes)


def _stage_propagator(pipe, w):
    p = pipe.propagator
    cols = {"t": p.t, "g": p.g, "gdot": p.gdot, "gddot": p.gddot}
    for name, i, j in COMPONENTS:
        cols[f"phi_{name}"] = p.phi[:, i, j]
    w.table("propagator", cols, "Green's function, its derivatives and Phi(t)")
    w.figure("propagator", plotting.plot_series, p.t, {k: v for k, v in cols.items() if k.startswith("phi")},
             title="propagator Phi(t)")
    w.report.tolerances["richardson_delta"] = p.richardson_delta
    w.report.tolerances["volterra_residual_max"] = float(np.max(volterra_residual(p)))


def _stage_covariance(pipe, w):
    c = pipe.covariance
    et = c.equal_time
    cols = {"t": c.grid.t}
    for name, i, j in SYMMETRIC:
        cols[f"sigma_{name}"] = et[:, i, j]
    for name, i, j in SYMMETRIC:
        cols[f"sigma_dot_{name}"] = c.sigma_dot[:, i, j]
    w.table("covariance", cols, "equal-time thermal covariance sigma_T(t,t) and its derivative")
    w.figure("covariance", plotting.plot_series, c.grid.t,
             {k: v for k, v in cols.items() if k.startswith("sigma_") and "dot" not in k}, title="sigma_T(t,t)")
    w.report.tolerances["sigma_min_eigenvalue_ratio"] = c.min_eigenvalue_ratio()


def _stage_coeffs(pipe, w):
    m, p = pipe.master, pipe.propagator
    rows = _grid_rows(pipe.config)
    cols = {"t": m.grid.t[rows]}
    for name, i, j in COMPONENTS:
        cols[f"H_{name}"] = m.H[rows, i, j]
    for name, i, j in SYMMETRIC:
        cols[f"D_{name}"] = m.D[rows, i, j]
    w.table("coefficients", cols, "drift H(t) and diffusion D(t) of the zeroth-order generator")
    w.figure("coefficients", plotting.plot_series, cols["t"], {k: v for k, v in cols.items() if k != "t"},
             title="H(t) and D(t)")
    loop = p.phidot[1:] + np.einsum("iab,ibc->iac", m.H[1:], p.phi[1:])
    scale = np.linalg.norm(p.phidot[1:], axis=(1, 2))
    w.report.tolerances["hpz_loop_residual"] = float(np.max(np.linalg.norm(loop, axis=(1, 2)) / scale))
    w.report.tolerances["D0_abs"] = float(np.max(np.abs(m.D[0])))


def _stage_l1(pipe, w):
    table = pipe.first_order
    rows = _grid_rows(pipe.config)
    cols = {"t": table.grid.t[rows]}
    for key in sorted(table.L1.terms):
        cols[monomial_name(key)] = np.asarray(table.L1.terms[key])[rows]
    w.table("l1", cols, "first-order generator L1(t), one column per monomial dx^i dp^j x^k p^l")
    final = w.out / "l1_final.op"
    final.write_text(f"# config_hash: {pipe.config.hash}\n# t: {table.grid.t_max!r}\n" + dumps(table.at(table.grid.n)))
    w.report.files.append(final.name)
    drift = {monomial_name(k): np.asarray(v)[rows] for k, v in table.drift().items()}
    w.figure("l1", plotting.plot_series, cols["t"], drift, title="L1 drift coefficients")


def _stage_evolve(pipe, w):
    cfg = pipe.config
    wc = cfg.wigner
    if wc is None:
        raise ConfigError("wigner: the evolve stage needs a wigner block")
    wig = init_gaussian(wc.get("mean", [0.0, 0.0]), wc["covariance"], wc.get("x_window"), wc.get("p_window"),
                        wc.get("nx", 128), wc.get("np", 128))
    generator = pipe.master.L0
    if wc.get("generator", "L0") == "L0+L1":
        generator = generator + pipe.first_order.L1
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", WindowWarning)
        result = evolve(wig, generator, cfg.grid, stride=wc.get("stride", 1), accuracy=wc.get("accuracy", 4),
                        t_end=wc.get("t_end"))
    for warn in caught:
        w.report.notes.append(str(warn.message))
        log.warning("%s", warn.message)
    norms = result.normalization
    w.table("normalization", {"t": result.times, "normalization": norms},
            "integral of W over the window at every grid step")
    rows = {"t": [], "normalization": [], "mean_x": [], "mean_p": [], "cov_xx": [], "cov_xp": [], "cov_pp": []}
    snapshots = cfg.outputs.get("snapshots", True)
    coarse = cfg.outputs.get("coarse")
    for i, snap in enumerate(result.snapshots):
        mean, cov = snap.moments()
        for key, val in zip(rows, (snap.time, snap.normalization(), mean[0], mean[1], cov[0, 0], cov[0, 1], cov[1, 1])):
            rows[key].append(val)
        if snapshots:
            stem = w.out / "snapshots" / f"snapshot_{i:04d}"
            write_snapshot(snap, stem, {"config_hash": cfg.hash}, coarse)
            w.report.files.append(f"snapshots/{stem.name}.bin")
    w.table("evolution", rows, "normalization, mean and covariance of W at the snapshot times")
    w.figure("evolution_final", plotting.plot_snapshot, result.snapshots[-1])
    w.figure("evolution_normalization", plotting.plot_series, result.times, {"normalization - 1": norms - 1},
             title="normalization drift")
    w.report.tolerances["normalization_drift"] = float(np.max(np.abs(norms - norms[0])))
    w.report.tolerances["substeps"] = result.substeps


def _stage_oracle(pipe, w):
    cfg = pipe.config
    oc = cfg.oracle
    grid = cfg.grid
    times = oc.get("times", [grid.t_max])
    pairs = oc.get("pairs", [])
    idx = sorted({grid.index(t) for t in times} | {grid.index(t) for pair in pairs for t in pair})
    vprime = oc.get("vprime")
    harmonic = [0.0, cfg.model.mass * cfg.model.omega**2]
    linear = vprime is None or np.allclose(np.trim_zeros(np.asarray(vprime, float), "b"), harmonic)
    if not linear:
        w.report.notes.append(
            "nonlinear V': the Langevin ensemble follows classical characteristics only; "
            "it validates the drift sector, not the quantum-deformation terms, and has no quadrature reference"
        )
    traj = run_langevin(cfg.model, pipe.kernels, int(oc.get("n", 10000)), cfg.seed, keep=idx, vprime=vprime,
                        chunk=int(oc.get("chunk", 4096)))
    ref = pipe.covariance.sigma if linear else None
    cols = {"t": []}
    zmax = 0.0
    for name, _, _ in SYMMETRIC:
        cols[f"mc_{name}"], cols[f"se_{name}"] = [], []
        if linear:
            cols[f"ref_{name}"] = []
    for t in times:
        k = grid.index(t)
        est, err = equal_time_covariance(traj, k)
        cols["t"].append(grid.t[k])
        for name, i, j in SYMMETRIC:
            cols[f"mc_{name}"].append(est[i, j])
            cols[f"se_{name}"].append(err[i, j])
            if linear:
                cols[f"ref_{name}"].append(ref[k, k, i, j])
                zmax = max(zmax, abs(est[i, j] - ref[k, k, i, j]) / err[i, j])
    w.table("oracle_equal_time", cols, "Monte Carlo equal-time covariance with standard errors")
    if linear:
        est = np.array([cols[f"mc_{n}"] for n, _, _ in SYMMETRIC]).T
        se = np.array([cols[f"se_{n}"] for n, _, _ in SYMMETRIC]).T
        rf = np.array([cols[f"ref_{n}"] for n, _, _ in SYMMETRIC]).T
        w.figure("oracle_equal_time", plotting.plot_errorbars, cols["t"], est, se, rf,
                 [n for n, _, _ in SYMMETRIC], title="Monte Carlo vs quadrature sigma_T(t,t)")
    if pairs:
        two = {"t1": [], "t2": []}
        for name, _, _ in COMPONENTS:
            two[f"mc_{name}"], two[f"se_{name}"] = [], []
            if linear:
                two[f"ref_{name}"] = []
        for t1, t2 in pairs:
            a, b = grid.index(t1), grid.index(t2)
            est, err = two_time_covariance(traj, a, b)
            two["t1"].append(grid.t[a])
            two["t2"].append(grid.t[b])
            for name, i, j in COMPONENTS:
                two[f"mc_{name}"].append(est[i, j])
                two[f"se_{name}"].append(err[i, j])
                if linear:
                    two[f"ref_{name}"].append(ref[a, b, i, j])
                    zmax = max(zmax, abs(est[i, j] - ref[a, b, i, j]) / err[i, j])
        w.table("oracle_two_time", two, "Monte Carlo two-time covariance with standard errors")
    if linear:
        w.report.tolerances["oracle_max_abs_z"] = zmax
    w.report.tolerances["oracle_samples"] = traj.n_samples


def _stage_check(pipe, w):
    cfg = pipe.config
    results = consistency_suite(pipe.propagator, pipe.kernels, pipe.covariance, pipe.master,
                                force=cfg.check_force(), spring=float(cfg.check.get("spring", 0.5)))
    path = w.out / "check.txt"
    lines = [f"# config_hash: {cfg.hash}", "# status name value threshold"]
    for r in results:
        print(r.line())
        lines.append(f"{'PASS' if r.passed else 'FAIL'}\t{r.name}\t{r.value:.6e}\t{r.threshold:.1e}")
        w.report.tolerances[r.name] = r.value
    path.write_text("\n".join(lines) + "\n")
    w.report.files.append(path.name)
    w.report.checks.extend(results)


_RUNNERS = {
    "kernels": _stage_kernels,
    "propagator": _stage_propagator,
    "covariance": _stage_covariance,
    "coeffs": _stage_coeffs,
    "l1": _stage_l1,
    "evolve": _stage_evolve,
    "oracle": _stage_oracle,
    "check": _stage_check,
}


def run(config, stage, out=None, command=None):
    """Run one pipeline stage (with its prerequisites) and write its outputs.

    Parameters
    ----------
    config : RunConfig
    stage : str
        One of :data:`STAGES`.
    out : path, optional
        Output directory (default ``outputs.directory`` or ``qbm_out``).

    Returns
    -------
    RunReport
    """
    if stage not in _RUNNERS:
        raise ValueError(f"unknown stage {stage!r}")
    out = Path(out or config.outputs.get("directory", "qbm_out"))
    report = RunReport(stage)
    writer = _Writer(config, out, report)
    start = time.perf_counter()
    _RUNNERS[stage](Pipeline(config), writer)
    manifest = {
        "stage": stage,
        "command": command,
        "config": config.raw,
        "config_hash": config.hash,
        "seed": config.seed,
        "versions": versions(),
        "files": report.files,
        "tolerances": report.tolerances,
        "checks": [{"name": c.name, "value": c.value, "threshold": c.threshold, "passed": c.passed}
                   for c in report.checks],
        "notes": report.notes,
        "warnings": [str(d) for d in config.warnings],
        "wall_seconds": round(time.perf_counter() - start, 3),
    }
    write_manifest(out / "manifest.json", manifest)
    return report


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="YAML run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides outputs.directory)")
    common.add_argument("--seed", type=int, help="random seed (overrides oracle.seed)")
    common.add_argument("--threads", type=int, help="limit BLAS/OpenMP threads")
    common.add_argument("--tolerance-report", action="store_true", help="print the tolerances achieved")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    parser = argparse.ArgumentParser(
        prog="strongqbm", description="Quantum Brownian motion with strong non-Markovian damping: perturbative generators and Wigner-function evolution."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "kernels": "tabulate the damping and noise kernels",
        "propagator": "solve for the Green's function and Phi(t)",
        "covariance": "two-time thermal covariance",
        "coeffs": "drift H(t) and diffusion D(t) of L0",
        "l1": "first-order generator for the forcing block",
        "evolve": "evolve the initial Gaussian Wigner function",
        "oracle": "Monte Carlo Langevin ensemble vs quadrature covariance",
        "check": "external-force and linear-force consistency suite",
        "validate": "static configuration checks",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def main(argv=None):
    """Entry point; returns the process exit code."""
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = read_config(args.config)
        if args.command == "validate":
            if args.seed is not None and isinstance(raw, dict) and isinstance(raw.get("oracle", {}), dict):
                raw.setdefault("oracle", {})["seed"] = args.seed
            diags = validate(raw)
            for d in diags:
                print(d)
            if not diags:
                print("configuration OK")
            return EXIT_CONFIG if any(d.level == "error" for d in diags) else EXIT_OK
        config = build_config(raw, args.seed)
        for d in config.warnings:
            print(d, file=sys.stderr)
        with threadpool_limits(limits=args.threads):
            report = run(config, args.command, args.out, command=" ".join(sys.argv))
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except (QBMError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.tolerance_report:
        print("tolerance report:")
        for key, val in report.tolerances.items():
            print(f"  {key}: {val:.3e}" if isinstance(val, float) else f"  {key}: {val}")
    for note in report.notes:
        print(f"note: {note}", file=sys.stderr)
    print(f"{args.command}: wrote {len(report.files)} files to {args.out or config.outputs.get('directory', 'qbm_out')}")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
