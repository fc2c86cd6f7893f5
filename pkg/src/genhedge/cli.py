"""Command-line pipeline: build-model, simulate, hedge, scenario, report, run.

Every stage reads its inputs from the output directory and writes its
artifacts there. ``manifest.json`` records the full configuration, so any
stage can be re-run from a directory alone. Exit status is 0 on success,
1 when a certificate fails (the failing certificates are named on stderr)
and 2 for configuration errors or missing prior artifacts.

Simulated paths are not stored: each path is regenerated from the seed and
its path index, which the simulation metadata records.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import plotting
from .basis import ModelSpec, build_model, check_uniform_condition
from .claims import (
    OptimalClaim,
    bounded_smooth_claim,
    log_utility,
    power_utility,
    smooth_bump,
    truncated_claim,
)
from .config import RunConfig, load, parse_limit, validate
from .errors import (
    CertificateFailure,
    ConfigurationError,
    DomainError,
    GenHedgeError,
    KScheduleRefinementRequired,
    MissingArtifactError,
)
from .hedging import self_financing_residual, solve_hedge
from .lab import (
    LimitScenario,
    alpha_statistics,
    bounded_claim_context,
    certify_C1,
    certify_C2,
    default_test_functions,
    optimal_claim_context,
    paradox_report,
    scenario_sequence,
    tune_k_caps,
)
from .market import girsanov_density, sde_residual, simulate, write_paths_csv

log = logging.getLogger("genhedge")

STAGES = ("build-model", "simulate", "hedge", "scenario", "report")

EXIT_OK, EXIT_CERTIFICATE, EXIT_USAGE = 0, 1, 2

HEDGE_CHECK_STRIDE = 16  # steps between quadrature checks of the hedge equations
SDE_CHECK_PATHS = 64


# small file helpers ----------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: Path, header, rows) -> Path:
    """CSV with floats written by ``repr`` so values round-trip exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_table(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require(out: Path, *names: str) -> None:
    missing = [n for n in names if not (out / n).is_file()]
    if missing:
        raise MissingArtifactError(f"missing artifact(s) in {out}: {', '.join(missing)}")


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("genhedge", "numpy", "scipy", "matplotlib", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def _model_block_digest(cfg: RunConfig) -> str:
    block = {k: v for k, v in cfg.model.items() if k != "seed"}
    return hashlib.sha256(json.dumps(block, sort_keys=True).encode()).hexdigest()


def update_manifest(out: Path, cfg: RunConfig, stage: str, files: list[Path]) -> Path:
    """Record the configuration and the artifacts of ``stage`` (no timestamps)."""
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.is_file() else {}
    manifest["config"] = cfg.data
    manifest["config_sha256"] = cfg.digest()
    manifest["seed"] = cfg.model["seed"]
    manifest["versions"] = _versions()
    manifest.setdefault("stages", {})[stage] = {
        "config_sha256": cfg.digest(),
        "artifacts": {f.name: _sha256(f) for f in files},
    }
    return _write_json(path, manifest)


# configuration and model loading ------------------------------------------------

def resolve_config(args, stage: str) -> tuple[RunConfig, Path]:
    """Config from --config, else from the manifest in --out, else defaults (first stage only)."""
    out_hint = Path(args.out) if args.out else None
    if args.config:
        cfg = load(args.config)
    else:
        manifest = (out_hint or Path(validate({}).data["output"])) / "manifest.json"
        if manifest.is_file():
            cfg = validate(json.loads(manifest.read_text())["config"])
        elif stage in ("build-model", "run"):
            cfg = load(None)
        else:
            raise MissingArtifactError(f"no --config given and no manifest at {manifest}")
    cfg = cfg.with_overrides(seed=args.seed, paths=args.paths)
    # --out only locates the directory; it is not part of the computation
    return cfg, out_hint or Path(cfg.data["output"])


def _utility(cfg: RunConfig):
    c = cfg.claim
    return log_utility() if c["utility"] == "log" else power_utility(c["gamma"])


def claim_start(cfg: RunConfig, spec: ModelSpec) -> tuple[float, float]:
    """(x0, alpha_0) of the scenario's claim; neither depends on the k schedule."""
    if cfg.scenario["theorem_part"] == "C":
        return 1.0, float(smooth_bump(np.array([1.0]))[0])
    claim = OptimalClaim.from_spec(_utility(cfg), cfg.claim["y"], spec)
    return claim.mean(), float(claim.alpha(0.0, 0.0))


def load_spec(out: Path, cfg: RunConfig) -> ModelSpec:
    _require(out, "model.json")
    data = json.loads((out / "model.json").read_text())
    if data.get("model_block_sha256") != _model_block_digest(cfg):
        raise ConfigurationError("model.json was built from a different model block; re-run build-model")
    spec = ModelSpec.from_dict(data["spec"])
    return dataclasses.replace(spec, seed=int(cfg.model["seed"]))


def _simulation_meta(out: Path) -> dict:
    _require(out, "simulation.json")
    return json.loads((out / "simulation.json").read_text())


def _maturities(cfg: RunConfig, spec: ModelSpec) -> list[float]:
    top = spec.domain_end - spec.T
    return [float(x) for x in cfg.model["grid"] if x <= top]


# stages --------------------------------------------------------------------------

def stage_build_model(cfg: RunConfig, out: Path) -> list[str]:
    m = cfg.model
    base = build_model(m["a"], m["N"], m["T"], cfg.time_steps, m["seed"], None, m["a_floor"])
    x0, alpha0 = claim_start(cfg, base)
    targets = list(m["tune_for"]) + [cfg.scenario["C"]]
    scenarios = sorted({parse_limit(t) for t in targets})
    log.info("tuning k caps for C in %s (x0=%.6g, alpha0=%.6g)", scenarios, x0, alpha0)
    spec = tune_k_caps(base, [LimitScenario(c) for c in scenarios], x0, alpha0, decay=m["k_cap_decay"])
    uniform = check_uniform_condition(spec)
    i = np.arange(1, spec.N + 1)
    caps = np.minimum(np.abs(spec.lambdas), 1.0 / np.sqrt(1.0 + spec.h2_norms))
    model = {
        "spec": spec.to_dict(),
        "model_block_sha256": _model_block_digest(cfg),
        "tuning": {"x0": x0, "alpha0": alpha0, "limits": [LimitScenario(c).label for c in scenarios]},
        "derived": {
            "c": spec.c, "e": spec.e.tolist(), "mhat": spec.mhat.tolist(), "lambdas": spec.lambdas.tolist(),
            "h2_norms": spec.h2_norms.tolist(), "summability": spec.summability(),
            "uniform_condition": {"passed": uniform.passed, "min_slack": uniform.min_slack},
        },
    }
    files = [_write_json(out / "model.json", model)]
    files.append(write_table(
        out / "model.csv",
        ["i", "lambda", "k", "q", "weighted_h2_norm_sq", "scale_cap", "abs_k_i_sq", "mhat", "e"],
        zip(i, spec.lambdas, spec.k_array, spec.q, spec.h2_norms, caps, np.abs(spec.k_array) * i**2,
            spec.mhat, spec.e),
    ))
    update_manifest(out, cfg, "build-model", files)
    return [] if uniform.passed else ["uniform condition"]


def stage_simulate(cfg: RunConfig, out: Path) -> list[str]:
    spec = load_spec(out, cfg)
    n_paths = cfg.paths
    mats = _maturities(cfg, spec)
    bundle = simulate(spec, "Q", n_paths)
    terminal = bundle.curve_values(bundle.n_steps, mats)
    mean = terminal.mean(axis=0)
    se = terminal.std(axis=0, ddof=1) / math.sqrt(n_paths)
    expected = np.exp(-spec.a * (spec.T + np.asarray(mats)))
    z = (mean - expected) / se
    files = [write_table(out / "martingale.csv", ["maturity", "mean", "se", "expected", "z"],
                         zip(mats, mean, se, expected, z))]
    if cfg.data["export_paths"] > 0:
        files.append(out / "paths.csv")
        write_paths_csv(bundle, files[-1], mats, cfg.data["export_paths"])
    del bundle, terminal

    # density check under P on a disjoint block of path indices
    bundle_p = simulate(spec, "P", n_paths, path_offset=n_paths)
    xi_T = girsanov_density(spec, bundle_p)[:, -1]
    xi_mean, xi_se = float(xi_T.mean()), float(xi_T.std(ddof=1) / math.sqrt(n_paths))
    del bundle_p

    fine = simulate(spec, "P", SDE_CHECK_PATHS, path_offset=2 * n_paths, n_steps=2 * spec.time_steps)
    ratio = float(sde_residual(fine.coarsen(2)).mean() / sde_residual(fine).mean())

    checks = [
        ("martingale_max_abs_z", float(np.max(np.abs(z))), 0.0, 3.0),
        ("density_mean_minus_one_over_se", (xi_mean - 1.0) / xi_se, -3.0, 3.0),
        ("sde_residual_ratio", ratio, 1.2, 2.8),
    ]
    rows = [(name, v, lo, hi, lo <= v <= hi) for name, v, lo, hi in checks]
    files.append(write_table(out / "simulation_checks.csv", ["check", "value", "lower", "upper", "passed"], rows))
    meta = {"measure": "Q", "n_paths": n_paths, "path_offset": 0, "n_steps": spec.time_steps,
            "seed": spec.seed, "maturities": mats, "density_block_offset": n_paths,
            "density_mean": xi_mean, "density_se": xi_se}
    files.append(_write_json(out / "simulation.json", meta))
    update_manifest(out, cfg, "simulate", files)
    return [name for name, _, _, _, ok in rows if not ok]


def _hedged_claim(cfg: RunConfig, spec: ModelSpec, bundle):
    if cfg.scenario["theorem_part"] == "C":
        _, rep, _ = bounded_smooth_claim(spec, None, bundle)
        return rep
    claim = OptimalClaim.from_spec(_utility(cfg), cfg.claim["y"], spec)
    return truncated_claim(claim, cfg.claim["n"], bundle)


def stage_hedge(cfg: RunConfig, out: Path) -> list[str]:
    spec = load_spec(out, cfg)
    meta = _simulation_meta(out)
    n_paths = min(cfg.data["hedge_paths"], meta["n_paths"])
    bundle = simulate(spec, "Q", n_paths)  # the first paths of the simulated set
    rep = _hedged_claim(cfg, spec, bundle)
    port = solve_hedge(rep)
    # bank and risky legs can be far larger than their sum, so errors are
    # measured against the gross position |b p_t(0)| + |risky value|
    scale = max(1.0, float(np.abs(rep.value_path()).max()))
    for step in range(bundle.n_steps + 1):
        bank = np.abs(port.b[:, step] * bundle.curve_values(step, [0.0])[:, 0])
        scale = max(scale, float(np.max(bank + np.abs(port.risky_value_identity(step)))))

    replication = float(np.max(np.abs(port.value(bundle.n_steps) - rep.value)))
    eq_err = val_err = 0.0
    for step in list(range(0, bundle.n_steps, HEDGE_CHECK_STRIDE)) + [bundle.n_steps - 1]:
        value, vol = port.numeric_pairings(step)
        x = rep.integrand(step)
        eq_err = max(eq_err, float(np.max(np.abs(vol - x))) / max(1.0, float(np.abs(x).max())))
        val_err = max(val_err, float(np.max(np.abs(value - port.value(step)))) / scale)
    sf = float(self_financing_residual(port).max())
    rows = [
        ("replication", replication, 1e-10 * scale),
        ("hedge_equations", eq_err, 1e-8),
        ("risky_value_identity", val_err, 1e-8),  # already divided by the scale
        ("self_financing", sf, 1e-10 * scale),
    ]
    rows = [(name, v, tol, v <= tol) for name, v, tol in rows]
    rows.append(("gross_position_scale", scale, None, True))
    files = [write_table(out / "hedge_summary.csv", ["check", "value", "tolerance", "passed"], rows)]
    files.append(out / "portfolio.csv")
    port.write_csv(files[-1], 0)
    update_manifest(out, cfg, "hedge", files)
    return [name for name, _, _, ok in rows if not ok]


def stage_scenario(cfg: RunConfig, out: Path) -> list[str]:
    spec = load_spec(out, cfg)
    _simulation_meta(out)
    sc = cfg.scenario
    scenario = LimitScenario.parse(sc["C"])
    bundle = simulate(spec, "Q", cfg.paths)
    if sc["theorem_part"] == "C":
        ctx = bounded_claim_context(bundle)
    else:
        ctx = optimal_claim_context(bundle, OptimalClaim.from_spec(_utility(cfg), cfg.claim["y"], spec))
    try:
        report = paradox_report(spec, scenario, ctx, thresholds=sc["thresholds"], n_points=sc["sample_points"],
                                crossing=sc["crossing"], n_levels=sc["n_levels"])
    except KScheduleRefinementRequired as exc:
        raise CertificateFailure(f"k schedule: {exc}; add {scenario.label} to model.tune_for") from exc
    seq = scenario_sequence(spec, scenario, ctx)
    tests = default_test_functions(spec)
    c1 = certify_C1(seq, tests)
    c2 = certify_C2(seq, ctx)

    sections = {s.name: s for s in report.sections}
    files = [
        write_table(out / "divergence.csv", ["level", "partial_value", "lower_bound"],
                    sections["divergence"].table),
        write_table(out / "zero_pairing.csv", ["step", "path", "level", "pairing", "gross_scale"],
                    sections["zero pairing"].table),
        write_table(out / "bank_positions.csv", ["level", "bank_position_t0", "limit"],
                    [(n, a, scenario.label) for n, a in sections["bank position limit"].table]),
        write_table(out / "trajectories.csv", ["path", "level", "step", "t", "bank_position"],
                    [(p, n, s, s * bundle.dt, v) for p, n, s, v in sections["bank trajectories"].table]),
    ]
    c1_rows = []
    for j, f in enumerate(tests):
        lo, hi = f.compact.effective_support if f.compact is not None else (None, None)
        c1_rows.append((j, lo, hi, f.p0_coefficient, c1.stabilization[j], c1.support_index[j],
                        c1.stabilization[j] == c1.support_index[j]))
    files.append(write_table(out / "c1.csv", ["test", "support_lo", "support_hi", "p0_coefficient",
                                              "stabilization", "support_index", "match"], c1_rows))
    files.append(write_table(out / "c2.csv", ["level", "dist_sq", "dist_sq_se", "sup_dist_sq", "bound"],
                             zip(c2.levels, c2.dist_sq, c2.dist_sq_se, c2.sup_dist_sq, c2.bound)))
    alpha_stats = alpha_statistics(ctx.alphas, bundle.dt)
    files.append(write_table(out / "alpha_stats.csv", ["statistic", "value"], alpha_stats.items()))
    status = [(s.name, s.passed, s.detail) for s in report.sections]
    status.append(("C1", c1.passed, f"stabilization {c1.stabilization} vs support {c1.support_index}"))
    status.append(("C2", c2.passed, c2.message or "distances non-increasing, within bound, zero at top"))
    files.append(write_table(out / "scenario_status.csv", ["certificate", "passed", "detail"], status))
    failing = [name for name, ok, _ in status if not ok]
    text = [report.summary(),
            f"[{'PASS' if c1.passed else 'FAIL'}] C1: {status[-2][2]}",
            f"[{'PASS' if c2.passed else 'FAIL'}] C2: {status[-1][2]}",
            f"[INFO] alpha: sup {alpha_stats['sup']:.4g}, median per-path sup "
            f"{alpha_stats['per_path_sup_median']:.4g}, min {alpha_stats['min']:.4g} (reported, not certified)",
            f"paths {bundle.n_paths}, steps {bundle.n_steps}, seed {spec.seed}",
            "overall: " + ("PASS" if not failing else "FAIL (" + ", ".join(failing) + ")")]
    files.append(out / "certificate.txt")
    files[-1].write_text("\n".join(text) + "\n")
    update_manifest(out, cfg, "scenario", files)
    return failing


def _floats(rows, key):
    return np.array([float(r[key]) if r[key] != "" else np.nan for r in rows])


def stage_report(cfg: RunConfig, out: Path) -> list[str]:
    _require(out, "manifest.json", "certificate.txt", "divergence.csv", "bank_positions.csv",
             "trajectories.csv", "c2.csv")
    sc = cfg.scenario
    figures = []
    div = read_table(out / "divergence.csv")
    lower = _floats(div, "lower_bound")
    if sc["theorem_part"] == "C" and parse_limit(sc["C"]) == -math.inf:
        from .lab import PARTC_THRESHOLDS as thresholds
        xlabel = "integration endpoint x"
    else:
        from .lab import SERIES_THRESHOLDS as thresholds
        xlabel = "truncation level n"
    thresholds = sc["thresholds"] or thresholds
    figures.append(plotting.divergence_figure(_floats(div, "level"), _floats(div, "partial_value"), thresholds,
                                              out / "divergence.png",
                                              None if np.all(np.isnan(lower)) else lower, xlabel))
    bank = read_table(out / "bank_positions.csv")
    figures.append(plotting.bank_position_figure(_floats(bank, "level"), _floats(bank, "bank_position_t0"),
                                                 parse_limit(sc["C"]), out / "bank_positions.png"))
    traj = read_table(out / "trajectories.csv")
    rows = np.column_stack([_floats(traj, k) for k in ("path", "level", "step", "bank_position")])
    figures.append(plotting.trajectory_figure(rows, out / "trajectories.png", cfg.model["dt"]))
    c2 = read_table(out / "c2.csv")
    figures.append(plotting.c2_figure(_floats(c2, "level"), _floats(c2, "dist_sq"), _floats(c2, "bound"),
                                      out / "c2.png"))
    if (out / "martingale.csv").is_file():
        mt = read_table(out / "martingale.csv")
        figures.append(plotting.martingale_figure(*(_floats(mt, k) for k in ("maturity", "mean", "se", "expected")),
                                                  out / "martingale.png"))
    if (out / "portfolio.csv").is_file():
        pf = read_table(out / "portfolio.csv")
        figures.append(plotting.portfolio_figure(*(_floats(pf, k) for k in ("t", "b", "risky_value", "total_value")),
                                                 out / "portfolio.png"))

    manifest = json.loads((out / "manifest.json").read_text())
    lines = [f"config sha256 {manifest['config_sha256']}", f"seed {manifest['seed']}", ""]
    for name in ("simulation_checks.csv", "hedge_summary.csv"):
        if (out / name).is_file():
            lines.append(name)
            for r in read_table(out / name):
                lines.append(f"  {r['check']}: {r['value']} ({'pass' if r['passed'] == 'true' else 'FAIL'})")
            lines.append("")
    lines.append((out / "certificate.txt").read_text().rstrip())
    lines.append("")
    lines.append("figures: " + ", ".join(f.name for f in figures))
    files = [out / "report.txt"]
    files[0].write_text("\n".join(lines) + "\n")
    update_manifest(out, cfg, "report", files + figures)
    return []


STAGE_FUNCS = {
    "build-model": stage_build_model,
    "simulate": stage_simulate,
    "hedge": stage_hedge,
    "scenario": stage_scenario,
    "report": stage_report,
}


def run_stage(name: str, cfg: RunConfig, out: Path) -> list[str]:
    if name != "build-model" and not out.is_dir():
        raise MissingArtifactError(f"output directory {out} does not exist")
    out.mkdir(parents=True, exist_ok=True)
    log.info("stage %s -> %s", name, out)
    return [f"{name}: {f}" for f in STAGE_FUNCS[name](cfg, out)]


def run_pipeline(cfg: RunConfig, out: Path) -> list[str]:
    """All stages in order; certificate failures are collected, not fatal."""
    failing = []
    for name in STAGES:
        failing += run_stage(name, cfg, out)
    return failing


# entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (default: manifest in --out, else defaults)")
    common.add_argument("--out", help="output directory (default: the config's 'output')")
    common.add_argument("--seed", type=int, help="override model.seed")
    common.add_argument("--paths", type=int, help="override the Monte Carlo path count")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="genhedge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("run",):
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.paths is not None and args.paths < 2:
            raise ConfigurationError("--paths must be at least 2")
        cfg, out = resolve_config(args, args.command)
        if args.command == "run":
            failing = run_pipeline(cfg, out)
        else:
            failing = run_stage(args.command, cfg, out)
    except (ConfigurationError, DomainError, MissingArtifactError) as exc:
        print(f"genhedge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CertificateFailure as exc:
        print(f"genhedge: certificate failure: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except GenHedgeError as exc:
        print(f"genhedge: certificate failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    if failing:
        print("genhedge: certificate failure: " + "; ".join(failing), file=sys.stderr)
        return EXIT_CERTIFICATE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
