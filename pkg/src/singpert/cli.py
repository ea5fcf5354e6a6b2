"""Command-line scenario runner.

    singpert run <config> --out <dir> [--seed N] [--t-final T] [--quiet]
    singpert check <config>

Exit status: 0 all checks pass, 1 a check failed, 2 configuration error,
3 a run diverged or missed its convergence target when it was expected to
converge.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .apps import objectives as objmod
from .apps.planar import (
    ScenarioBundle,
    example1_c0_sweep,
    example1_scenario,
    feedback_optimization_scenario,
    integral_control_scenario,
)
from .apps.source_seeking import (
    SourceSeekingLoop,
    SourceSeekingScenario,
    default_adjacency,
    offsets_from_anchors,
    shipped_source_seeking,
    source_seeking_scenario,
    square_formation,
)
from .certificates import (
    build_gtilde_s,
    build_max_lyapunov,
    check_decrease_along_trajectory,
    check_gradients,
    check_rho_s0,
    derive_rho_s0,
    make_rng,
    validate_g_breve,
    verify_assumption2,
    verify_theorem1,
)
from .comparison import curve_from_spec, log_grid, power
from .config import ScenarioConfig, load_config, resolve_factory
from .errors import ConfigError, SingPertError, StepUnderflowError
from .report import ConditionResult, Report
from .signals import signal_from_spec
from .system import Method, SimConfig, check_steady_state_map, simulate, simulate_batch, write_trajectory_csv

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

_OBJECTIVES = {"quadratic": objmod.quadratic_objective, "soft_quadratic": objmod.soft_quadratic_objective}


# -- scenario construction -----------------------------------------------------

def _call(factory, params, label):
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {label}: {exc}", "parameters") from None
    except ValueError as exc:
        raise ConfigError(f"invalid parameters for {label}: {exc}", "parameters") from None


def _source_seeking(params):
    p = dict(params)
    kind = p.pop("objective", "quadratic")
    if kind not in _OBJECTIVES:
        raise ConfigError(f"parameters.objective must be one of {sorted(_OBJECTIVES)}", "parameters.objective")
    obj = _OBJECTIVES[kind](p.pop("p_star", [3.0, -2.0]))
    anchors = p.pop("anchors", None)
    if anchors is None and "half_side" in p:
        anchors = square_formation(p.pop("half_side")).tolist()
    if anchors is None:
        scn = _call(shipped_source_seeking, {"objective": obj, **p}, "source_seeking")
    else:
        d = offsets_from_anchors(anchors)
        adjacency = np.asarray(p.pop("adjacency", default_adjacency(d.shape[0])), dtype=float)
        scn = _call(SourceSeekingScenario, {"d_offsets": d, "adjacency": adjacency, "objective": obj, **p},
                    "source_seeking")
    return source_seeking_scenario(scn)


def _apply_certificate_overrides(bundle, table):
    if not table:
        return bundle
    table = dict(table)
    cond_table = table.pop("conditions", {})
    cert_fields = {f.name for f in dataclasses.fields(bundle.certificate)}
    changes = {}
    for key, spec in table.items():
        if key not in cert_fields or key.startswith("V_") or key.startswith("grad") or key == "batched":
            raise ConfigError(f"certificate.{key} is not an overridable curve", f"certificate.{key}")
        changes[key] = _curve(spec, f"certificate.{key}")
    cert = bundle.certificate.replace(**changes) if changes else bundle.certificate
    cond = bundle.conditions
    if cond_table:
        if cond is None:
            raise ConfigError("scenario has no theorem conditions to override", "certificate.conditions")
        names = {"rho_lower_s", "gamma_f", "rho_upper_s", "rho_lower_f"}
        for key in cond_table:
            if key not in names:
                raise ConfigError(f"certificate.conditions.{key} is not a condition curve",
                                  f"certificate.conditions.{key}")
        cond = dataclasses.replace(cond, **{k: _curve(v, f"certificate.conditions.{k}")
                                            for k, v in cond_table.items()})
    return dataclasses.replace(bundle, certificate=cert, conditions=cond)


def _curve(spec, field):
    try:
        return curve_from_spec(spec)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{field}: {exc}", field) from None


def build_scenario(cfg: ScenarioConfig):
    """ScenarioBundle for planar/custom scenarios, SourceSeekingLoop otherwise."""
    params = cfg.parameters
    if cfg.scenario == "source_seeking":
        return _source_seeking(params)
    if cfg.scenario == "example1_saturated":
        bundle = _call(example1_scenario, params, cfg.scenario)
    elif cfg.scenario == "example2_feedback_opt":
        bundle = _call(feedback_optimization_scenario, params, cfg.scenario)
    elif cfg.scenario == "integral_control":
        bundle = _call(integral_control_scenario, params, cfg.scenario)
    else:
        bundle = _call(resolve_factory(cfg.factory), params, cfg.factory)
        if not isinstance(bundle, ScenarioBundle):
            raise ConfigError(f"factory {cfg.factory} must return a ScenarioBundle", "factory")
    bundle = _apply_certificate_overrides(bundle, cfg.certificate)
    if cfg.inputs:
        sigs = {}
        for ch, dim in (("d", bundle.system.p), ("w", bundle.system.q)):
            if ch in cfg.inputs:
                if dim == 0:
                    raise ConfigError(f"scenario has no {ch} input channel", f"inputs.{ch}")
                try:
                    sigs[f"{ch}_signal"] = signal_from_spec(cfg.inputs[ch])
                except (KeyError, ValueError) as exc:
                    raise ConfigError(f"inputs.{ch}: {exc}", f"inputs.{ch}") from None
        bundle = dataclasses.replace(bundle, system=bundle.system.with_inputs(**sigs))
    return bundle


# -- checks ------------------------------------------------------------------------

def _grid(checks):
    g = checks.get("grid")
    if g is None:
        return None
    try:
        return log_grid(float(g["lo"]), float(g["hi"]), int(g.get("num", 200)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"checks.grid: {exc}", "checks.grid") from None


def planar_checks(cfg, bundle):
    checks = cfg.checks
    reports = []
    grid = _grid(checks)
    cond = bundle.conditions
    if cond is not None and grid is not None:
        cond = dataclasses.replace(cond, grid=grid)
    sys_ = bundle.system
    x_eq, _ = sys_.equilibrium()
    xs = x_eq + make_rng(cfg.seed, 7).uniform(-bundle.x_box, bundle.x_box, size=(200, sys_.n))
    ss = check_steady_state_map(sys_, xs)
    basic = Report("model")
    basic.add(ConditionResult("steady_state_map", ss.passed, ss.tol - ss.max_residual,
                              {"x": ss.witness_x}, len(xs)))
    basic.add(ConditionResult("equilibrium", ss.equilibrium_residual <= ss.tol,
                              ss.tol - ss.equilibrium_residual, None, 1))
    reports.append(basic)
    cert = bundle.certificate
    samples = None
    if cert is not None and (checks.get("assumption2", True) or checks.get("theorem1", True)):
        samples = bundle.samples(int(checks.get("samples", 10_000)), cfg.seed)
    if cert is not None and checks.get("assumption2", True):
        reports.append(verify_assumption2(sys_, cert, samples))
    if cert is not None and checks.get("gradients", True):
        reports.append(check_gradients(cert, bundle.samples(int(checks.get("gradient_samples", 1000)),
                                                            cfg.seed, stream=2)))
    if cond is not None and checks.get("theorem1", True):
        reports.append(verify_theorem1(sys_, cert, cond, samples))
    if checks.get("c0_max", cfg.scenario == "example1_saturated"):
        if cfg.scenario != "example1_saturated":
            raise ConfigError("checks.c0_max is only defined for example1_saturated", "checks.c0_max")
        c0, rho, bounds = example1_c0_sweep(grid=grid)
        rep = Report("c0_max", meta={"c0_max": f"{c0:.10g}", "rho_at_max": f"{rho:g}",
                                     "family_size": len(bounds)})
        rep.add(ConditionResult("c0_max_feasible", c0 > 0, c0, {"rho": rho}, len(bounds)))
        c0_cfg = float(cfg.parameters.get("c0", 0.4))
        rep.add(ConditionResult("configured_c0_admissible", 0 < c0_cfg < c0, c0 - c0_cfg, {"c0": c0_cfg}, 1))
        reports.append(rep)
    if checks.get("rho_synthesis", cfg.scenario == "example2_feedback_opt") and cond is not None \
            and bundle.g_breve is not None:
        rep = Report("rho_synthesis")
        rep.add(validate_g_breve(sys_, bundle.g_breve, samples or bundle.samples(10_000, cfg.seed)))
        g_tilde = build_gtilde_s(cert, cond.gamma_f, bundle.g_breve)
        rho0 = derive_rho_s0(cond.rho_upper_s, g_tilde, cond.grid)
        rep.meta["rho_s0_at_1"] = f"{float(rho0(1.0)):.10g}"
        rep.meta["g_tilde_at_1"] = f"{float(g_tilde(1.0)):.10g}"
        coeff = float(cfg.parameters.get("rho_coeff", 0.004))
        if cfg.parameters.get("use_nonlinear_gain", True):
            rep.add(dataclasses.replace(check_rho_s0(power(coeff, 2.0), cond.rho_upper_s, g_tilde, cond.grid),
                                        name="configured_gain_admissible"))
        reports.append(rep)
    return reports


def network_checks(cfg, loop: SourceSeekingLoop):
    scn, mats = loop.scn, loop.mats
    checks = cfg.checks
    rep = Report("network", meta={"agents": scn.N, "dimension": scn.n, "mu": scn.mu, "c0": scn.c0})
    res = mats.lyapunov_residual()
    rep.add(ConditionResult("lyapunov_equation", res <= 1e-8, 1e-8 - res, None, 1))
    rate = mats.slowest_rate()
    rep.add(ConditionResult("hurwitz", rate > 0, rate, None, mats.A.shape[0]))
    s = float(np.linalg.norm(scn.d0.sum(axis=0)))
    rep.add(ConditionResult("offsets_balanced", s <= 1e-15, 1e-15 - s, None, scn.N))
    rng = make_rng(cfg.seed, 7)
    for label, system, dim in (("full", loop.full_system, scn.N * scn.n), ("reduced", loop.reduced_system, scn.n)):
        x_eq, _ = system.equilibrium()
        ss = check_steady_state_map(system, x_eq + rng.uniform(-3, 3, size=(20, dim)), tol=1e-10)
        rep.add(ConditionResult(f"steady_state_map_{label}", ss.passed, ss.tol - ss.max_residual,
                                {"x": ss.witness_x}, 20))
    if checks.get("lemma1", True):
        obj = scn.objective
        pairs = objmod.random_pairs(make_rng(cfg.seed, 8), 1000, scn.n)
        rep.add(objmod.lemma1_check(obj.h, obj.grad, obj.theta, pairs))
        rep.add(objmod.strong_convexity_check(obj, pairs))
    return [rep]


def run_checks(cfg, scenario):
    if isinstance(scenario, SourceSeekingLoop):
        return network_checks(cfg, scenario) if cfg.checks.get("network", True) else []
    return planar_checks(cfg, scenario)


# -- runs --------------------------------------------------------------------------

def _workers(cfg):
    return int(cfg.run.get("workers", min(4, os.cpu_count() or 1)))


def _planar_run(cfg, bundle, out, reports):
    ics = [(np.array([p[0]], float), np.array([p[1]], float)) for p in cfg.run.get("initial_conditions", [])]
    rnd = cfg.run.get("random_initial")
    if rnd:
        ics += bundle.initial_conditions(int(rnd["count"]), cfg.seed)
    if not ics:
        raise ConfigError("run needs run.initial_conditions or run.random_initial", "run.initial_conditions")
    trajs = simulate_batch(bundle.system, ics, cfg.simulation, workers=_workers(cfg))
    x_eq, z_eq = bundle.system.equilibrium()
    tol = float(cfg.run.get("converge_tol", 1e-3))
    V = None
    if bundle.conditions is not None and bundle.certificate is not None and cfg.run.get("lyapunov_columns", True):
        V = build_max_lyapunov(bundle.certificate, bundle.conditions.sigma(bundle.certificate))
    conv = Report("run", meta={"trajectories": len(trajs), "backend": trajs[0].backend,
                               "t_final": cfg.simulation.t_final})
    decrease = []
    finals = []
    for k, tr in enumerate(trajs):
        if V is not None:
            dr = check_decrease_along_trajectory(tr, V)
            tr.lyapunov = dr.values
            decrease.append(dr)
        write_trajectory_csv(tr, out / f"trajectory_{k:03d}.csv")
        finals.append(float(tr.distance_to(x_eq, z_eq)[-1]) if not tr.diverged else np.inf)
    worst = int(np.argmax(finals))
    converged = all(f <= tol for f in finals)
    conv.meta["max_final_distance"] = f"{finals[worst]:.6g}"
    if any(t.diverged for t in trajs):
        conv.meta["diverged"] = sum(t.diverged for t in trajs)
    if cfg.checks.get("decrease", True) and decrease:
        bad = [i for i, d in enumerate(decrease) if not d.passed]
        total = sum(d.violations for d in decrease)
        worst_rise = max(d.worst_increase for d in decrease)
        conv.add(ConditionResult("lyapunov_decrease", not bad, -worst_rise,
                                 {"trajectory": bad[0]} if bad else None, len(decrease), f"{total} violations"))
    reports.append(conv)
    expect = cfg.run.get("expect_converge", True)
    msg = None
    if expect and not converged:
        x0, z0 = ics[worst]
        msg = (f"trajectory {worst} from x={x0.tolist()}, z={z0.tolist()} ends {finals[worst]:.3g} from the "
               f"equilibrium (tolerance {tol:g}) at t={cfg.simulation.t_final:g}")
    return msg


def _source_run(cfg, loop, out, reports):
    sim = cfg.simulation
    traj = loop.run(sim.t_final, config=sim)
    loop.write_agent_csv(traj, out / "agents.csv")
    write_trajectory_csv(traj, out / "trajectory_000.csv")
    summ = loop.summarize(traj)
    with open(out / "summary.txt", "w") as fh:
        fh.writelines(f"{k}: {v}\n" for k, v in summ.as_dict().items())
    rep = Report("run", meta={k: v for k, v in summ.as_dict().items()})
    rep.add(ConditionResult("formation_velocity_sum", summ.max_formation_velocity_sum <= 1e-12,
                            1e-12 - summ.max_formation_velocity_sum, None, len(traj)))
    rep.add(ConditionResult("formation_bounded", summ.formation_bounded, summ.max_formation_error, None, len(traj)))
    if cfg.run.get("consistency", True):
        cs = loop.consistency_system()
        x0, z0 = loop.default_initial_state()
        z0 = np.concatenate([z0, loop.reduce_estimator(z0)])
        horizon = min(sim.t_final, 100.0)
        tc = simulate(cs, x0, z0, SimConfig(horizon, method=Method.RK45_ADAPTIVE, rtol=1e-10, atol=1e-13,
                                            max_step=0.5))
        Nn = loop.scn.N * loop.scn.n
        gap = float(np.abs(tc.z[:, :Nn] - tc.z[:, 2 * Nn:3 * Nn]).max())
        rep.add(ConditionResult("full_vs_reduced", gap <= 1e-8, 1e-8 - gap, None, len(tc)))
    reports.append(rep)
    if cfg.run.get("expect_converge", True) and not summ.remains_in_ball:
        return (f"average position ends {summ.final_error:.3g} from the source and does not remain within "
                f"{summ.p_epsilon:g} over the final quarter")
    return None


# -- entry points ------------------------------------------------------------------

def _emit(reports, out, quiet):
    text = "".join(r.to_text() + "\n" for r in reports)
    kv = "".join(r.to_kv() for r in reports)
    if out is not None:
        (out / "report.txt").write_text(text)
        (out / "report.kv").write_text(kv)
    if not quiet:
        sys.stdout.write(text)


def _first_failure(reports):
    for r in reports:
        f = r.first_failure()
        if f is not None:
            return r, f
    return None, None


def cmd_check(args):
    cfg = load_config(args.config, seed=args.seed)
    scenario = build_scenario(cfg)
    reports = run_checks(cfg, scenario)
    _emit(reports, None, args.quiet)
    rep, fail = _first_failure(reports)
    if fail is not None:
        print(f"check failed: {rep.title}.{fail.name} margin {fail.worst_margin:.6g} at {fail.witness_text()}",
              file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_run(args):
    cfg = load_config(args.config, seed=args.seed, t_final=args.t_final)
    scenario = build_scenario(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = run_checks(cfg, scenario)
    try:
        if isinstance(scenario, SourceSeekingLoop):
            runtime_msg = _source_run(cfg, scenario, out, reports)
        else:
            runtime_msg = _planar_run(cfg, scenario, out, reports)
    except StepUnderflowError as exc:
        runtime_msg = str(exc)
    manifest = {"version": __version__, "seed": cfg.seed, "backend": kernels.BACKEND}
    (out / "manifest.toml").write_text(cfg.to_toml(manifest))
    _emit(reports, out, args.quiet)
    if runtime_msg:
        print(f"run did not converge: {runtime_msg}", file=sys.stderr)
        return EXIT_RUNTIME
    rep, fail = _first_failure(reports)
    if fail is not None:
        print(f"check failed: {rep.title}.{fail.name} margin {fail.worst_margin:.6g} at {fail.witness_text()}",
              file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="singpert", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run checks and simulations, writing artifacts to --out")
    r.add_argument("config")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--t-final", type=float, dest="t_final")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("check", help="verification only, no simulation")
    c.add_argument("config")
    c.add_argument("--seed", type=int)
    c.add_argument("--quiet", action="store_true")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        where = f" [{exc.field}]" if exc.field else ""
        print(f"configuration error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SingPertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
