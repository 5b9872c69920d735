"""Command-line entry points: verification, self-tests, simulations,
twin experiments, and bound evaluation, with deterministic artifacts.

Every artifact embeds the config hash and seed; replaying a subcommand
with the same config and seed yields byte-identical CSV output.
Exit codes: 0 success, 1 check failures (artifacts still written),
2 configuration or domain errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import growth, stability, svgplot, transport, vlasov


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    try:
        if path.endswith(".json"):
            with open(path) as fh:
                return json.load(fh)
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def artifact_header(config: dict, seed: int):
    return (f"config_hash={config_hash(config)}", f"seed={seed}")


def build_growth(section: dict):
    family = section.get("family", "bounded")
    if family == "bounded":
        gf = growth.bounded()
    elif family == "orlicz":
        gf = growth.orlicz(float(section.get("alpha", 2.0)))
    elif family == "iterlog":
        gf = growth.iterlog(int(section.get("n", 1)))
    elif family == "table":
        gf = growth.tabulated(section["table"])
    else:
        raise ConfigError(f"unknown growth family {family!r}")
    p = float(section.get("p", 2.0))
    d = int(section.get("d", 1))
    c_small = section.get("c_small")
    consts = growth.default_constants(
        gf, p, d, None if c_small is None else float(c_small))
    return gf, consts, p, d


def build_bound_config(section: dict) -> stability.BoundConfig:
    gf, consts, p, d = build_growth(section)
    kwargs = {}
    for key in ("c_d", "c_hw_max", "b_sup", "c_b"):
        if key in section:
            kwargs[key] = float(section[key])
    if "moment" in section:
        gf_bar, consts_bar, _, _ = build_growth(
            {**section["moment"], "p": p, "d": d})
        kwargs["gf_bar"] = gf_bar
        kwargs["consts_bar"] = consts_bar
    return stability.BoundConfig(p=p, gf=gf, consts=consts, d=d,
                                 sigma=int(section.get("sigma", -1)), **kwargs)


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def cmd_verify_growth(args) -> int:
    section = {"family": args.family, "alpha": args.alpha, "n": args.n,
            "p": args.p, "d": args.d}
    gf, consts, p, d = build_growth(section)
    report = growth.verify_assumptions(gf, p, d, consts)
    payload = {
        "family": args.family, "p": p, "d": d,
        "c_small": consts.c_small, "C_log": consts.c_log,
        "C_bar": consts.c_bar, "C_phi": consts.c_phi,
        "checks": report["checks"], "all_passed": report["all_passed"],
        "config_hash": config_hash(section),
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "verify_growth.json"), payload)
    json.dump(payload, sys.stdout, indent=2, sort_keys=True, default=float)
    sys.stdout.write("\n")
    return 0 if report["all_passed"] else 1


def cmd_ot_selftest(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = []
    # small instances against exhaustive permutation search
    import itertools
    for trial in range(20):
        n = int(rng.integers(2, 7))
        mu = transport.EmpiricalMeasure(rng.random((n, 1)),
                                        rng.normal(size=(n, 1)),
                                        np.full(n, 1 / n))
        nu = transport.EmpiricalMeasure(rng.random((n, 1)),
                                        rng.normal(size=(n, 1)),
                                        np.full(n, 1 / n))
        _val, plan = transport.wasserstein_p(mu, nu, args.p)
        cpos, cvel = transport.cost_matrices(mu, nu, args.p)
        total = cpos + cvel
        best = min(sum(total[i, pi[i]] for i in range(n)) / n
                   for pi in itertools.permutations(range(n)))
        if abs(plan.total_cost() - best) > 1e-12:
            failures.append(f"brute-force mismatch on trial {trial}")
    # sinkhorn against the exact solver
    n = args.n
    mu = transport.EmpiricalMeasure(rng.random((n, 1)), rng.random((n, 1)),
                                    np.full(n, 1 / n))
    nu = transport.EmpiricalMeasure(rng.random((n, 1)), rng.random((n, 1)),
                                    np.full(n, 1 / n))
    _exact_val, exact_plan = transport.wasserstein_p(mu, nu, args.p)
    _approx_val, approx_plan = transport.sinkhorn_wp(mu, nu, args.p)
    rel = abs(approx_plan.total_cost() - exact_plan.total_cost()) \
        / exact_plan.total_cost()
    if rel > 0.02:
        failures.append(f"sinkhorn relative error {rel:.4f} above 2%")
    marg = approx_plan.marginal_errors(mu, nu)
    if max(marg) > 1e-10:
        failures.append(f"rounded marginals off by {max(marg):g}")
    payload = {"seed": args.seed, "n": n, "p": args.p,
               "sinkhorn_rel_error": rel, "sinkhorn_gap": approx_plan.gap,
               "marginal_errors": list(marg), "failures": failures,
               "passed": not failures}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "ot_selftest.json"), payload)
        header = artifact_header({"seed": args.seed, "n": n, "p": args.p},
                                 args.seed)
        approx_plan.to_csv(os.path.join(args.out, "sinkhorn_plan.csv"),
                           header_lines=header)
    json.dump(payload, sys.stdout, indent=2, sort_keys=True, default=float)
    sys.stdout.write("\n")
    return 0 if not failures else 1


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    sim = config.get("sim", config)
    seed = int(sim.get("seed", 0))
    header = artifact_header(config, seed)
    os.makedirs(args.out, exist_ok=True)

    d = int(sim.get("d", 1))
    ens = vlasov.make_initial(sim["initial"]["kind"],
                              sim["initial"].get("params", {}),
                              int(sim["N"]), seed, d=d,
                              sigma=int(sim.get("sigma", -1)))
    grid_n = int(sim["grid_n"])
    dt = float(sim["dt"])
    n_steps = int(round(float(sim["T"]) / dt))
    output_every = int(sim.get("output_every", max(1, n_steps // 10)))
    fs = vlasov.solve_fields(ens, grid_n)

    def emit(index, step):
        t = step * dt
        measure = transport.EmpiricalMeasure(ens.x, ens.v, ens.w)
        measure.to_csv(os.path.join(args.out, f"snapshot_{index:04d}.csv"),
                       header_lines=header)
        write_json(os.path.join(args.out, f"fields_{index:04d}.json"), {
            "t": t, "grid_n": grid_n,
            "energy": vlasov.total_energy(ens, fs),
            "momentum": list(map(float, vlasov.total_momentum(ens))),
            "e_inf": float(np.max(np.sqrt(sum(g ** 2 for g in fs.grad_u)))),
            "rho_min": float(np.min(fs.rho)), "rho_max": float(np.max(fs.rho)),
            "config_hash": config_hash(config), "seed": seed,
        })

    emit(0, 0)
    index = 1
    for step in range(1, n_steps + 1):
        ens, fs = vlasov.step_vp(ens, fs, dt,
                                 c_cfl=float(sim.get("c_cfl", 0.5)))
        if step % output_every == 0 or step == n_steps:
            emit(index, step)
            index += 1
    write_json(os.path.join(args.out, "summary.json"), {
        "snapshots": index, "steps": n_steps,
        "config_hash": config_hash(config), "seed": seed,
    })
    return 0


def _emit_twin_artifacts(report, out, config, seed):
    header = artifact_header(config, seed)
    report.metadata["config_hash"] = config_hash(config)
    report.to_csv(os.path.join(out, "report.csv"), header_lines=header)
    report.write_metadata(os.path.join(out, "metadata.json"))
    ts = [r["t"] for r in report.rows]
    w = [r["Wpp_f"] for r in report.rows]
    svgplot.line_plot(
        os.path.join(out, "distances.svg"),
        [("W_p^p(f1,f2)", ts, w),
         ("D_p", ts, [r["Dp"] for r in report.rows]),
         ("bound", ts, [r["bound"] for r in report.rows]),
         ("bound (fitted)", ts, [r["bound_fitted"] for r in report.rows])],
        title="phase-space distance vs bounds", xlabel="t",
        ylabel="distance^p", logy=True)
    loglog = [(t, math.log(abs(math.log(v))))
              for t, v in zip(ts, w) if 0 < v < 1 and abs(math.log(v)) > 0]
    svgplot.line_plot(
        os.path.join(out, "loglog.svg"),
        [("log|log W_p^p|", [q[0] for q in loglog],
          [q[1] for q in loglog])],
        title="double-log distance", xlabel="t", ylabel="log|log W|")


def cmd_twin(args) -> int:
    config = load_config(args.config)
    cfg = build_bound_config(config.get("bound", {}))
    sim = config["sim"]
    perturbation = config["perturbation"]
    seed = int(sim.get("seed", 0))
    os.makedirs(args.out, exist_ok=True)
    report = stability.run_twin_experiment(cfg, sim, perturbation,
                                           threads=args.threads)
    _emit_twin_artifacts(report, args.out, config, seed)
    bad = report.control_violations()
    return 0 if not bad else 1


def cmd_vpb_twin(args) -> int:
    config = load_config(args.config)
    bound_section = config.get("bound", {})
    cfg = build_bound_config(bound_section)
    if cfg.b_sup is None:
        raise ConfigError("vpb-twin needs bound.b_sup")
    b_value = float(config.get("B", {}).get("value", cfg.b_sup))
    bfield = vlasov.MagneticField(
        fn=lambda t, x, _b=b_value: np.full(x.shape[0], _b),
        sup_norm=abs(b_value))
    sim = config["sim"]
    perturbation = config["perturbation"]
    seed = int(sim.get("seed", 0))
    os.makedirs(args.out, exist_ok=True)
    report, extras = stability.run_vpb_twin(cfg, sim, perturbation, bfield,
                                            threads=args.threads)
    _emit_twin_artifacts(report, args.out, config, seed)
    with open(os.path.join(args.out, "velocity_bound.csv"), "w") as fh:
        for line in artifact_header(config, seed):
            fh.write(f"# {line}\n")
        fh.write("t,margin\n")
        for t, m in zip(extras["times"], extras["velocity_margins"]):
            fh.write(f"{repr(float(t))},{repr(float(m))}\n")
    ok = all(m >= 0 for m in extras["velocity_margins"]) \
        and not report.control_violations()
    return 0 if ok else 1


def cmd_bounds(args) -> int:
    config = load_config(args.config)
    section = config.get("bound", config)
    cfg = build_bound_config(section)
    w0pp = float(section.get("W0pp", config.get("W0pp", 1e-8)))
    j_const = float(section.get("J", config.get("J", 1.0)))
    t_max = float(section.get("T", config.get("T", 2.0)))
    n_t = int(section.get("n_t", config.get("n_t", 41)))
    ts = np.linspace(0.0, t_max, n_t)

    def jint(t):
        return j_const * t

    curve = stability.bound_curve(w0pp, jint, cfg)
    family = cfg.gf.family
    closed = None
    if family in ("bounded", "orlicz", "iterlog"):
        if family == "orlicz" and cfg.gf.alpha == 1:
            closed = stability.closed_form_bounds("orlicz1", w0pp, jint, cfg.p)
        elif family == "orlicz":
            closed = stability.closed_form_bounds("orlicz", w0pp, jint, cfg.p,
                                                  alpha=cfg.gf.alpha)
        elif family == "iterlog":
            closed = stability.closed_form_bounds("iterlog", w0pp, jint,
                                                  cfg.p, n=cfg.gf.n)
        else:
            closed = stability.closed_form_bounds("bounded", w0pp, jint, cfg.p)

    rows = []
    for t in ts:
        try:
            b = curve(float(t))
            adm = True
        except growth.RegimeError:
            b, adm = float("nan"), False
        c = float("nan")
        if closed is not None:
            try:
                c = closed(float(t))
            except growth.RegimeError:
                pass
        rows.append((float(t), b, c, adm))

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "bounds.csv"), "w") as fh:
        for line in artifact_header(config, 0):
            fh.write(f"# {line}\n")
        fh.write("t,bound,closed_form,admissible\n")
        for t, b, c, adm in rows:
            fh.write(f"{repr(t)},{repr(b)},{repr(c)},{1 if adm else 0}\n")
    svgplot.line_plot(
        os.path.join(args.out, "bounds.svg"),
        [("Osgood composition", [r[0] for r in rows], [r[1] for r in rows]),
         ("closed form", [r[0] for r in rows], [r[2] for r in rows])],
        title=f"stability bound ({family})", xlabel="t", ylabel="bound",
        logy=True)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinwass",
        description="kinetic-Wasserstein stability laboratory")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("KINWASS_THREADS", "1")),
                        help="worker threads for snapshot diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    vg = sub.add_parser("verify-growth", help="check growth-function "
                        "assumptions and constants")
    vg.add_argument("--family", required=True,
                    choices=("bounded", "orlicz", "iterlog"))
    vg.add_argument("--alpha", type=float, default=2.0)
    vg.add_argument("--n", type=int, default=1)
    vg.add_argument("--p", type=float, default=2.0)
    vg.add_argument("--d", type=int, default=1)
    vg.add_argument("--out", default=None)
    vg.set_defaults(fn=cmd_verify_growth)

    ot = sub.add_parser("ot-selftest", help="exact and entropic transport "
                        "solver self-test")
    ot.add_argument("--n", type=int, default=64)
    ot.add_argument("--p", type=float, default=2.0)
    ot.add_argument("--seed", type=int, default=0)
    ot.add_argument("--out", default=None)
    ot.set_defaults(fn=cmd_ot_selftest)

    for name, fn, help_text in (
            ("simulate", cmd_simulate, "single-ensemble particle run"),
            ("twin", cmd_twin, "twin stability experiment"),
            ("bounds", cmd_bounds, "evaluate bound curves"),
            ("vpb-twin", cmd_vpb_twin, "magnetized twin experiment")):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", required=True)
        sp.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, growth.RegimeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
