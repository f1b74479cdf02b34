"""
Command-line front end.

Every subcommand resolves one project configuration (built-in defaults,
then an optional JSON file, then ``--set dotted.path=value`` overrides),
writes its artifacts plus a ``manifest.json`` carrying the configuration
hash into the output directory, and exits with 0 on success, 1 on a
domain or configuration error and 2 when a solver does not converge.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (BoomError, ConfigError, ConvergenceError, IntegrationError,
                     VerificationError)
from .integrators import format_float, write_csv_columns

EXIT_OK, EXIT_DOMAIN, EXIT_SOLVER = 0, 1, 2

DEFAULTS = {
    "plant": None,
    "drive": None,
    "ocp": {},
    "region": {"alpha": 5.0, "rho": 100.0, "theta": math.pi / 6},
    "controller": {"T_ctrl": 0.01, "substeps": 10, "theta_error": "integrate",
                   "feedforward": "mean"},
    "sweep": {"alphas": [1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 16.0, 20.0], "robust": False,
              "spread": 0.2},
    "simulate": {"levels": [0.2, 0.35, 0.5, 0.65], "hold": 0.5},
    "identify": {"t_s": 0.001, "delay": 0.0003, "n": 2000, "noise": 0.0},
    "seed": 0,
    "output": "out",
}


# ---------------------------------------------------------------------------
# configuration


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    """Apply one ``dotted.path=value`` override in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    path, _, raw = assignment.partition("=")
    keys = path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        if node.get(k) is None:
            node[k] = {}
        if not isinstance(node[k], dict):
            raise ConfigError(f"cannot set {path!r}: {k!r} is not a section")
        node = node[k]
    node[keys[-1]] = _parse_value(raw)


def _read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def load_config(path=None, overrides=()):
    """Resolve the project configuration.

    Sections ``plant``, ``drive``, ``ocp``, ``region`` and ``controller`` may
    be given inline or as a path to a JSON file (relative to the config).
    """
    cfg = copy.deepcopy(DEFAULTS)
    base = Path(".")
    if path is not None:
        user = _read_json(path)
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        base = Path(path).parent
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
        for k, v in user.items():
            if isinstance(v, str) and k in ("plant", "drive", "ocp", "region", "controller"):
                v = _read_json(base / v)
            if isinstance(v, dict) and isinstance(cfg.get(k), dict):
                cfg[k].update(v)
            else:
                cfg[k] = v
    for o in overrides:
        apply_override(cfg, o)
    return cfg


def config_hash(cfg):
    """Short SHA-256 of the resolved configuration, output location excluded."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _plant(cfg):
    from .plant import PlantParams, default_params

    if not cfg["plant"]:
        return default_params()
    d = default_params().to_dict()
    d["s_0"] = None
    d.update(cfg["plant"])
    return PlantParams.from_dict(d)


def _drive(cfg):
    from .drive import DriveParams

    return DriveParams.from_dict(cfg["drive"] or {})


def _ocp(cfg):
    from .trajopt import OcpConfig

    return OcpConfig.from_dict(cfg["ocp"] or {})


def _region(cfg):
    from .lmisyn import RegionSpec

    return RegionSpec.from_dict(cfg["region"])


def _controller(cfg, K=(0.0, 0.0)):
    from .closedloop import ControllerConfig

    c = dict(cfg["controller"])
    c.pop("K", None)
    try:
        return ControllerConfig(K=tuple(K), **c)
    except TypeError as exc:
        raise ConfigError(f"controller: {exc}") from None


# ---------------------------------------------------------------------------
# output helpers


class _Output:
    def __init__(self, cfg, command):
        self.dir = Path(cfg["output"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hash = config_hash(cfg)
        self.command = command
        self.cfg = cfg
        self.artifacts = []

    def path(self, name):
        self.artifacts.append(name)
        return self.dir / name

    def json(self, name, obj):
        obj = dict(obj)
        obj["config_hash"] = self.hash
        self.path(name).write_text(_dumps(obj))

    def finish(self):
        # the output location is left out so relocated reruns stay byte-identical
        body = {k: v for k, v in self.cfg.items() if k != "output"}
        manifest = {"command": self.command, "config_hash": self.hash, "version": __version__,
                    "artifacts": sorted(self.artifacts), "config": body}
        (self.dir / "manifest.json").write_text(_dumps(manifest))


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (bool, np.bool_)):
        return bool(o)
    if isinstance(o, (int, np.integer)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if math.isfinite(o) else None
    return o


def _dumps(obj):
    """Indented, key-sorted JSON with floats at 17 significant digits."""
    return _encode(_jsonable(obj)) + "\n"


def _encode(o, indent=0):
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(o, dict):
        if not o:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(o[k], indent + 1)}" for k in sorted(o)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(o, list):
        if not o:
            return "[]"
        return "[\n" + ",\n".join(pad + _encode(v, indent + 1) for v in o) + "\n" + end + "]"
    if isinstance(o, float):
        return format_float(o)
    return json.dumps(o)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg, args, out):
    from .ident import staircase_log

    p, drv = _plant(cfg), _drive(cfg)
    sim = cfg["simulate"]
    log = staircase_log(p, drv, levels=tuple(sim["levels"]), hold=float(sim["hold"]),
                        T_ctrl=cfg["controller"]["T_ctrl"])
    log.to_csv(out.path("simulation.csv"))


def cmd_identify(cfg, args, out):
    from . import ident

    p = _plant(cfg)
    c = cfg["identify"]
    acq = ident.AcquisitionParams(float(c["t_s"]), float(c["delay"]), int(c["n"]))
    rng = np.random.default_rng(cfg["seed"])
    m = p.motor
    u, y = ident.synthetic_electrical_data(m.R_a, m.L_a, acq, rng, noise=float(c["noise"]))
    elec = ident.electrical_params(ident.fit_arx(u, y), acq)
    u, y = ident.synthetic_mechanical_data(p.trans.b_mg, p.trans.J_mg, m.k_t, m.R_a, acq, rng, noise=float(c["noise"]))
    mech = ident.mechanical_params(ident.fit_arx(u, y), acq, m.k_t, m.R_a)
    truth = {"R_a": m.R_a, "L_a": m.L_a, "b_mg": p.trans.b_mg, "J_mg": p.trans.J_mg}
    est = {**elec, **mech}
    rel = {k: abs(est[k] - truth[k]) / abs(truth[k]) for k in truth}
    report = {"estimated": est, "true": truth, "relative_error": rel}
    if args.calibrate:
        log = ident.staircase_log(p, _drive(cfg))
        cal = ident.calibrate(p.with_updates(tau_c=0.0, b_s=1.0, s_0=p.mech.s_0), log,
                              args.tau_c_grid, args.b_s_grid, _drive(cfg), jobs=args.jobs)
        report["calibration"] = cal.to_dict()
    out.json("identification.json", report)


def cmd_drive_verify(cfg, args, out):
    from .drive import verify_psi_bound

    cert = verify_psi_bound(args.tol)
    out.json("certificate.json", cert.to_dict())
    print(_dumps(cert.to_dict()), end="")


def _solve_plan(cfg, out):
    from .trajopt import solve_ocp

    p, drv, ocp = _plant(cfg), _drive(cfg), _ocp(cfg)
    plan = solve_ocp(p, drv, ocp)
    plan.to_csv(out.path("plan.csv"))
    out.json("plan_report.json", plan.report())
    if not plan.converged:
        raise ConvergenceError(f"OCP did not converge in {plan.iterations} iterations "
                               f"(KKT {plan.kkt_residual:.3g})", best=plan.report())
    return plan


def cmd_plan(cfg, args, out):
    _solve_plan(cfg, out)


def _tune(cfg, out, jobs):
    from .lmisyn import build_error_model, polytope_vertices, tradeoff_curve

    p = _plant(cfg)
    model = build_error_model(p)
    region = _region(cfg)
    sw = cfg["sweep"]
    verts = polytope_vertices(model, float(sw["spread"])) if sw["robust"] else ()
    pts = tradeoff_curve(model, region.theta, region.rho, [float(a) for a in sw["alphas"]],
                         verts, jobs=jobs)
    nan2 = [math.nan, math.nan]
    K = [list(pt.K) if pt.K is not None else nan2 for pt in pts]
    write_csv_columns(out.path("tradeoff.csv"), {
        "alpha": [pt.alpha for pt in pts], "gamma": [pt.gamma for pt in pts],
        "k_p": [k[0] for k in K], "k_d": [k[1] for k in K], "status": [pt.status for pt in pts],
    })
    return model, pts


def cmd_tune(cfg, args, out):
    from .lmisyn import build_error_model, polytope_vertices, synthesize

    _tune(cfg, out, args.jobs)
    p = _plant(cfg)
    model = build_error_model(p)
    sw = cfg["sweep"]
    verts = polytope_vertices(model, float(sw["spread"])) if sw["robust"] else ()
    res = synthesize(model, _region(cfg), verts)
    out.json("gains.json", res.to_dict())


def _closed_loop_task(args):
    from .closedloop import run_closed_loop

    p, drv, plan, ctrl = args
    return run_closed_loop(p, drv, plan, ctrl)


def cmd_closedloop(cfg, args, out):
    from .trajopt import PlannedTrajectory

    plan = PlannedTrajectory.from_csv(args.plan)
    gains = _read_json(args.gains)
    K = gains.get("K")
    if K is None or len(K) != 2:
        raise ConfigError(f"{args.gains}: no usable gain vector K")
    rep = _closed_loop_task((_plant(cfg), _drive(cfg), plan, _controller(cfg, K)))
    rep.to_csv(out.path("run.csv"))
    out.json("run_report.json", {**rep.to_dict(), "K": K})


def cmd_pipeline(cfg, args, out):
    plan = _solve_plan(cfg, out)
    region = _region(cfg)
    _, pts = _tune(cfg, out, args.jobs)
    p, drv = _plant(cfg), _drive(cfg)
    tasks = [(p, drv, plan, _controller(cfg, pt.K)) for pt in pts if pt.K is not None]
    if args.jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(args.jobs) as ex:
            reps = list(ex.map(_closed_loop_task, tasks))
    else:
        reps = [_closed_loop_task(t) for t in tasks]
    it = iter(reps)
    rows = []
    for pt in pts:
        rep = next(it) if pt.K is not None else None
        if rep is not None:
            rep.to_csv(out.path(f"run_alpha_{format_float(pt.alpha)}.csv"))
        rows.append((pt, rep))
    nan = math.nan
    write_csv_columns(out.path("summary.csv"), {
        "alpha": [pt.alpha for pt, _ in rows],
        "theta": [region.theta] * len(rows),
        "rho": [region.rho] * len(rows),
        "gamma": [pt.gamma for pt, _ in rows],
        "k_p": [pt.K[0] if pt.K is not None else nan for pt, _ in rows],
        "k_d": [pt.K[1] if pt.K is not None else nan for pt, _ in rows],
        "status": [pt.status for pt, _ in rows],
        "nrmse": [r.nrmse if r is not None else nan for _, r in rows],
        "saturation_fraction": [r.saturation_fraction if r is not None else nan for _, r in rows],
    })


COMMANDS = {
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "drive-verify": cmd_drive_verify,
    "plan": cmd_plan,
    "tune": cmd_tune,
    "closedloop": cmd_closedloop,
    "pipeline": cmd_pipeline,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="boomctl", description=__doc__.strip().splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="project configuration JSON")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config field (dotted path)")
    common.add_argument("--out", help="output directory (overrides config 'output')")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="duty staircase run of the plant")
    p = sub.add_parser("identify", parents=[common], help="ARX identification round trip")
    p.add_argument("--calibrate", action="store_true", help="also grid-calibrate friction")
    p.add_argument("--tau-c-grid", type=float, nargs="+", default=[0.0025, 0.005, 0.0075])
    p.add_argument("--b-s-grid", type=float, nargs="+", default=[50.0, 100.0, 150.0])
    p = sub.add_parser("drive-verify", parents=[common], help="certify the inversion bound")
    p.add_argument("--tol", type=float, default=1e-4)
    sub.add_parser("plan", parents=[common], help="solve the opening OCP")
    sub.add_parser("tune", parents=[common], help="LMI gain synthesis and alpha sweep")
    p = sub.add_parser("closedloop", parents=[common], help="closed-loop run of a plan")
    p.add_argument("--plan", required=True, help="plan CSV")
    p.add_argument("--gains", required=True, help="gains JSON with key K")
    sub.add_parser("pipeline", parents=[common], help="plan, sweep and closed-loop runs")
    return ap


def _exit_code(exc):
    if isinstance(exc, (ConvergenceError, IntegrationError, VerificationError)):
        return EXIT_SOLVER
    return EXIT_DOMAIN


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = None
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config, args.overrides)
        if args.out:
            cfg["output"] = args.out
        out = _Output(cfg, args.command)
        COMMANDS[args.command](cfg, args, out)
        out.finish()
        return EXIT_OK
    except BoomError as exc:
        code = _exit_code(exc)
        report = {"error": type(exc).__name__, "message": str(exc), "exit_code": code,
                  "command": args.command}
        for attr in ("report", "dump", "best"):
            val = getattr(exc, attr, None)
            if isinstance(val, dict):
                report[attr] = val
        text = _dumps(report)
        sys.stderr.write(text)
        if out is not None:
            (out.dir / "error.json").write_text(text)
            out.finish()
        return code


if __name__ == "__main__":
    sys.exit(main())
