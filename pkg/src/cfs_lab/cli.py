"""Command-line front end.

Subcommands::

    sphere-minimize  anneal a weighted point set on the sphere
    sweep            minimal action over a (tau, m) grid, as CSV
    mink-correlate   spectral classification of a vacuum separation
    geometry-check   spin/metric connection report for a system
    action-eval      action and constraint of a system file

Every artifact is written either to stdout or, with ``--out DIR``, to a
fixed file name inside an existing directory.  Failures print a one-line
JSON object ``{"error": <name>, "message": ...}`` on stderr and exit with
2 (usage or input problem) or 3 (numerical failure).

All system-file reading and writing lives here.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import operator_core as oc
from .errors import (CFSError, DimensionMismatch, InputNotFound, InvalidOptions,
                     NotSpinConnectable, NumericalError, OutputPathUnwritable, ParseError)

SWEEP_COLUMNS = ("tau", "m", "seed", "min_action", "support_size", "constraint_T")


# serialization ------------------------------------------------------------------


def to_jsonable(obj):
    """Plain-JSON form: complex -> [re, im], arrays -> lists, non-finite -> null."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [to_jsonable(float(obj.real)), to_jsonable(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if hasattr(obj, "value") and isinstance(obj.value, str):  # enums
        return obj.value
    return obj


def dumps(obj):
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=False, allow_nan=False) + "\n"


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))  # shortest round-trip form


def rows_to_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(getattr(r, c) if not isinstance(r, dict) else r[c]) for c in columns])
    return buf.getvalue()


def _complex_entry(z, where):
    if isinstance(z, (int, float)) and not isinstance(z, bool):
        return complex(z)
    if (isinstance(z, list) and len(z) == 2
            and all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in z)):
        return complex(z[0], z[1])
    raise ParseError("%s: expected a number or an [re, im] pair" % where)


def system_from_dict(data):
    """Measure from the system schema
    {"spin_dim", "particle_dim", "points": [{"weight", "matrix"}], "normalized"}."""
    if not isinstance(data, dict):
        raise ParseError("system must be a JSON object")
    for key in ("spin_dim", "particle_dim", "points"):
        if key not in data:
            raise ParseError("missing key %r" % key)
    n, f = data["spin_dim"], data["particle_dim"]
    if not (isinstance(n, int) and isinstance(f, int)) or n < 1 or f < 1:
        raise ParseError("spin_dim and particle_dim must be positive integers")
    if not isinstance(data["points"], list) or not data["points"]:
        raise ParseError("points must be a non-empty list")
    mats, weights = [], []
    for k, p in enumerate(data["points"]):
        if not isinstance(p, dict) or "matrix" not in p:
            raise ParseError("points[%d] needs a matrix" % k)
        rows = p["matrix"]
        if not isinstance(rows, list) or len(rows) != f or \
                any(not isinstance(r, list) or len(r) != f for r in rows):
            raise DimensionMismatch("points[%d].matrix is not %d x %d" % (k, f, f))
        mats.append(np.array([[_complex_entry(z, "points[%d].matrix[%d][%d]" % (k, a, b))
                               for b, z in enumerate(r)] for a, r in enumerate(rows)]))
        w = p.get("weight", 1.0)
        if not isinstance(w, (int, float)) or isinstance(w, bool):
            raise ParseError("points[%d].weight must be a number" % k)
        weights.append(float(w))
    return oc.make_measure(mats, weights, normalized=bool(data.get("normalized", False)),
                           spin_dim=n)


def system_to_dict(measure):
    return {
        "spin_dim": measure.spin_dim,
        "particle_dim": measure.particle_dim,
        "points": [{"weight": float(w), "matrix": to_jsonable(np.asarray(p.entries))}
                   for p, w in zip(measure.points, measure.weights)],
        "normalized": measure.normalized,
    }


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise InputNotFound("no such file: %s" % path, path=str(path)) from None
    except OSError as exc:
        raise InputNotFound("cannot read %s: %s" % (path, exc.strerror), path=str(path)) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError("%s: %s" % (path, exc.msg), line=exc.lineno, column=exc.colno) from None


def load_system(path):
    return system_from_dict(read_json(path))


def save_system(measure, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(system_to_dict(measure)))


# run configuration ----------------------------------------------------------------


@dataclass
class RunConfig:
    subcommand: str
    out_dir: str = None
    input_path: str = None
    fmt: str = "json"
    master_seed: int = 0
    params: dict = field(default_factory=dict)

    def check_paths(self):
        if self.out_dir is not None:
            if not os.path.isdir(self.out_dir):
                raise OutputPathUnwritable("output directory does not exist: %s" % self.out_dir,
                                           path=self.out_dir)
            if not os.access(self.out_dir, os.W_OK):
                raise OutputPathUnwritable("output directory is not writable: %s" % self.out_dir,
                                           path=self.out_dir)
        if self.input_path is not None and not os.path.isfile(self.input_path):
            raise InputNotFound("no such file: %s" % self.input_path, path=self.input_path)


def _emit(config, artifacts, stdout):
    """Write {file name: text} to the output directory, or the first one to stdout."""
    if config.out_dir is None:
        stdout.write(next(iter(artifacts.values())))
        return
    for name, text in artifacts.items():
        path = os.path.join(config.out_dir, name)
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OutputPathUnwritable("cannot write %s: %s" % (path, exc.strerror),
                                       path=path) from None
    stdout.write(dumps({"written": [os.path.join(config.out_dir, n) for n in artifacts]}))


# subcommands -----------------------------------------------------------------------


def _minimize_options(config):
    from . import sphere_model as sm

    return sm.MinimizeOptions(master_seed=config.master_seed,
                              restarts=config.params.get("restarts", 8))


def _check_m(m):
    if m < 1:
        raise InvalidOptions("m must be a positive integer, got %d" % m)


def _check_tau(tau):
    if not math.isfinite(tau) or tau < 1.0:
        raise InvalidOptions("tau must be >= 1, got %r" % tau)


def result_to_dict(res, seed):
    return {
        "tau": res.best.tau,
        "m": res.best.m,
        "seed": seed,
        "action": res.action,
        "constraint_T": res.constraint_T,
        "best_restart": res.best_restart,
        "restart_actions": res.restart_actions,
        "configuration": {"points": res.best.points, "weights": res.best.weights},
        "support": {"size": res.support.size, "points": res.support.points,
                    "weights": res.support.weights},
        "history": res.history,
    }


def run_sphere_minimize(config, stdout=sys.stdout):
    from . import sphere_model as sm

    tau, m = config.params["tau"], config.params["m"]
    _check_tau(tau)
    _check_m(m)
    opts = _minimize_options(config)
    opts.validate()
    res = sm.minimize(sm.RandomStart(tau, m), opts)
    row = sm.SweepRow(tau, m, config.master_seed, res.action, res.support.size, res.constraint_T)
    full = dumps(result_to_dict(res, config.master_seed))
    summary = rows_to_csv([row], SWEEP_COLUMNS)
    if config.out_dir is None:
        _emit(config, {"x": summary if config.fmt == "csv" else full}, stdout)
    else:
        _emit(config, {"sphere_minimize.json": full, "sphere_minimize.csv": summary}, stdout)
    return 0


def run_sweep(config, stdout=sys.stdout):
    from . import sphere_model as sm

    taus, ms = config.params["tau"], config.params["m"]
    for t in taus:
        _check_tau(t)
    for m in ms:
        _check_m(m)
    opts = _minimize_options(config)
    opts.validate()
    rows = sm.sweep(taus, ms, opts)
    rows.sort(key=lambda r: (r.tau, r.m))
    if config.fmt == "csv":
        text, name = rows_to_csv(rows, SWEEP_COLUMNS), "sweep.csv"
    else:
        text = dumps([{c: getattr(r, c) for c in SWEEP_COLUMNS} for r in rows])
        name = "sweep.json"
    _emit(config, {name: text}, stdout)
    return 0


def run_mink_correlate(config, stdout=sys.stdout):
    from . import dirac_minkowski as dm

    p = config.params
    params = dm.RegularizationParams(mass=p["mass"], epsilon=p["eps"])
    rep = dm.classify_interval(p["xi"], params)
    body = rep.to_dict()
    out = {"class": body.pop("classification"), "xi": list(p["xi"]),
           "mass": params.mass, "epsilon": params.epsilon}
    out.update(body)
    _emit(config, {"mink_correlate.json": dumps(out)}, stdout)
    return 0


def run_action_eval(config, stdout=sys.stdout):
    measure = load_system(config.input_path)
    rep = oc.action(measure)
    out = {"S": rep.action_S, "T": rep.constraint_T, "clamped_pairs": rep.clamped_pairs,
           "points": len(measure), "spin_dim": measure.spin_dim,
           "particle_dim": measure.particle_dim, "lagrangian_matrix": rep.lagrangian_matrix}
    _emit(config, {"action_eval.json": dumps(out)}, stdout)
    return 0


def _pair_report(ctx, i, j):
    from . import quantum_geometry as qg

    item = {"pair": [i, j], "properly_timelike": qg.properly_timelike(ctx, i, j)}
    try:
        d = qg.spin_connection(ctx, i, j)
        back = qg.spin_connection(ctx, j, i)
    except NotSpinConnectable as exc:
        item.update(spin_connectable=False, error=exc.to_dict())
        return item
    t = qg.metric_connection(ctx, i, j)
    item.update(spin_connectable=True, phase=d.phase, phase_reverse=back.phase,
                time_orientation=qg.time_orientation(ctx, i, j),
                residuals=d.residuals, metric_gram_defect=t.gram_defect())
    return item


def _guarded(fn, item):
    try:
        item.update(fn())
    except NotSpinConnectable as exc:
        item["error"] = exc.to_dict()
    return item


def run_geometry_check(config, stdout=sys.stdout):
    from . import quantum_geometry as qg

    p = config.params
    if config.input_path is not None:
        measure = load_system(config.input_path)
        ctx = qg.context_from_measure(measure)
        source = {"system": config.input_path}
    else:
        from . import dirac_minkowski as dm

        params = dm.RegularizationParams(mass=p["mass"], epsilon=p["eps"])
        ctx = qg.vacuum_context(p["events"], params)
        source = {"vacuum": {"events": p["events"], "mass": params.mass,
                             "epsilon": params.epsilon}}
    n = len(ctx)
    specs = p.get("pairs", []) + p.get("triples", []) + p.get("chains", [])
    for s in specs:
        if any(k < 0 or k >= n for k in s) or len(set(s)) < len(s):
            raise InvalidOptions("point indices %s must be distinct and in [0, %d)" % (s, n))
    pairs = p.get("pairs") or ([[0, 1]] if n >= 2 else [])

    def triple(i, j, k):
        t = qg.metric_curvature(ctx, i, j, k)
        return {"curvature_deviation": float(np.linalg.norm(t.matrix() - np.eye(5), 2)),
                "gram_defect": t.gram_defect()}

    def chain(pts):
        t = qg.transport_chain(ctx, pts, "metric")
        sp = qg.transport_chain(ctx, pts, "spin_spliced")
        un = qg.transport_chain(ctx, pts, "spin_unspliced")
        out = {"metric_gram_defect": t.gram_defect(),
               "spliced_minus_unspliced": float(np.linalg.norm(sp - un, 2))}
        # end points in common spinor coordinates (vacuum): compare with the identity
        if _same_sign(t.target, t.source):
            m = t.then(qg.identify(t.target, t.source)).matrix()
            out["metric_deviation_from_identity"] = float(np.linalg.norm(m - np.eye(5), 2))
        return out

    report = {
        "source": source,
        "points": n,
        "pairs": [_pair_report(ctx, i, j) for i, j in pairs],
        "triples": [_guarded(lambda s=s: triple(*s), {"triple": s}) for s in p.get("triples", [])],
        "chains": [_guarded(lambda s=s: chain(s), {"chain": s}) for s in p.get("chains", [])],
    }
    _emit(config, {"geometry_check.json": dumps(report)}, stdout)
    return 0


def _same_sign(k1, k2):
    a, b = k1.basis[0], k2.basis[0]
    return float(np.max(np.abs(a - b))) <= 1e-8 * max(1.0, float(np.max(np.abs(a))))


RUNNERS = {
    "sphere-minimize": run_sphere_minimize,
    "sweep": run_sweep,
    "mink-correlate": run_mink_correlate,
    "geometry-check": run_geometry_check,
    "action-eval": run_action_eval,
}


# argument parsing ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidOptions(message)


def _floats(text, count=None, what="value"):
    try:
        vals = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise InvalidOptions("%s: expected comma-separated numbers, got %r" % (what, text)) from None
    if count is not None and len(vals) != count:
        raise InvalidOptions("%s: expected %d components, got %d" % (what, count, len(vals)))
    if not vals or not all(math.isfinite(v) for v in vals):
        raise InvalidOptions("%s: expected finite numbers, got %r" % (what, text))
    return vals


def _ints(text, what="value"):
    try:
        vals = [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise InvalidOptions("%s: expected comma-separated integers, got %r" % (what, text)) from None
    if not vals:
        raise InvalidOptions("%s: empty list" % what)
    return vals


def build_parser():
    parser = _Parser(prog="cfs-lab", description="Finite causal fermion system toolkit.")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    sub.required = True

    def common(p, formats=("json",)):
        p.add_argument("--out", help="existing output directory (default: stdout)")
        p.add_argument("--format", choices=formats, default=formats[0])
        p.add_argument("--seed", type=int, default=0, help="master seed")

    p = sub.add_parser("sphere-minimize", help="minimize the sphere-model action")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--m", type=int, required=True, help="number of points")
    p.add_argument("--restarts", type=int, default=8)
    common(p, ("json", "csv"))

    p = sub.add_parser("sweep", help="minimal actions over a tau x m grid")
    p.add_argument("--tau", required=True, help="comma-separated tau values")
    p.add_argument("--m", required=True, help="comma-separated point counts")
    p.add_argument("--restarts", type=int, default=8)
    common(p, ("csv", "json"))

    p = sub.add_parser("mink-correlate", help="classify a vacuum separation")
    p.add_argument("--xi", required=True, help="t,x,y,z")
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1e-3)
    common(p)

    p = sub.add_parser("geometry-check", help="spin and metric connection report")
    p.add_argument("--input", help="system JSON file")
    p.add_argument("--events", help="vacuum events 't,x,y,z;t,x,y,z;...' (instead of --input)")
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--pair", action="append", default=[], help="i,j (repeatable)")
    p.add_argument("--triple", action="append", default=[], help="i,j,k (repeatable)")
    p.add_argument("--chain", action="append", default=[], help="i,j,k,... (repeatable)")
    common(p)

    p = sub.add_parser("action-eval", help="action S and constraint T of a system file")
    p.add_argument("--input", required=True, help="system JSON file")
    common(p)
    return parser


def config_from_args(argv):
    ns = build_parser().parse_args(argv)
    cfg = RunConfig(ns.subcommand, out_dir=ns.out, fmt=ns.format, master_seed=ns.seed,
                    input_path=getattr(ns, "input", None))
    if ns.seed < 0:
        raise InvalidOptions("seed must be non-negative")
    c = ns.subcommand
    if c == "sphere-minimize":
        cfg.params = {"tau": ns.tau, "m": ns.m, "restarts": ns.restarts}
    elif c == "sweep":
        cfg.params = {"tau": _floats(ns.tau, what="--tau"),
                      "m": _ints(ns.m, what="--m"), "restarts": ns.restarts}
    elif c == "mink-correlate":
        cfg.params = {"xi": _floats(ns.xi, 4, "--xi"), "mass": ns.mass, "eps": ns.eps}
    elif c == "geometry-check":
        if (ns.input is None) == (ns.events is None):
            raise InvalidOptions("give exactly one of --input and --events")
        cfg.params = {"mass": ns.mass, "eps": ns.eps,
                      "pairs": [_pair(s, 2, "--pair") for s in ns.pair],
                      "triples": [_pair(s, 3, "--triple") for s in ns.triple],
                      "chains": [_pair(s, None, "--chain") for s in ns.chain]}
        if ns.events is not None:
            cfg.params["events"] = [_floats(e, 4, "--events") for e in ns.events.split(";")
                                    if e.strip()]
    return cfg


def _pair(text, count, what):
    vals = _ints(text, what)
    if count is not None and len(vals) != count:
        raise InvalidOptions("%s: expected %d indices, got %d" % (what, count, len(vals)))
    if count is None and len(vals) < 2:
        raise InvalidOptions("%s: a chain needs at least two indices" % what)
    return vals


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        cfg = config_from_args(sys.argv[1:] if argv is None else list(argv))
        cfg.check_paths()
        return RUNNERS[cfg.subcommand](cfg, stdout)
    except CFSError as exc:
        err = exc
    except np.linalg.LinAlgError as exc:
        err = NumericalError("linear algebra failure: %s" % exc)
    stderr.write(json.dumps(to_jsonable(err.to_dict()), sort_keys=True) + "\n")
    return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
