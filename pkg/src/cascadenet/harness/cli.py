"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical-guard abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..cascade_fixed import FixedLtiModel, LawFileError, fixed_lti_run, read_bound_laws, write_bound_laws
from ..cascade_lti import MODES, iterate_to_fixed_point, lti_model_from_ensemble
from ..cascade_mc import CascadeOverflowError
from ..dists import AliasingError, GridError
from ..netgen import (
    SkeletonFormatError,
    configuration_skeleton,
    poisson_law,
    poisson_skeleton,
    preferential_attachment,
    top_connected_subnetwork,
)
from .config import EXPERIMENTS, ConfigError, build_config, load_file
from .eu import EXPOSURE_BASES, EuCalibration, build_eu_skeleton, eu_streams
from .experiments import run_experiment
from .modelfile import ModelFileError, read_model
from .tables import write_table, write_yaml

log = logging.getLogger("cascadenet")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GUARD = 3


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cascadenet", description="Stress and default cascades on interbank networks.")
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment sweep")
    r.add_argument("--config", help="YAML file with configuration keys")
    r.add_argument("--experiment", choices=EXPERIMENTS)
    r.add_argument("--engines", help="comma-separated subset of mc,lti,fixed")
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int, help="Monte Carlo worker processes")
    r.add_argument("--out")
    r.add_argument("--lambdas", type=_floats, help="stress response grid, e.g. '0,0.5,1'")
    r.add_argument("--delta-grid", type=_floats)
    r.add_argument("--sigma-grid", type=_floats)
    r.add_argument("--z-grid", type=_floats)
    r.add_argument("--n", dest="N", type=int, help="network size for Monte Carlo")
    r.add_argument("--z", type=float, help="mean degree")
    r.add_argument("--K", type=int, help="degree cap of the type laws")
    r.add_argument("--grid-step", type=float)
    r.add_argument("--M", type=int, help="grid cells (power of two)")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--tol", type=float)
    r.add_argument("--max-iter", type=int)
    r.add_argument("--p0", type=float, help="initial default probability of the analytic engines")
    r.add_argument("--delta-factor", type=float)
    r.add_argument("--eu-seed", type=int)
    r.add_argument("--exposure-basis", choices=EXPOSURE_BASES)
    r.add_argument("--model-file", help="key-value model file (experiment custom)")

    g = sub.add_parser("gen", help="generate a skeleton file")
    g.add_argument("--model", choices=("poisson", "configuration", "pa"), required=True)
    g.add_argument("--n", type=int, required=True, help="nodes (pa: nodes grown)")
    g.add_argument("--z", type=float, default=10.0, help="mean degree (poisson, configuration)")
    g.add_argument("--K", type=int, help="degree cap for configuration (default 4z)")
    g.add_argument("--alpha", type=float, default=0.169)
    g.add_argument("--gamma", type=float, default=0.169)
    g.add_argument("--delta-in", type=float, default=4.417)
    g.add_argument("--delta-out", type=float, default=4.417)
    g.add_argument("--keep", type=int, help="pa: keep the most connected nodes")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    e = sub.add_parser("eu-build", help="build the 90-bank network and its law files")
    e.add_argument("--seed", type=int, default=3)
    e.add_argument("--out", required=True)
    e.add_argument("--p0", type=float, default=0.0, help="initial default probability written to nodes.csv")
    e.add_argument("--exposure-basis", choices=EXPOSURE_BASES, default="edge")

    f = sub.add_parser("fixed", help="fixed-skeleton analytic run from law files")
    f.add_argument("--skeleton", required=True)
    f.add_argument("--node-laws", required=True)
    f.add_argument("--edge-laws", required=True)
    f.add_argument("--lambda", dest="lam", type=_floats, required=True, help="one or more stress responses")
    f.add_argument("--grid-step", type=float, help="default: smallest positive default-buffer mean / 16")
    f.add_argument("--M", type=int, default=2048)
    f.add_argument("--mode", choices=MODES, default="cap")
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--max-iter", type=int, default=500)
    f.add_argument("--out", help="CSV path (default stdout)")
    f.add_argument("--per-node", help="optional CSV of per-node probabilities at the last lambda")

    m = sub.add_parser("lti", help="random-skeleton analytic run from a model file")
    m.add_argument("--model", required=True)
    m.add_argument("--tol", type=float, default=1e-8)
    m.add_argument("--max-iter", type=int, default=500)
    m.add_argument("--out", help="CSV path (default stdout)")
    return p


# --------------------------------------------------------------------------


def cmd_run(args) -> int:
    file_values = load_file(args.config) if args.config else {}
    flags = {
        k: getattr(args, k)
        for k in (
            "experiment",
            "trials",
            "seed",
            "workers",
            "out",
            "lambdas",
            "delta_grid",
            "sigma_grid",
            "z_grid",
            "N",
            "z",
            "K",
            "grid_step",
            "M",
            "mode",
            "tol",
            "max_iter",
            "p0",
            "delta_factor",
            "eu_seed",
            "model_file",
        )
    }
    if args.engines is not None:
        flags["engines"] = [e for e in args.engines.split(",") if e]
    if args.exposure_basis is not None:
        flags["eu"] = {"exposure_basis": args.exposure_basis}
    if not (flags.get("experiment") or file_values.get("experiment")):
        raise ConfigError("no experiment given (use --experiment or the config file)")
    cfg = build_config(flag_values=flags, file_values=file_values)
    res = run_experiment(cfg)
    for name, info in res.summary["sweeps"].items():
        print(f"{name}: {info['points']} points written to {cfg.out}")
    if res.guard_aborts:
        for msg in res.guard_aborts:
            print(f"aborted: {msg}", file=sys.stderr)
        return EXIT_GUARD
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be positive")
    if args.model == "poisson":
        g = poisson_skeleton(args.n, args.z, args.seed)
    elif args.model == "configuration":
        K = args.K if args.K is not None else max(int(4 * args.z), 1)
        g = configuration_skeleton(poisson_law(args.z, K), args.n, args.seed)
    else:
        g = preferential_attachment(args.n, args.alpha, args.gamma, args.delta_in, args.delta_out, args.seed)
        if args.keep is not None:
            g = top_connected_subnetwork(g, args.keep)[0]
    g.write(args.out)
    print(f"wrote {args.out}: N={g.N} L={g.L}")
    return EXIT_OK


def cmd_eu_build(args) -> int:
    cal = EuCalibration(exposure_basis=args.exposure_basis)
    g = build_eu_skeleton(cal, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    g.write(out / "skeleton.txt")
    bound = cal.ensemble(args.p0).bind(g)
    write_bound_laws(bound, out / "nodes.csv", out / "edges.csv")
    delta, sigma, omega = bound.draw(eu_streams(args.seed)[1])
    write_table(
        out / "realization_nodes.csv",
        ("v", "in_deg", "out_deg", "delta", "sigma"),
        [(v, g.in_deg[v], g.out_deg[v], delta[v], sigma[v]) for v in range(g.N)],
    )
    write_table(out / "realization_edges.csv", ("v", "w", "omega"), [(g.src[e], g.dst[e], omega[e]) for e in range(g.L)])
    write_yaml(out / "calibration.yaml", {"seed": args.seed, "p0": args.p0, **cal.as_dict()})
    print(f"wrote {out}: N={g.N} L={g.L}")
    return EXIT_OK


def _emit(path, cols, rows) -> None:
    if path:
        write_table(path, cols, rows)
    else:
        from .tables import fmt

        print(",".join(cols))
        for row in rows:
            print(",".join(fmt(x) for x in row))


def cmd_fixed(args) -> int:
    from ..netgen import Skeleton

    g = Skeleton.read(args.skeleton)
    bound = read_bound_laws(g, args.node_laws, args.edge_laws)
    if any(not 0 <= lam <= 1 for lam in args.lam) or not args.lam:
        raise ConfigError("--lambda values must lie in [0, 1]")
    h = args.grid_step
    if h is None:
        pos = bound.delta_mean[bound.delta_mean > 0]
        if not pos.size:
            raise ConfigError("cannot choose a grid step: no positive default buffer; pass --grid-step")
        h = float(pos.min()) / 16
    if not h > 0 or args.M < 2 or args.M & (args.M - 1):
        raise ConfigError("need --grid-step > 0 and --M a power of two")
    rows = []
    res = None
    for lam in args.lam:
        model = FixedLtiModel.from_bound(bound, lam, h, args.M, mode=args.mode, buffer_tail_tol=None)
        res = fixed_lti_run(model, tol=args.tol, max_iter=args.max_iter)
        rows.append((lam, res.iterations, res.default_frac, res.stress_frac))
    _emit(args.out, ("lambda", "iterations", "default_frac", "stress_frac"), rows)
    if args.per_node:
        write_table(args.per_node, ("v", "p", "q"), [(v, res.p[v], res.q[v]) for v in range(g.N)])
    return EXIT_OK


def cmd_lti(args) -> int:
    spec = read_model(args.model)
    rows = []
    for lam in spec.lambdas:
        model = lti_model_from_ensemble(spec.ensemble, spec.P, spec.Q, lam, spec.grid_step, spec.M, mode=spec.mode)
        r = iterate_to_fixed_point(model, tol=args.tol, max_iter=args.max_iter)
        rows.append((lam, r.iterations, r.default_frac, r.stress_frac))
    _emit(args.out, ("lambda", "iterations", "default_frac", "stress_frac"), rows)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "gen": cmd_gen, "eu-build": cmd_eu_build, "fixed": cmd_fixed, "lti": cmd_lti}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = getattr(logging, str(args.log_level).upper(), None)
    if not isinstance(level, int):
        print(f"cascadenet: unknown log level {args.log_level!r}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ModelFileError, LawFileError, SkeletonFormatError, FileNotFoundError) as exc:
        print(f"cascadenet: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AliasingError, CascadeOverflowError, GridError) as exc:
        print(f"cascadenet: numerical guard: {exc}", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
