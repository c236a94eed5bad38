"""Command line front end: ``jacksontree {estimate,exact,verify,sweep,table}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings

from . import exact as exact_mod
from . import sampler, verification
from .network import Config, NetworkError, dump_config, load_config
from .subsolution import MollifierParams, NonPositive, build_gradient_table, choose_params

log = logging.getLogger("jacksontree")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    pass


def _load(args) -> Config:
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cfg = load_config(args.config)
    except (OSError, NetworkError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot load config {args.config!r}: {exc}") from None
    for w in caught:
        log.warning("%s", w.message)
    return cfg


def _buffer(cfg: Config, n: int | None):
    return cfg.buffer if n is None else cfg.buffer.with_n(n)


def _params(cfg: Config, args, n: int | None = None) -> MollifierParams:
    """Explicit flags win, then the config's defaults, then the ``delta = C/n`` coupling."""
    buf = _buffer(cfg, n if n is not None else args.n)
    defaults = cfg.extras.get("defaults", {}) if args.C is None else {}
    eps = args.eps if args.eps is not None else defaults.get("epsilon")
    delta = args.delta if args.delta is not None else defaults.get("delta")
    return choose_params(cfg.network, buf, buf.n, C=args.C, epsilon=eps, delta=delta)


def _K(cfg: Config, args) -> int:
    if args.K is not None:
        return args.K
    return int(cfg.extras.get("defaults", {}).get("K", 10_000))


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


# commands ---------------------------------------------------------------------


def cmd_estimate(args) -> int:
    cfg = _load(args)
    buf = _buffer(cfg, args.n)
    params = _params(cfg, args) if args.policy == "is" else None
    s = sampler.estimate(cfg.network, buf, None, _K(cfg, args), params, args.policy,
                         args.seed, args.threads)
    if s.hit_count == 0:
        log.warning("no path reached the overflow set; the estimate is 0")
    out = s.to_json(timing=not args.no_timing)
    out["n"] = buf.n
    out["policy"] = args.policy
    if params is not None:
        out["epsilon"] = params.epsilon
        out["delta"] = params.delta
    _emit(_json(out), args.out)
    return 0


def cmd_exact(args) -> int:
    cfg = _load(args)
    r = exact_mod.first_passage(cfg.network, _buffer(cfg, args.n), method=args.method,
                                tol=args.tol)
    _emit(_json(r.to_json()), args.out)
    return 0


def cmd_verify(args) -> int:
    cfg = _load(args)
    buf = _buffer(cfg, args.n)
    params = _params(cfg, args)
    if args.gamma is not None:
        params = MollifierParams(params.epsilon, params.delta, args.gamma)
    reports = verification.run_all(cfg.network, buf, params, args.samples, args.seed)
    L = len(build_gradient_table(cfg.network))
    if args.json:
        text = _json({"gradients": L, "checks": [r.to_json() for r in reports]})
    else:
        lines = [f"network: d={cfg.network.d}, {L} effective gradients, "
                 f"epsilon={params.epsilon:.6g}, delta={params.delta:.6g}"]
        lines += [r.line() for r in reports]
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return 0 if all(r.passed for r in reports) else 1


def _parse_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def cmd_sweep(args) -> int:
    cfg = _load(args)
    n_list = args.n_list
    if not n_list:
        raise ConfigError("sweep needs --n with a comma-separated list")
    K = _K(cfg, args)
    fixed = args.C is None and (args.eps is not None or args.delta is not None)
    rows = sampler.decay_diagnostics(
        cfg.network, cfg.buffer, n_list, K, args.seed,
        C=args.C if args.C is not None else (None if fixed else 2.4),
        epsilon=args.eps, delta=args.delta, policy=args.policy, threads=args.threads)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "p_hat", "se", "rate1", "rate2"])
    for r in rows:
        w.writerow([r.n, repr(r.p_hat), repr(r.std_err), repr(r.rate1), repr(r.rate2)])
    _emit(buf.getvalue(), args.out)
    return 0


def estimation_table(cfg: Config, n: int | None, K: int, params: MollifierParams, seed: int,
                     runs: int = 5, threads: int = 1) -> list[sampler.EstimatorSummary]:
    """``runs`` consecutive estimations with seeds ``seed, seed+1, ...``."""
    buf = _buffer(cfg, n)
    table = build_gradient_table(cfg.network)
    return [sampler.estimate(cfg.network, buf, None, K, params, "is", seed + k, threads, table)
            for k in range(runs)]


def format_table(rows: list[sampler.EstimatorSummary], exact: float | None = None) -> str:
    lines = []
    if exact is not None:
        lines.append(f"Exact probability p = {exact:.4e}")
    lines.append(f"{'':8s}{'estimate':>12s}{'std err':>12s}   95% CI")
    for k, s in enumerate(rows, start=1):
        lo, hi = s.ci95
        lines.append(f"Est. {k:<3d}{s.p_hat:12.3e}{s.std_err:12.3e}   [{lo:.3e}, {hi:.3e}]")
    return "\n".join(lines) + "\n"


def cmd_table(args) -> int:
    cfg = _load(args)
    params = _params(cfg, args)
    rows = estimation_table(cfg, args.n, _K(cfg, args), params, args.seed, args.runs,
                            args.threads)
    ex = None
    if args.exact:
        ex = exact_mod.first_passage(cfg.network, _buffer(cfg, args.n)).p_exact
    if args.json:
        text = _json({"exact": ex, "rows": [s.to_json(timing=not args.no_timing) for s in rows]})
    else:
        text = format_table(rows, ex)
    _emit(text, args.out)
    return 0


# parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jacksontree", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, n_list=False):
        sp.add_argument("--config", required=True,
                        help="config JSON path or bundled name (ex1, ex2_8node, five_node, mm1)")
        if n_list:
            sp.add_argument("--n", dest="n_list", type=_parse_list, required=True,
                            help="comma-separated scales, e.g. 10,20,40")
            sp.set_defaults(n=None)
        else:
            sp.add_argument("--n", type=int, help="scale parameter (default: from config)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="write output here instead of stdout")
        sp.add_argument("--dump-config", action="store_true",
                        help="print the normalized config as JSON and exit")

    def sampling(sp):
        sp.add_argument("--K", type=int, help="number of paths (default: config or 10000)")
        sp.add_argument("--eps", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--C", type=float, help="use delta = C/n and epsilon = -delta log delta")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--no-timing", action="store_true",
                        help="omit wall-clock fields so output is byte-reproducible")

    sp = sub.add_parser("estimate", help="IS or naive Monte Carlo estimate")
    common(sp)
    sampling(sp)
    sp.add_argument("--policy", choices=["is", "naive"], default="is")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("exact", help="exact probability on the truncated lattice")
    common(sp)
    sp.add_argument("--method", choices=["gauss_seidel", "value_iteration"],
                    default="gauss_seidel")
    sp.add_argument("--tol", type=float, default=1e-14)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_exact)

    sp = sub.add_parser("verify", help="numerical checks of the subsolution properties")
    common(sp)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--C", type=float)
    sp.add_argument("--gamma", type=float,
                    help="override the decay rate in the offsets (negative control)")
    sp.add_argument("--samples", type=int, default=10_000)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("sweep", help="decay-rate diagnostics over several n (CSV)")
    common(sp, n_list=True)
    sampling(sp)
    sp.add_argument("--policy", choices=["is", "naive"], default="is")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("table", help="five consecutive estimations with standard errors")
    common(sp)
    sampling(sp)
    sp.add_argument("--runs", type=int, default=5)
    sp.add_argument("--exact", action="store_true", help="also compute the exact value")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_table)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.dump_config:
            cfg = _load(args)
            buf = _buffer(cfg, args.n)
            _emit(_json(dump_config(cfg.network, buf, cfg.extras)), args.out)
            return 0
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonPositive, NetworkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (sampler.StepBudgetExceeded, exact_mod.LatticeTooLarge, RuntimeError,
            ValueError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
