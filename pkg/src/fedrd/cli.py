"""``fedrd`` command line: simulate, estimate, coordinate, serve-site.

Exit codes: 0 success, 1 data or estimation error, 2 usage error,
3 timeout, 4 protocol error, 5 singular information matrix.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import transport
from .baselines import fit_meta, fit_pooled
from .data import load_dataset, save_dataset
from .errors import FedRDError, ProtocolError, SingularInformation, Timeout
from .estimator import METHODS, fit_local
from .federation import fit_fedrd_s, fit_fedrd_u
from .inference import wald
from .simulation import ALL_METHODS, BASELINE_FORMS, ScenarioConfig, generate_sites, run_monte_carlo

log = logging.getLogger("fedrd")

EXIT_ERROR, EXIT_USAGE, EXIT_TIMEOUT, EXIT_PROTOCOL, EXIT_SINGULAR = 1, 2, 3, 4, 5


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _level(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {value}")
    return value


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def _add_carrier_flags(p: argparse.ArgumentParser, tcp_flag: str) -> None:
    p.add_argument("--carrier", choices=("file", "tcp"), required=True)
    p.add_argument("--dir", help="shared directory for the file carrier")
    p.add_argument(tcp_flag, type=_host_port, metavar="HOST:PORT", help="TCP address")
    p.add_argument("--study", default="study", help="study id shared by all parties")
    p.add_argument("--method", choices=("fedrd_u", "fedrd_s"), required=True)
    p.add_argument("--timeout", type=float, help="per-round timeout in seconds (default $FEDRD_TIMEOUT_SECS or 60)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrd", description="Federated additive hazards estimation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo comparison of estimators")
    sim.add_argument("--scenario", type=int, choices=(1, 2), required=True)
    sim.add_argument("--sizes", type=_int_list, default=[100] * 5, help="site sizes, e.g. 100,100,500,1000,1000")
    sim.add_argument("--beta", type=_float_list, default=[1.0, 0.5, 0.5], help="true coefficients")
    sim.add_argument("--reps", type=_positive_int, default=500)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--level", type=_level, default=0.95)
    sim.add_argument("--methods", default=",".join(ALL_METHODS), help="comma-separated subset of %(default)s")
    sim.add_argument("--baseline-form", choices=sorted(BASELINE_FORMS), default="cumulative")
    sim.add_argument("--workers", type=_positive_int, default=1)
    sim.add_argument("--out", help="output directory")
    sim.add_argument("--report-only", action="store_true", help="skip writing per-replication site CSVs")
    sim.add_argument("--no-timing", action="store_true", help="omit wall-clock columns for reproducible output")

    est = sub.add_parser("estimate", help="fit from CSV files, one per site")
    est.add_argument("--method", choices=METHODS, required=True)
    est.add_argument("--data", type=lambda s: s.split(","), required=True, help="comma-separated CSV paths")
    est.add_argument("--level", type=_level, default=0.95)
    est.add_argument("--fit-out", help="write the FIT message here ('-' for stdout)")
    est.add_argument("--study", default="local")

    coord = sub.add_parser("coordinate", help="aggregate site payloads and publish the fit")
    _add_carrier_flags(coord, "--listen")
    coord.add_argument("--expect", type=int, required=True, help="number of participating sites")
    coord.add_argument("--level", type=_level, default=0.95)
    coord.add_argument("--fit-out", help="also write the FIT message here")
    coord.add_argument("--coordinator-id", default="coordinator")

    site = sub.add_parser("serve-site", help="answer the coordinator for one site's data")
    _add_carrier_flags(site, "--connect")
    site.add_argument("--data", required=True, help="site CSV")
    site.add_argument("--site-id", required=True)
    return parser


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_simulate(args, parser) -> int:
    methods = [m for m in args.methods.split(",") if m]
    try:
        cfg = ScenarioConfig(
            args.scenario, tuple(args.sizes), tuple(args.beta), args.reps, args.seed, args.level, args.baseline_form
        )
    except ValueError as exc:
        parser.error(str(exc))
    if not args.report_only and not args.out:
        parser.error("--out is required unless --report-only is given")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        if not args.report_only:
            width = len(str(cfg.reps - 1))
            for rep in range(cfg.reps):
                rep_dir = os.path.join(args.out, f"rep{rep:0{width}d}")
                os.makedirs(rep_dir, exist_ok=True)
                for site in generate_sites(cfg, rep):
                    save_dataset(site, os.path.join(rep_dir, f"{site.site_id}.csv"))
    try:
        report = run_monte_carlo(cfg, methods, workers=args.workers)
    except ValueError as exc:
        if isinstance(exc, FedRDError):
            raise
        parser.error(str(exc))
    timing = not args.no_timing
    text = report.to_text(include_timing=timing)
    print(text)
    if args.out:
        _write(os.path.join(args.out, "report.csv"), report.to_csv(include_timing=timing))
        _write(os.path.join(args.out, "report.txt"), text + "\n")
        _write(os.path.join(args.out, "estimates.csv"), report.estimates_csv())
    return 0


def cmd_estimate(args, parser) -> int:
    sites = [load_dataset(path) for path in args.data]
    if args.method == "local":
        if len(sites) != 1:
            parser.error("--method local takes exactly one CSV")
        fit = fit_local(sites[0])
    elif args.method == "pooled":
        fit = fit_pooled(sites)
    elif args.method == "meta":
        fit = fit_meta([fit_local(s) for s in sites])
    elif args.method == "fedrd_u":
        fit = fit_fedrd_u(sites)
    else:
        fit = fit_fedrd_s(sites)
    print(wald(fit, args.level).table())
    if args.fit_out:
        data = transport.encode_message(transport.Envelope("FIT", "local", 1, args.study), fit)
        if args.fit_out == "-":
            sys.stdout.write(data.decode("utf-8"))
        else:
            with open(args.fit_out, "wb") as fh:
                fh.write(data)
    return 0


def _check_carrier(args, parser, tcp_attr: str) -> None:
    if args.carrier == "file" and not args.dir:
        parser.error("--carrier file requires --dir")
    if args.carrier == "tcp" and getattr(args, tcp_attr) is None:
        parser.error(f"--carrier tcp requires --{tcp_attr}")


def cmd_coordinate(args, parser) -> int:
    _check_carrier(args, parser, "listen")
    if args.expect < 1:
        parser.error("--expect must be at least 1")
    if args.carrier == "file":
        carrier = transport.FileCarrier(args.dir, args.study)
    else:
        carrier = transport.TcpCoordinatorCarrier(*args.listen, args.study)
        host, port = carrier.address
        print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    try:
        fit = transport.run_coordinator(
            carrier,
            args.method,
            args.expect,
            coordinator_id=args.coordinator_id,
            timeout=args.timeout,
            fit_path=args.fit_out,
        )
    finally:
        carrier.close()
    received = sum(carrier.received.values())
    broadcasts = sum(carrier.sent.values()) - (1 if args.carrier == "file" else 0)
    print(f"messages: {received} from sites, {broadcasts} broadcast", file=sys.stderr)
    print(wald(fit, args.level).table())
    return 0


def cmd_serve_site(args, parser) -> int:
    _check_carrier(args, parser, "connect")
    data = load_dataset(args.data, site_id=args.site_id)
    if args.carrier == "file":
        carrier = transport.FileCarrier(args.dir, args.study)
    else:
        carrier = transport.TcpSiteCarrier(*args.connect, args.study, connect_timeout=args.timeout)
    transport.run_site(carrier, data, args.method, args.site_id, timeout=args.timeout)
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "coordinate": cmd_coordinate,
    "serve-site": cmd_serve_site,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args, parser)
    except Timeout as exc:
        print(f"fedrd: timeout: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    except ProtocolError as exc:
        print(f"fedrd: protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except SingularInformation as exc:
        print(f"fedrd: singular information matrix: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except (FedRDError, ValueError, OSError) as exc:
        print(f"fedrd: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
