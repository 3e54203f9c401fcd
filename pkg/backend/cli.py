"""
Command-line entry point: run bundled or user scenarios and check their
certificates, or compare an existing trace with the radial solution.

    python backend/cli.py --config scenarios/radial-loop.json
    python backend/cli.py --config a.json --config b.json --jobs 2 --out out/
    python backend/cli.py --compare-radial out/radial-loop/trace.csv --mu-plus 0.2 --mu-minus 0.2

Exit codes: 0 all certificates pass, 1 a certificate failed, 2 invalid
configuration, 3 solver or I/O failure.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from utils.errors import ConfigError, DropletError  # noqa: E402
from utils.geometry import HysteresisParams  # noqa: E402
from utils.scenario import (  # noqa: E402
    EXIT_CERTIFICATE, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, compare_radial, load_scenario,
    load_trace_csv, run_scenario,
)
from utils.verify import CERTIFICATE_NAMES  # noqa: E402

logger = logging.getLogger("cli")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _configure_logging(level: int) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)
    logging.captureWarnings(True)


def _certificate_list(value: str) -> Tuple[str, ...]:
    names = tuple(n.strip() for n in value.split(',') if n.strip())
    unknown = [n for n in names if n not in CERTIFICATE_NAMES]
    if unknown:
        raise argparse.ArgumentTypeError(
            f"unknown certificate(s) {', '.join(unknown)}; choose from {', '.join(CERTIFICATE_NAMES)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Simulate droplet evolution with contact angle hysteresis and verify the trace")
    parser.add_argument("--config", type=Path, action="append", default=[],
                        help="Scenario JSON file (repeat for a batch)")
    parser.add_argument("--out", help="Output root; each scenario writes to OUT/<name>")
    parser.add_argument("--snapshots", type=int, metavar="N",
                        help="Write a PGM mask every N steps (0 = off)")
    parser.add_argument("--verify", type=_certificate_list, metavar="LIST",
                        help="Comma-separated certificates to check (default: the scenario's list)")
    parser.add_argument("--jobs", type=int, default=1, help="Scenarios to run in parallel")
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    parser.add_argument("--verbose", action="store_true", help="Log every step")
    parser.add_argument("--compare-radial", type=Path, metavar="TRACE.csv",
                        help="Compare an existing trace CSV with the radial solution")
    parser.add_argument("--mu-plus", type=float, help="μ₊ for --compare-radial")
    parser.add_argument("--mu-minus", type=float, help="μ₋ for --compare-radial")
    parser.add_argument("--h", type=float, help="Grid spacing for --compare-radial tolerances")
    parser.add_argument("--droplets", type=int, default=1,
                        help="Number of equal droplets in the trace for --compare-radial")
    return parser


def _log_level(args) -> int:
    if args.quiet:
        return logging.WARNING
    if args.verbose:
        return logging.DEBUG
    return logging.INFO


# ============================================================
# Scenario runs
# ============================================================

def run_one(path: Path, out: Optional[str] = None, snapshots: Optional[int] = None,
            certificates: Optional[Sequence[str]] = None,
            level: Optional[int] = None) -> Tuple[int, List[str]]:
    """Run a scenario file; returns (exit code, one summary line per certificate)."""
    if level is not None:
        _configure_logging(level)
    try:
        scenario = load_scenario(path)
    except ConfigError as e:
        lines = [f"{path}: {e}"] + [f"  {issue}" for issue in (e.issues or [])]
        return EXIT_CONFIG, lines
    try:
        outcome = run_scenario(scenario, out_root=out, snapshot_stride=snapshots,
                               certificates=certificates)
    except ConfigError as e:
        return EXIT_CONFIG, [f"{path}: {e}"]
    except (DropletError, OSError) as e:
        logger.error("%s failed: %s", path, e)
        return EXIT_RUNTIME, [f"{path}: {e}"]
    lines = [f"{scenario.name}: {cert.summary()}" for cert in outcome.certificates.values()]
    if outcome.comparison is not None:
        lines.append(f"{scenario.name}: {outcome.comparison.summary()}")
    return outcome.exit_code, lines


def _batch(args) -> int:
    level = _log_level(args)
    jobs = [(path, args.out, args.snapshots, args.verify) for path in args.config]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(run_one, *job, level) for job in jobs]
            results = [f.result() for f in futures]
    else:
        results = [run_one(*job) for job in jobs]

    for _, lines in results:
        for line in lines:
            print(line)
    codes = [code for code, _ in results]
    # the most severe failure wins: runtime > config > certificate
    for code in (EXIT_RUNTIME, EXIT_CONFIG, EXIT_CERTIFICATE):
        if code in codes:
            return code
    return EXIT_OK


def _compare(args) -> int:
    if args.mu_plus is None or args.mu_minus is None:
        print("--compare-radial needs --mu-plus and --mu-minus", file=sys.stderr)
        return EXIT_CONFIG
    try:
        params = HysteresisParams(args.mu_plus, args.mu_minus)
        frame = load_trace_csv(args.compare_radial)
        comparison = compare_radial(frame, params, h=args.h, droplets=args.droplets)
    except ConfigError as e:
        print(f"{args.compare_radial}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DropletError as e:
        print(f"{args.compare_radial}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    target = args.compare_radial.with_name(args.compare_radial.stem + "_radial.csv")
    comparison.frame.to_csv(target, index=False, float_format='%.17g')
    print(comparison.summary())
    print(f"per-step errors written to {target}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(_log_level(args))
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    if args.snapshots is not None and args.snapshots < 0:
        parser.error("--snapshots must be >= 0")
    if args.compare_radial is not None:
        return _compare(args)
    if not args.config:
        parser.error("--config is required")
    return _batch(args)


if __name__ == "__main__":
    sys.exit(main())
