"""Command-line entry point.

    datamarket run <scenario.yaml> [--seed N] [--ticks N]
                   [--journal-out PATH] [--report-out PATH]
    datamarket verify <journal>

Exit codes: 0 all invariants (and the oracle table, if present) pass,
1 invariant failure or tampered journal, 2 input error.
"""

from __future__ import annotations

import argparse
import sys

from . import ledger as ledger_mod
from .errors import ReplayError, ScenarioError
from .runner import run_scenario
from .scenario import load_scenario


def _cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    result = run_scenario(scenario, seed=args.seed, tick_limit=args.ticks)
    text = result.report.render()
    if args.journal_out:
        ledger_mod.write_journal(args.journal_out, result.ledger)
    if args.report_out:
        with open(args.report_out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return result.report.exit_code()


def _cmd_verify(args) -> int:
    try:
        with open(args.journal, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    try:
        market = ledger_mod.verify_journal(data)
    except ReplayError as exc:
        print(f"journal verification failed at sequence {exc.sequence}: {exc.reason}")
        return 1
    print(f"events: {len(market.journal)}")
    print(f"state_digest: {market.state_digest().hex()}")
    print(f"conservation: {'ok' if market.conservation_holds() else 'VIOLATED'}")
    return 0 if market.conservation_holds() else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="datamarket",
        description="Run and verify simulated data-marketplace sessions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario end to end")
    run_p.add_argument("scenario", help="scenario YAML file")
    run_p.add_argument("--seed", type=int, default=None, help="override the network seed")
    run_p.add_argument("--ticks", type=int, default=200, help="tick limit")
    run_p.add_argument("--journal-out", default=None, help="write the ledger journal here")
    run_p.add_argument("--report-out", default=None, help="write the settlement report here")
    run_p.set_defaults(func=_cmd_run)

    verify_p = sub.add_parser("verify", help="replay and check a ledger journal")
    verify_p.add_argument("journal", help="journal file produced by run --journal-out")
    verify_p.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
