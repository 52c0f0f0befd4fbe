#!/usr/bin/env python3
"""Run the acceptance criteria and write one JSON line per criterion.

    python3 scripts/run_acceptance.py                 # full scale
    python3 scripts/run_acceptance.py --reduced -c 1 2 10
"""
import argparse
import json
import sys

from burgulence.checks import SuiteScale, run_suite


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--reduced", action="store_true", help="smaller grids and ensembles")
    ap.add_argument("-c", "--criteria", type=int, nargs="+", help="subset of criteria (1-11)")
    ap.add_argument("-o", "--out", help="write results as NDJSON here")
    args = ap.parse_args()
    scale = SuiteScale.reduced() if args.reduced else SuiteScale()
    results = run_suite(scale, args.criteria)
    if args.out:
        with open(args.out, "w") as fh:
            for r in results:
                fh.write(json.dumps({"criterion": r.criterion, "title": r.title, "passed": r.passed,
                                     "elapsed": r.elapsed, "details": r.details}, default=float) + "\n")
    failed = [r.criterion for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed" + (f"; failing {failed}" if failed else ""))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
