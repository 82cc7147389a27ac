"""Run (or refresh from cache) the full-scale reproduction experiments.

    python scripts/run_acceptance.py [names...] [--cache results/cache]

Results are cached per run, so an interrupted invocation resumes where it left off.
"""
import argparse
import logging
import time

from txnsim import reproduce
from txnsim.experiments import Runner


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*", default=list(reproduce.ALL))
    ap.add_argument("--cache", default="results/cache")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    with Runner(workers=args.workers, cache_dir=args.cache) as runner:
        for name in args.names:
            t0 = time.time()
            out = reproduce.ALL[name](runner)
            summary = {k: v for k, v in out.items() if k not in ("points", "cells", "boundary")}
            print(f"{name} ({time.time() - t0:.0f}s, {runner.runs} runs, {runner.cache_hits} hits): {summary}",
                  flush=True)
            if "cells" in out:
                for c in out["cells"]:
                    print("   ", c, flush=True)


if __name__ == "__main__":
    main()
