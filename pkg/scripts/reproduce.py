#!/usr/bin/env python3
"""Run the full experiment suite end to end.

Trains the single clean and poisoned models, builds the defense
ensemble, compares all five scenarios under the default attack, and
runs the arrival-rate sweep.  Everything lands under --out:

    artifacts/
        model.ckpt            clean single model
        attacked_model.ckpt   model trained under observation forgery
        ensemble/             defense ensemble manifest + members
        compare/              per-slot metrics + summary, five scenarios
        sweep/                arrival sweep metrics + summary
        dimension.csv         per-slice VNF dimensioning table

With --quick the training budgets drop to a smoke-test size; results
are then indicative only.
"""

import argparse
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from slice_arena import paper_config_path
from slice_arena.cli import main as cli_main


def run(argv: list) -> None:
    label = " ".join(argv)
    print(f"==> slice-arena {label}", flush=True)
    start = time.time()
    code = cli_main(argv)
    if code != 0:
        raise SystemExit(f"step failed ({code}): slice-arena {label}")
    print(f"<== done in {time.time() - start:.0f}s", flush=True)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=paper_config_path())
    parser.add_argument("--out", default="artifacts")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=200_000,
                        help="env steps for the single models")
    parser.add_argument("--ensemble-steps", type=int, default=240_000,
                        help="env steps per ensemble member")
    parser.add_argument("--quick", action="store_true",
                        help="tiny budgets, smoke test only")
    args = parser.parse_args()

    steps = 4096 if args.quick else args.steps
    ensemble_steps = 2048 if args.quick else args.ensemble_steps
    shared = ["--config", args.config, "--out", args.out,
              "--seed", str(args.seed)]

    run(["dimension", *shared])
    run(["train", *shared, "--steps", str(steps)])
    run(["train-ensemble", *shared, "--steps", str(ensemble_steps)])
    run(["compare", *shared])
    run(["sweep", *shared, "--scenarios", "random,optimal"])
    print(f"all artifacts under {args.out}/", flush=True)


if __name__ == "__main__":
    main()
