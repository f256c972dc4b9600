"""Run the comparison studies through the command line harness and print their tables.

    python3 demos/study_tables.py [out_dir]

Covers the covariance-gap comparison, condition numbers, log-scores for both
kernels and the n=10,000 timing. Takes a few minutes.
"""
import os
import sys

from mralp import cli

here = os.path.dirname(os.path.abspath(__file__))
out = sys.argv[1] if len(sys.argv) > 1 else "study_out"
jobs = [("frobenius", "frobenius.yaml"), ("condnum", "condnum.yaml"), ("logscore", "logscore_exponential.yaml"),
        ("logscore", "logscore_gaussian.yaml"), ("timing", "timing.yaml")]
for task, name in jobs:
    cfg = cli.load_config(os.path.join(here, "configs", name), task)
    d = os.path.join(out, name.replace(".yaml", ""))
    for f in cli.run_task(cfg, d):
        print(f"== {name}: {f}")
        with open(os.path.join(d, f)) as fh:
            print("".join(line for line in fh if not line.startswith("#")))
