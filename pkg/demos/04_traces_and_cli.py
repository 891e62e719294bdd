"""
From a raw trace to a report
============================

Real traces rarely arrive as ``time,cumulative_work``. This script writes a
job log in milliseconds and bytes, reads it with explicit column names and
unit factors, then hands the same data to the command-line tool.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from fjcalc.cli import main
from fjcalc.workload import INCREMENTS, TraceSpec, load_trace, rng_for, save_trace

tmp = Path(tempfile.mkdtemp(prefix="fjcalc-demo-"))

# A made-up job log: one row per job, out of order, sizes in bytes.
rng = rng_for(12)
n = 400
stamps_ms = 100 * np.round(rng.uniform(0, 600, n))   # logged at 100 ms resolution
sizes = rng.integers(1, 2_000_000, n)
order = rng.permutation(n)
lines = ["job_id,bytes,submitted_ms"]
lines += ["job%03d,%d,%d" % (i, sizes[i], stamps_ms[i]) for i in order]
log = tmp / "jobs.csv"
log.write_text("\n".join(lines) + "\n")

# Seconds and megabytes; rows are sorted on load, jobs sharing a timestamp merge.
spec = TraceSpec(str(log), INCREMENTS, time_unit=1e-3, work_unit=1e-6, sort=True,
                 time_column="submitted_ms", work_column="bytes")
A = load_trace(spec)
print("%d jobs -> %d distinct instants, %.1f MB over %.1f s" % (n, len(A), A.total, A.horizon))

# Re-save in the canonical cumulative format the command-line tool reads.
canonical = tmp / "trace.csv"
save_trace(A, str(canonical), comments=["converted from jobs.csv"])

config = tmp / "system.json"
config.write_text(json.dumps({
    "mu": [10.0, 10.0, 20.0],
    "service_curves": [{"rate_latency": [10.0, 0.2]}, {"rate_latency": [10.0, 0.2]},
                       {"rate_latency": [20.0, 0.1]}],
    "envelopes": [{"token_bucket": [5.0, 4.0]}] * 2 + [{"token_bucket": [10.0, 8.0]}],
}))

print("\n$ fjcalc --config system.json bound")
main(["--config", str(config), "bound"])

print("\n$ fjcalc envelope --trace trace.csv --rhos 20,30,40")
main(["envelope", "--trace", str(canonical), "--rhos", "20,30,40"])

print("\n$ fjcalc gsbb --trace trace.csv --rate 40 --xs 0,2,5,10")
code = main(["gsbb", "--trace", str(canonical), "--rate", "40", "--xs", "0,2,5,10"])
print("exit code", code)
