"""
Fork-join delay: bound versus simulation
========================================

Work is split over three parallel servers of different speeds and a job
leaves only once every share of it is done. The deterministic bound says
every bit of work that arrived by ``t - d`` has left by ``t``. Here we simulate
a bursty source and watch how much room the bound leaves.
"""

import numpy as np

from fjcalc.curves import rate_latency, token_bucket
from fjcalc.forkjoin import ForkJoinSystem, SplitPolicy, simulate, split, verify_claim1
from fjcalc.workload import GeneratorSpec, generate

mu = (1.0, 2.0, 3.0)
M = sum(mu)
latency = 0.5
system = ForkJoinSystem(mu=mu, service_curves=tuple(rate_latency(m, latency) for m in mu))

# Poisson batches at 70% load.
source = GeneratorSpec("poisson-batch", rate=0.7 * M, batch_mean=1.0, horizon=200.0, seed=7)
A = generate(source)
print("arrivals: %d batches, %.1f units of work" % (len(A), A.total))

# With only an aggregate token bucket given, per-queue envelopes are measured
# on the realised shares.
report = verify_claim1(system, A, grid=0.05, aggregate_envelope=token_bucket(10.0, 0.7 * M))
print("per-queue delay bounds:", np.round(report.queue_bounds, 3))
print("end-to-end bound d = %.3f s" % report.delay_bound)
print("minimum slack D(t) - A(t - d) = %.4f" % report.min_slack)
print("bound holds:", report.ok)
# At t = 0 both sides vanish, so the interesting slack is the one after d.
late = report.t > report.delay_bound
print("minimum slack for t > d = %.4f" % report.slack[late].min())

# How much work piles up in practice?
sim = simulate(system, A, grid=0.05)
ts = sim.times
print("largest observed backlog A - D: %.3f units" % np.max(A(ts) - sim.D(ts)))

# A quantized splitter (round robin in chunks of 0.5 units) lets the shares
# drift from their fair proportions by at most one chunk.
q = ForkJoinSystem(mu=mu, split=SplitPolicy("quantized", quantum=0.5))
parts = split(A, q)
t = np.linspace(0, A.horizon, 2001)
drift = max(np.max(np.abs(p(t) - m / M * A(t))) for p, m in zip(parts, mu))
print("quantized split: epsilon = %s, worst drift seen = %.3f" % (q.epsilon, drift))
