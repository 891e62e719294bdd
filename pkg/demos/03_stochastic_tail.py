"""
Backlog tails of a fork-join system
===================================

Deterministic envelopes are pessimistic for random traffic. The stochastic
view instead asks how often the backlog exceeds a level ``x``. Its key
ingredient is the tail of the workload that a single server running at the
aggregate rate M would see. A quantized splitter costs a constant shift on
the x-axis and nothing more.
"""

import numpy as np

from fjcalc.forkjoin import ForkJoinSystem, SplitPolicy
from fjcalc.stochastic import empirical_gsbb, measured_envelope, verify_claim2
from fjcalc.workload import GeneratorSpec, generate

M = 2.0
source = GeneratorSpec("onoff", rate=1.0, on=1.0, off=1.0, horizon=5000.0, seed=3).with_mean_rate(0.8 * M)
A = generate(source)
print("on-off source: peak %.2f, mean %.2f, load %.0f%%" % (source.rate, source.mean_rate, 100 * source.mean_rate / M))

# Empirical tail of the rate-M workload, read at stationary sample times.
xs = np.arange(0.0, 21.0, 4.0)
phi = empirical_gsbb(A, M, xs)
for x, p in zip(phi.xs, phi.phi):
    print("  P(W >= %4.1f) ~ %.4f" % (x, p))

# The same trace seen through token buckets: burst needed at each rate.
for point in measured_envelope(A, [1.7, 2.0, 3.2]):
    print("  rate %.1f needs burst %.2f" % (point.rho, point.sigma))

# Two unequal servers behind a round-robin splitter with 0.25-unit chunks.
system = ForkJoinSystem(mu=(0.5, 1.5), split=SplitPolicy("quantized", quantum=0.25))
print("shift 2M max(eps/mu) = %.2f" % system.shift)
checked = system.shift + np.array([0.5, 2.0, 5.0, 10.0])
report = verify_claim2(system, source, checked, replicas=8, samples=4000, seed=1)
print(report.to_csv())
print("bound respected at every x:", report.ok)
