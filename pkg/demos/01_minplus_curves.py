"""
Min-plus curves in a few lines
==============================

A token-bucket source feeding a rate-latency server: how long can a unit of
work wait, and what does the output envelope look like?
"""

import numpy as np

from fjcalc.curves import (
    convolve, evaluate, horizontal_deviation, identity, rate_latency, token_bucket,
)

# A source that may dump 4 units at once, then 1 unit/s on average.
b = token_bucket(4.0, 1.0)
# A server that starts after 3 s and then works at 2 units/s.
s = rate_latency(2.0, 3.0)

print("arrival envelope   b:", b.segments, "inf_from =", b.inf_from)
print("service curve      s:", s.segments)

# The worst-case delay is the largest horizontal gap between b and s.
# For this pair it is T + sigma / R = 3 + 4 / 2.
d = horizontal_deviation(b, s)
print("delay bound:", d)

# Curves are left-continuous, so b(0) = 0 and the burst appears just after.
# Convolving with the zero-delay identity changes nothing...
t = np.linspace(0.0, 10.0, 6)
print("b(t)          :", evaluate(b, t))
print("(b * delta0)(t):", evaluate(convolve(b, identity()), t))

# ...while two servers in tandem behave like one with summed latency and
# the smaller rate.
tandem = convolve(s, rate_latency(1.5, 1.0))
print("tandem service :", tandem.segments)
print("delay through the tandem:", horizontal_deviation(b, tandem))
