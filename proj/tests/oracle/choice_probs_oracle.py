#!/usr/bin/env python3
"""High-precision MNL choice probabilities for a fixed instance.

Golden values for tests/test_mnl.cpp, computed at 50 significant digits with
mpmath so the doubles pinned in the test are correctly rounded.
"""
from mpmath import mp, mpf, exp

mp.dps = 50

# Fixed instance: d = 4, three displayed items, outside utility 0.
theta = [mpf("0.3"), mpf("-0.7"), mpf("0.2"), mpf("0.5")]
phis = [
    [mpf("0.9"), mpf("0.1"), mpf("-0.4"), mpf("0.2")],
    [mpf("-0.3"), mpf("0.8"), mpf("0.5"), mpf("-0.6")],
    [mpf("0.0"), mpf("-0.2"), mpf("0.7"), mpf("0.9")],
]

utils = [sum(p * t for p, t in zip(phi, theta)) for phi in phis]
den = mpf(1) + sum(exp(u) for u in utils)

print("utilities:")
for u in utils:
    print(f"  {mp.nstr(u, 20)}")
print("probabilities (outside first):")
print(f"  p0 = {mp.nstr(1 / den, 20)}")
for u in utils:
    print(f"  p  = {mp.nstr(exp(u) / den, 20)}")
