#!/usr/bin/env python3
"""Independent transcription of the MNL confidence-radius formula.

Computes golden values that tests/test_mnl.cpp pins. Run from anywhere:

    python3 tests/oracle/confidence_radius_oracle.py
"""
import math


def radius(k: int, d: int, M: int, B: float, delta: float) -> float:
    eta = 0.5 * math.log(M + 1) + B + 1
    lam = 84.0 * math.sqrt(2.0) * d * eta
    inner = (
        11.0 * (3.0 * math.log(1.0 + (M + 1) * k) + B + 2.0)
        * math.log(2.0 * math.sqrt(1.0 + 2.0 * k) / delta)
        + 2.0
        + (7.0 * math.sqrt(6.0) / 6.0) * d * eta * math.log(1.0 + (k + 1.0) / (2.0 * lam))
        + 2.0
    )
    return math.sqrt(2.0 * eta * inner + 4.0 * lam * B * B)


if __name__ == "__main__":
    for (k, d, M, B, delta) in [
        (1, 5, 6, 1.0, 0.1),
        (2000, 5, 6, 1.0, 0.1),
        (1, 5, 6, 1.0, 0.05),
    ]:
        print(f"k={k} d={d} M={M} B={B} delta={delta} -> {radius(k, d, M, B, delta):.15g}")
