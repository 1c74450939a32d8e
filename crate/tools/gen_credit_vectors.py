"""Regenerates testdata/credit_vectors.json.

Norms are computed with mpmath at 50 digits and rounded once to double.
"""
import json
import random

import mpmath

mpmath.mp.dps = 50
SLACK = 1e-6


def norm(delta, q):
    xs = [mpmath.mpf(d) for d in delta]
    if q == "inf":
        return max((abs(x) for x in xs), default=mpmath.mpf(0))
    q = mpmath.mpf(q)
    return mpmath.power(sum(mpmath.power(abs(x), q) for x in xs), 1 / q)


def case(delta, q, radius, note=""):
    n = norm(delta, q)
    c = {
        "delta": delta,
        "q": q,
        "norm": float(n),
        "radius": radius,
        "accept": bool(n <= mpmath.mpf(radius) * (1 + mpmath.mpf(SLACK))),
    }
    if note:
        c["note"] = note
    return c


def main():
    rng = random.Random(20161)
    cases = [
        case([6.0, -5.0], 1, 10.0, "l1 panel"),
        case([3.0, 4.0], 2, 5.0, "l2 panel"),
        case([-7.0, 2.0, 7.0], "inf", 7.0, "linf panel"),
        case([0.0, 0.0, 0.0, 0.0], 1, 1.0, "no move"),
        case([0.0, 0.0], 2, 1e-9),
        case([0.0], "inf", 0.5),
        case([1e-300, -1e-300], 2, 1.0, "tiny"),
        case([1e150, 1e150], 2, 1e151, "overflow-safe"),
        case([3e-160, 4e-160], 2, 1.0, "underflow-safe"),
        case([2.0, 0.0], 1, 2.0, "exactly at radius"),
        case([2.0 * (1 + 5e-7), 0.0], 1, 2.0, "inside slack"),
        case([2.0 * (1 + 2e-6), 0.0], 1, 2.0, "outside slack"),
        case([1.0, 1.0], 2, 1.4142135, "just under sqrt2 radius"),
        case([60.0, -60.0, 60.0, -60.0], "inf", 60.0),
        case([60.0, -60.0, 60.0, -60.0], 2, 120.0),
        case([60.0, -60.0, 60.0, -60.0], 1, 200.0),
        case([1.0, 2.0, 3.0], 3, 3.5),
        case([1.0, 2.0, 3.0], 1.5, 4.0),
        case([-0.5, 0.25], 4, 0.6),
    ]
    qs = [1, 2, "inf", 1.5, 3]
    while len(cases) < 80:
        q = qs[len(cases) % len(qs)]
        m = rng.choice([1, 2, 3, 4, 4, 6])
        scale = rng.choice([1.0, 10.0, 100.0, 0.01])
        delta = [round(rng.uniform(-scale, scale), 6) for _ in range(m)]
        n = float(norm(delta, q))
        radius = round(n * rng.choice([0.8, 0.95, 1.05, 1.5]), 6) or 1.0
        cases.append(case(delta, q, radius))
    with open("testdata/credit_vectors.json", "w") as f:
        json.dump({"slack": SLACK, "cases": cases}, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
