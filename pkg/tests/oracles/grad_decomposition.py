"""Independent recomputation of the group gradient decomposition.

Reads a dataset CSV with the stdlib only and evaluates the cross-entropy
gradient of a linear model by explicit loops. Usable as a script:

    python -m tests.oracles.grad_decomposition data.csv w_0 ... w_{d-1} b
"""

import csv
import math
import sys


def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def decomposition(path, weights, bias):
    sums = {"common": None, "rare": None}
    counts = {"common": 0, "rare": 0}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        d = sum(1 for h in reader.fieldnames if h.startswith("x_"))
        for row in reader:
            x = [float(row[f"x_{j}"]) for j in range(d)]
            y = int(row["y"])
            g = row["group"]
            p = _sigmoid(sum(w * v for w, v in zip(weights, x)) + bias)
            r = p - y
            grad = [r * v for v in x] + [r]
            if sums[g] is None:
                sums[g] = [[] for _ in grad]
            for k, v in enumerate(grad):
                sums[g][k].append(v)
            counts[g] += 1
    n = counts["common"] + counts["rare"]
    mean = {g: [math.fsum(col) / counts[g] for col in sums[g]] for g in sums}
    norm = {g: math.sqrt(math.fsum(v * v for v in mean[g])) for g in mean}
    pi = counts["rare"] / n
    return {
        "rare_fraction": pi,
        "norm_common": norm["common"],
        "norm_rare": norm["rare"],
        "contribution_common": (1 - pi) * norm["common"],
        "contribution_rare": pi * norm["rare"],
        "ratio_bound": pi / (1 - pi),
        "contribution_ratio": (pi * norm["rare"]) / ((1 - pi) * norm["common"]),
    }


if __name__ == "__main__":
    vals = [float(v) for v in sys.argv[2:]]
    for k, v in decomposition(sys.argv[1], vals[:-1], vals[-1]).items():
        print(f"{k} {v!r}")
