import numpy as np
import torch
from itertools import combinations

from CrowdKit.encoders import SimilarityMatrix
from CrowdKit.training import ranking_loss


def main():
    s = np.array([[0.9, 0.8], [0.1, 0.5]])
    print(ranking_loss(SimilarityMatrix(s)).value, loop_ranking_loss(s))

    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(2, 10))
        s = rng.uniform(-1, 1, size=(m, m))
        worst = max(worst, abs(ranking_loss(SimilarityMatrix(torch.from_numpy(s))).value - loop_ranking_loss(s)))

    print("largest difference over 1000 matrices: {}".format(worst))


def loop_ranking_loss(s, pair_mode="all_pairs"):

    m = s.shape[0]
    if pair_mode == "all_pairs":
        pairs = list(combinations(range(m), 2))
    else:
        pairs = [(i - 1, i) for i in range(1, m)]
    # smaller crop i' should not match prompt i better than crop i does
    total = 0.0
    for i_small, i in pairs:
        total += max(0.0, s[i_small, i] - s[i, i])

    return total / len(pairs)


if __name__ == "__main__":
    main()
