"""Seeded case generators shared by unit and acceptance tests."""
import numpy as np

from mmtad.detection import ActionSegment


def disc(rng, center, radius, n):
    r = radius * np.sqrt(rng.uniform(size=n))
    a = rng.uniform(0, 2 * np.pi, size=n)
    return np.column_stack([center[0] + r * np.cos(a), center[1] + r * np.sin(a)])


def two_clusters(seed=0):
    rng = np.random.default_rng(seed)
    return np.vstack([disc(rng, (5, 0), 0.1, 100), disc(rng, (0, 5), 0.1, 100)])


def random_dataset(rng):
    n = int(rng.integers(50, 501))
    k = int(rng.integers(1, 5))
    centers = rng.uniform(-8, 8, size=(k, 2))
    scales = rng.uniform(0.2, 2.0, size=k)
    lab = rng.integers(k, size=n)
    return centers[lab] + rng.normal(size=(n, 2)) * scales[lab, None]


def score_matrix(rng, T, C):
    """Blocky scores with noise; some entries land exactly on 0.5."""
    base = np.repeat(rng.uniform(size=(rng.integers(1, 6), C)), T, axis=0)
    base = base[np.sort(rng.integers(0, len(base), size=T))]
    y = np.clip(base + rng.normal(scale=0.25, size=(T, C)), 0.0, 1.0)
    y[rng.uniform(size=(T, C)) < 0.05] = 0.5
    return y


def regression_cases(n=500, seed=0):
    """``(Yhat, theta, N, T, Q)`` tuples; half with T divisible by N, half ragged."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        N = int(rng.choice([2, 4, 8]))
        if i % 2 == 0:
            Q = int(rng.integers(1, 64 // N + 1))
            T = N * Q
        else:
            T = int(rng.integers(N, 65))
            Q = -(-T // N)
        C = int(rng.integers(1, 6))
        theta = float(rng.choice([0.5, rng.uniform(0.2, 0.8)]))
        out.append((score_matrix(rng, T, C), theta, N, T, Q))
    return out


def random_detection_case(rng, n_videos=3, C=3, T=80):
    gt, pred = [], []
    for v in range(n_videos):
        name = f"v{v}"
        for _ in range(rng.integers(1, 4)):
            s = int(rng.integers(0, T - 10))
            gt.append(ActionSegment(int(rng.integers(C)), s, s + int(rng.integers(3, 10)), video=name))
        for _ in range(rng.integers(0, 7)):
            s = int(rng.integers(0, T - 10))
            # scores on a coarse grid: distinct values stay distinct under affine maps
            pred.append(ActionSegment(int(rng.integers(C)), s, s + int(rng.integers(1, 12)),
                                      float(rng.integers(1, 1000)) / 1000, name))
    return pred, gt
