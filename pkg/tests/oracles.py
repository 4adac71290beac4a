"""Independent reference computations used as test oracles.

Nothing here imports the ops it checks: loops and direct formulas only.
"""
import math

import mpmath
import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def softmax_mp(row, dps=50):
    with mpmath.workdps(dps):
        es = [mpmath.exp(mpmath.mpf(float(v))) for v in row]
        tot = mpmath.fsum(es)
        return np.array([float(e / tot) for e in es])


def layer_norm_stats(row, gain, bias, eps):
    n = len(row)
    mean = sum(row) / n
    var = sum((x - mean) ** 2 for x in row) / n
    return np.array([(x - mean) / math.sqrt(var + eps) * g + b
                     for x, g, b in zip(row, gain, bias)])


def conv1d_loops(x, kernel, bias):
    T, cin = x.shape
    k, _, cout = kernel.shape
    pad = (k - 1) // 2
    out = np.zeros((T, cout))
    for t in range(T):
        for o in range(cout):
            s = bias[o]
            for j in range(k):
                src = t + j - pad
                if 0 <= src < T:
                    for i in range(cin):
                        s += x[src, i] * kernel[j, i, o]
            out[t, o] = s
    return out


def attention_loops(Q, K, V, Zm):
    """Scores, row softmax and weighted sum, one element at a time."""
    T, T2 = Q.shape[0], K.shape[0]
    out = np.zeros((T, V.shape[1]))
    for i in range(T):
        scores = []
        for j in range(T2):
            s = 0.0
            for p in range(Q.shape[1]):
                s += Q[i, p] * K[j, p]
            scores.append(s / math.sqrt(Zm))
        top = max(scores)
        ws = [math.exp(s - top) for s in scores]
        tot = sum(ws)
        ws = [w / tot for w in ws]
        for d in range(V.shape[1]):
            out[i, d] = sum(ws[j] * V[j, d] for j in range(T2))
    return out


def gelu_ref(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def _ln(x, g, b, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _conv(x, w, b):
    k = w.shape[0]
    pad = (k - 1) // 2
    T = x.shape[0]
    xp = np.vstack([np.zeros((pad, x.shape[1])), x, np.zeros((pad, x.shape[1]))])
    out = np.tile(b, (T, 1)).astype(float)
    for t in range(T):
        for j in range(k):
            out[t] += xp[t + j] @ w[j]
    return out


def reference_mma(xs, xm, P, l, kinds, H, Zm):
    parts = []
    for h in range(H):
        g = lambda n: P[f"l{l}.h{h}.{n}"]  # noqa: E731
        qs, ks, vs = xs @ g("wq_s"), xs @ g("wk_s"), xs @ g("wv_s")
        qm, km, vm = xm @ g("wq_m"), xm @ g("wk_m"), xm @ g("wv_m")
        table = {"ss": (qs, ks, vs), "sm": (qs, km, vm), "ms": (qm, ks, vs), "mm": (qm, km, vm)}
        for kind in kinds:
            q, k, v = table[kind]
            parts.append(_softmax(q @ k.T / math.sqrt(Zm)) @ v)
    return _conv(np.hstack(parts), P[f"l{l}.fuse.w"], P[f"l{l}.fuse.b"])


def reference_forward(xs, xm, P, kinds, L, H, Zm, eps=1e-5):
    """Straight-line single-stream forward pass on plain arrays."""
    o = None
    for l in range(L):
        ln = lambda x, n: _ln(x, P[f"l{l}.{n}.g"], P[f"l{l}.{n}.b"], eps)  # noqa: E731
        if l == 0:
            o_hat = reference_mma(ln(xs, "norm_s"), ln(xm, "norm_m"), P, l, kinds, H, Zm) + xs + xm
        else:
            o_hat = reference_mma(ln(o, "norm_s"), ln(o, "norm_m"), P, l, kinds, H, Zm) + o
        hdn = gelu_ref(ln(o_hat, "norm_mlp") @ P[f"l{l}.mlp.w1"] + P[f"l{l}.mlp.b1"])
        o = hdn @ P[f"l{l}.mlp.w2"] + P[f"l{l}.mlp.b2"] + o_hat
    return _softmax(_conv(o, P["head.w"], P["head.b"]))


def loss_loops(Yhat, Y, alpha):
    T, C = Y.shape
    ce = 0.0
    for t in range(T):
        for c in range(C):
            if Y[t, c]:
                ce -= Y[t, c] * math.log(max(Yhat[t, c], 1e-12))
    ratios = []
    for c in range(C):
        if sum(Y[:, c]) == 0:
            continue
        inter = sum(min(Yhat[t, c], Y[t, c]) for t in range(T))
        union = sum(max(Yhat[t, c], Y[t, c]) for t in range(T))
        ratios.append(inter / union)
    return ce + alpha * (1.0 - sum(ratios) / len(ratios))


def regression_transcription(Yhat, theta, Q):
    """Threshold / split / vote / merge / re-split / start-end, written out longhand.

    Returns ``(class, start, end, mean score)`` tuples ordered by class then start.
    """
    T = len(Yhat)
    C = len(Yhat[0])
    B = [[0] * C for _ in range(T)]
    t = 0
    while t < T:
        c = 0
        while c < C:
            if Yhat[t][c] >= theta:
                B[t][c] = 1
            else:
                B[t][c] = 0
            c += 1
        t += 1
    pieces = []
    t = 0
    while t < T:
        pieces.append((t, min(t + Q, T)))
        t += Q
    found = []
    for c in range(C):
        labels = []
        for a, b in pieces:
            total = 0
            for i in range(a, b):
                total += B[i][c]
            labels.append(1 if total >= (b - a) / 2 else 0)
        blocks = []
        n = 0
        while n < len(pieces):
            m = n
            while m + 1 < len(pieces) and labels[m + 1] == labels[n]:
                m += 1
            blocks.append((pieces[n][0], pieces[m][1], labels[n]))
            n = m + 1
        for a, b, lab in blocks:
            if lab != 1:
                continue
            first = last = None
            for i in range(a, b):
                if B[i][c] == 1:
                    if first is None:
                        first = i
                    last = i
            acc = 0.0
            for i in range(first, last + 1):
                acc += Yhat[i][c]
            found.append((c, first, last, acc / (last - first + 1)))
    return found


def gaussian_density(s, mu, cov):
    d = np.asarray(s, float) - np.asarray(mu, float)
    inv = np.linalg.inv(cov)
    return math.exp(-0.5 * d @ inv @ d) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))


def numeric_grad(f, x, idx, h=1e-5):
    """Central difference of scalar ``f()`` w.r.t. ``x[idx]`` (``x`` mutated in place, restored)."""
    old = x[idx]
    x[idx] = old + h
    up = f()
    x[idx] = old - h
    down = f()
    x[idx] = old
    return (up - down) / (2 * h)
