"""Pure-Python implementations of the per-step loops.

Semantics (and floating-point operation order) match ``_kernels.pyx`` exactly,
so both backends produce bit-identical results.  Plain lists and floats are
used instead of numpy because per-step array overhead dominates for the small
vectors involved.
"""
from bisect import bisect_right

import numpy as np


def sample_path(cdf, init_cdf, u):
    """states[0] from ``init_cdf``; states[t + 1] from row ``states[t]``.

    Index = first j with ``u < cdf[j]`` (a draw on a boundary takes the higher index).
    """
    rows = [list(map(float, r)) for r in np.asarray(cdf)]
    uu = np.asarray(u, dtype=np.float64).tolist()
    out = [0] * len(uu)
    if not uu:
        return np.zeros(0, dtype=np.int64)
    x = bisect_right(list(map(float, init_cdf)), uu[0])
    out[0] = x
    for t in range(1, len(uu)):
        x = bisect_right(rows[x], uu[t])
        out[t] = x
    return np.asarray(out, dtype=np.int64)


def linear_td_run(s, s_next, X, r, gamma, alphas, w0, record):
    """Linear TD; step t reads path element t + 1.  Returns iterates at ``record`` steps."""
    feats = [list(map(float, row)) for row in np.asarray(X)]
    rr = np.asarray(r, dtype=np.float64).tolist()
    sl = np.asarray(s, dtype=np.int64).tolist()
    sn = np.asarray(s_next, dtype=np.int64).tolist()
    al = np.asarray(alphas, dtype=np.float64).tolist()
    rec = np.asarray(record, dtype=np.int64).tolist()
    gamma = float(gamma)
    w = [float(v) for v in w0]
    d = len(w)
    out = np.empty((len(rec), d))
    k = 0
    while k < len(rec) and rec[k] == 0:
        out[k] = w
        k += 1
    for t in range(len(al)):
        if k >= len(rec):
            break
        x = feats[sl[t + 1]]
        xn = feats[sn[t + 1]]
        v = 0.0
        vn = 0.0
        for i in range(d):
            v += x[i] * w[i]
            vn += xn[i] * w[i]
        c = al[t] * (rr[sl[t + 1]] + gamma * vn - v)
        for i in range(d):
            w[i] += c * x[i]
        while k < len(rec) and rec[k] == t + 1:
            out[k] = w
            k += 1
    return out


def q_learning_run(s, a, s_next, R, gamma, alphas, q0, record):
    """Tabular Q-learning along (s, a, s') triples; step t reads element t + 1."""
    RR = [list(map(float, row)) for row in np.asarray(R)]
    q = [list(map(float, row)) for row in np.asarray(q0)]
    sl = np.asarray(s, dtype=np.int64).tolist()
    al_ = np.asarray(a, dtype=np.int64).tolist()
    sn = np.asarray(s_next, dtype=np.int64).tolist()
    alphas = np.asarray(alphas, dtype=np.float64).tolist()
    rec = np.asarray(record, dtype=np.int64).tolist()
    gamma = float(gamma)
    nS, nA = len(q), len(q[0])
    out = np.empty((len(rec), nS, nA))
    k = 0
    while k < len(rec) and rec[k] == 0:
        out[k] = q
        k += 1
    for t in range(len(alphas)):
        if k >= len(rec):
            break
        i = sl[t + 1]
        j = al_[t + 1]
        row = q[sn[t + 1]]
        m = row[0]
        for b in range(1, nA):
            if row[b] > m:
                m = row[b]
        qi = q[i]
        qi[j] += alphas[t] * (RR[i][j] + gamma * m - qi[j])
        while k < len(rec) and rec[k] == t + 1:
            out[k] = q
            k += 1
    return out


def rs_envelope(z0, T, C):
    """z[n + 1] = max(0, 1 - T[n]) z[n] + C T[n]^2."""
    TT = np.asarray(T, dtype=np.float64).tolist()
    C = float(C)
    z = float(z0)
    out = [z]
    for tn in TT:
        f = 1.0 - tn
        if f < 0.0:
            f = 0.0
        z = f * z + C * (tn * tn)
        out.append(z)
    return np.asarray(out)
