"""Slow, independent reference implementations used as test oracles."""

import numpy as np


def oracle_sigma(x1, x2):
    """Plain-loop transcription of the paired covariance estimator."""
    x1 = [list(map(float, r)) for r in x1]
    x2 = [list(map(float, r)) for r in x2]
    n, d = len(x1), len(x1[0])

    def pieces(x):
        N = [sum(r) for r in x]
        Nd = sum(N)
        Nsq = sum(v * v for v in N)
        Nc = (Nd * Nd - Nsq) / ((n - 1) * Nd)
        pi = [sum(r[j] for r in x) / Nd for j in range(d)]
        rows = [[r[j] / N[i] for j in range(d)] for i, r in enumerate(x)]
        S = [[0.0] * d for _ in range(d)]
        G = [[0.0] * d for _ in range(d)]
        for i in range(n):
            for a in range(d):
                for b in range(d):
                    S[a][b] += N[i] * (rows[i][a] - pi[a]) * (rows[i][b] - pi[b]) / (n - 1)
                    diag = rows[i][a] if a == b else 0.0
                    G[a][b] += N[i] * (diag - rows[i][a] * rows[i][b]) / (Nd - n)
        return N, Nd, Nsq, Nc, pi, rows, S, G

    N1, Nd1, Nsq1, Nc1, pi1, r1, S1, G1 = pieces(x1)
    N2, Nd2, Nsq2, Nc2, pi2, r2, S2, G2 = pieces(x2)
    out = [[0.0] * d for _ in range(d)]
    s12 = [[0.0] * d for _ in range(d)]
    for i in range(n):
        w = (N1[i] + N2[i]) / (Nc1 + Nc2)
        for a in range(d):
            for b in range(d):
                s12[a][b] += w * (r1[i][a] - pi1[a]) * (r2[i][b] - pi2[b]) / (n - 1)
    cross = sum(N1[i] * N2[i] for i in range(n)) / (Nd1 * Nd2)
    for a in range(d):
        for b in range(d):
            for S, G, Nc, Nd, Nsq in ((S1, G1, Nc1, Nd1, Nsq1), (S2, G2, Nc2, Nd2, Nsq2)):
                out[a][b] += (S[a][b] + (Nc - 1) * G[a][b]) / (Nc * Nd)
                out[a][b] += (Nsq - Nd) / (Nc * Nd * Nd) * (S[a][b] - G[a][b])
            out[a][b] -= cross * (s12[a][b] + s12[b][a])
    return np.array(out), np.array(s12)
