"""Sequential minimal optimisation for the epsilon-SVR dual.

The dual is written in the 2n-variable form

    min 0.5 a^T Q a + p^T a,   s^T a = 0,   0 <= a <= C

with ``a = [alpha, alpha*]``, ``s = [+1]*n + [-1]*n``,
``Q_ij = s_i s_j K(x_i mod n, x_j mod n)`` and ``p = [eps - y, eps + y]``.
Working pairs are the maximal violating pair. Both backends return
``(a, G, iterations)`` where ``G = Q a + p`` is the final gradient.
"""
import numpy as np

from .._accel import njit

TAU = 1e-12


def smo_numpy(K, y, C, eps, tol, max_iter):
    n = y.shape[0]
    s = np.concatenate([np.ones(n), -np.ones(n)])
    a = np.zeros(2 * n)
    G = np.concatenate([eps - y, eps + y])
    src = np.concatenate([np.arange(n), np.arange(n)])
    it = 0
    while it < max_iter:
        up = ((s > 0) & (a < C)) | ((s < 0) & (a > 0))
        low = ((s > 0) & (a > 0)) | ((s < 0) & (a < C))
        score = -s * G
        up_score = np.where(up, score, -np.inf)
        low_score = np.where(low, score, np.inf)
        i = int(np.argmax(up_score))
        j = int(np.argmin(low_score))
        if up_score[i] - low_score[j] < tol:
            break
        qii = K[src[i], src[i]]
        qjj = K[src[j], src[j]]
        qij = s[i] * s[j] * K[src[i], src[j]]
        ai_old, aj_old = a[i], a[j]
        ai, aj = _pair_update(ai_old, aj_old, G[i], G[j], s[i], s[j], qii, qjj, qij, C)
        a[i], a[j] = ai, aj
        dai, daj = ai - ai_old, aj - aj_old
        G += s * (s[i] * dai * K[src, src[i]] + s[j] * daj * K[src, src[j]])
        it += 1
    return a, G, it


@njit(cache=True, nogil=True)
def _pair_update(ai, aj, gi, gj, si, sj, qii, qjj, qij, C):
    if si != sj:
        quad = qii + qjj + 2.0 * qij
        if quad <= 0.0:
            quad = TAU
        delta = (-gi - gj) / quad
        diff = ai - aj
        ai += delta
        aj += delta
        if diff > 0.0:
            if aj < 0.0:
                aj = 0.0
                ai = diff
        else:
            if ai < 0.0:
                ai = 0.0
                aj = -diff
        if diff > 0.0:
            if ai > C:
                ai = C
                aj = C - diff
        else:
            if aj > C:
                aj = C
                ai = C + diff
    else:
        quad = qii + qjj - 2.0 * qij
        if quad <= 0.0:
            quad = TAU
        delta = (gi - gj) / quad
        total = ai + aj
        ai -= delta
        aj += delta
        if total > C:
            if ai > C:
                ai = C
                aj = total - C
        else:
            if aj < 0.0:
                aj = 0.0
                ai = total
        if total > C:
            if aj > C:
                aj = C
                ai = total - C
        else:
            if ai < 0.0:
                ai = 0.0
                aj = total
    return ai, aj


@njit(cache=True, nogil=True)
def smo_numba(K, y, C, eps, tol, max_iter):
    n = y.shape[0]
    m = 2 * n
    s = np.empty(m)
    a = np.zeros(m)
    G = np.empty(m)
    for t in range(n):
        s[t] = 1.0
        s[t + n] = -1.0
        G[t] = eps - y[t]
        G[t + n] = eps + y[t]
    it = 0
    while it < max_iter:
        i = -1
        j = -1
        gmax = -np.inf
        gmin = np.inf
        for t in range(m):
            score = -s[t] * G[t]
            if (s[t] > 0 and a[t] < C) or (s[t] < 0 and a[t] > 0):
                if score > gmax:
                    gmax = score
                    i = t
            if (s[t] > 0 and a[t] > 0) or (s[t] < 0 and a[t] < C):
                if score < gmin:
                    gmin = score
                    j = t
        if i < 0 or j < 0 or gmax - gmin < tol:
            break
        ii = i % n
        jj = j % n
        ai_old = a[i]
        aj_old = a[j]
        ai, aj = _pair_update(ai_old, aj_old, G[i], G[j], s[i], s[j],
                              K[ii, ii], K[jj, jj], s[i] * s[j] * K[ii, jj], C)
        a[i] = ai
        a[j] = aj
        ci = s[i] * (ai - ai_old)
        cj = s[j] * (aj - aj_old)
        for t in range(m):
            tt = t % n
            G[t] += s[t] * (ci * K[tt, ii] + cj * K[tt, jj])
        it += 1
    return a, G, it
