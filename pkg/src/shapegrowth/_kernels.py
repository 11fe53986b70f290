"""Compiled inner loops."""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def min_distance_to_triangles(x, a, b, c):
    """Smallest Euclidean distance from point x to triangles (a[i], b[i], c[i])."""
    best = np.inf
    for i in range(a.shape[0]):
        ab0 = b[i, 0] - a[i, 0]
        ab1 = b[i, 1] - a[i, 1]
        ab2 = b[i, 2] - a[i, 2]
        ac0 = c[i, 0] - a[i, 0]
        ac1 = c[i, 1] - a[i, 1]
        ac2 = c[i, 2] - a[i, 2]
        ap0 = x[0] - a[i, 0]
        ap1 = x[1] - a[i, 1]
        ap2 = x[2] - a[i, 2]
        d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
        d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
        if d1 <= 0.0 and d2 <= 0.0:
            q0, q1, q2 = a[i, 0], a[i, 1], a[i, 2]
        else:
            bp0 = x[0] - b[i, 0]
            bp1 = x[1] - b[i, 1]
            bp2 = x[2] - b[i, 2]
            d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
            d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
            cp0 = x[0] - c[i, 0]
            cp1 = x[1] - c[i, 1]
            cp2 = x[2] - c[i, 2]
            d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
            d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
            vc = d1 * d4 - d3 * d2
            vb = d5 * d2 - d1 * d6
            va = d3 * d6 - d5 * d4
            if d3 >= 0.0 and d4 <= d3:
                q0, q1, q2 = b[i, 0], b[i, 1], b[i, 2]
            elif d6 >= 0.0 and d5 <= d6:
                q0, q1, q2 = c[i, 0], c[i, 1], c[i, 2]
            elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                v = d1 / (d1 - d3)
                q0, q1, q2 = a[i, 0] + v * ab0, a[i, 1] + v * ab1, a[i, 2] + v * ab2
            elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                w = d2 / (d2 - d6)
                q0, q1, q2 = a[i, 0] + w * ac0, a[i, 1] + w * ac1, a[i, 2] + w * ac2
            elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                q0 = b[i, 0] + w * (c[i, 0] - b[i, 0])
                q1 = b[i, 1] + w * (c[i, 1] - b[i, 1])
                q2 = b[i, 2] + w * (c[i, 2] - b[i, 2])
            else:
                den = 1.0 / (va + vb + vc)
                v = vb * den
                w = vc * den
                q0 = a[i, 0] + ab0 * v + ac0 * w
                q1 = a[i, 1] + ab1 * v + ac1 * w
                q2 = a[i, 2] + ab2 * v + ac2 * w
        e0 = x[0] - q0
        e1 = x[1] - q1
        e2 = x[2] - q2
        dd = e0 * e0 + e1 * e1 + e2 * e2
        if dd < best:
            best = dd
    return np.sqrt(best)


@numba.njit(cache=True)
def min_distance_to_polygon(x0, x1, q):
    best = np.inf
    m = q.shape[0]
    for i in range(m):
        j = i + 1 if i + 1 < m else 0
        ax, ay = q[i, 0], q[i, 1]
        dx, dy = q[j, 0] - ax, q[j, 1] - ay
        ll = dx * dx + dy * dy
        t = 0.0
        if ll > 0.0:
            t = ((x0 - ax) * dx + (x1 - ay) * dy) / ll
            t = min(max(t, 0.0), 1.0)
        ex, ey = x0 - ax - t * dx, x1 - ay - t * dy
        dd = ex * ex + ey * ey
        if dd < best:
            best = dd
    return np.sqrt(best)


_DIRS = np.array([[1.0, 0.0], [0.7071067811865476, 0.7071067811865476],
                  [0.0, 1.0], [-0.7071067811865476, 0.7071067811865476],
                  [-1.0, 0.0], [-0.7071067811865476, -0.7071067811865476],
                  [0.0, -1.0], [0.7071067811865476, -0.7071067811865476]])


@numba.njit(cache=True)
def _plane_distance(x0, x1, q, origin, e1, e2, a, b, c):
    if a.shape[0] == 0:
        return min_distance_to_polygon(x0, x1, q)
    return min_distance_to_triangles(origin + x0 * e1 + x1 * e2, a, b, c)


@numba.njit(cache=True)
def inscribed_center(q, x0, x1, step, tol, origin, e1, e2, a, b, c):
    """Compass search for the point of a plane farthest from a boundary.

    Plane coordinates (x0, x1) map to ``origin + x0*e1 + x1*e2``. The boundary
    is the triangle set (a, b, c) when it is non-empty, else the closed
    in-plane polygon ``q``. The probe length starts at ``step`` and halves
    until below ``tol``. Returns (x0, x1, distance).
    """
    f = _plane_distance(x0, x1, q, origin, e1, e2, a, b, c)
    while step > tol:
        moved = True
        while moved:
            moved = False
            bi = -1
            bf = f
            for k in range(8):
                g = _plane_distance(x0 + step * _DIRS[k, 0], x1 + step * _DIRS[k, 1], q,
                                    origin, e1, e2, a, b, c)
                if g > bf:
                    bf = g
                    bi = k
            if bi >= 0:
                x0 += step * _DIRS[bi, 0]
                x1 += step * _DIRS[bi, 1]
                f = bf
                moved = True
        step *= 0.5
    return x0, x1, f


@numba.njit(cache=True)
def smo_epsilon_svr(K, y, C, eps, tol, max_iter):
    """SMO for the epsilon-SVR dual in the 2N-variable form.

    Variables beta = (alpha, alpha*) with signs s = (+1, -1) minimise
    0.5 beta' Q beta + p' beta, Q_ij = s_i s_j K, p = (eps - y, eps + y),
    subject to s' beta = 0 and 0 <= beta <= C. The working pair is the
    maximal KKT violator; iteration stops when the violation drops below tol.
    Returns (beta, gradient, iterations, converged).
    """
    n = y.shape[0]
    m = 2 * n
    beta = np.zeros(m)
    s = np.ones(m)
    G = np.empty(m)
    for t in range(n):
        s[n + t] = -1.0
        G[t] = eps - y[t]
        G[n + t] = eps + y[t]
    it = 0
    converged = False
    while it < max_iter:
        gmax = -np.inf
        gmax2 = -np.inf
        i = -1
        j = -1
        for t in range(m):
            if s[t] > 0:
                if beta[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
                if beta[t] > 0 and G[t] >= gmax2:
                    gmax2 = G[t]
                    j = t
            else:
                if beta[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    i = t
                if beta[t] < C and -G[t] >= gmax2:
                    gmax2 = -G[t]
                    j = t
        if i < 0 or j < 0 or gmax + gmax2 < tol:
            converged = True
            break
        it += 1
        ki = i % n
        kj = j % n
        qij = s[i] * s[j] * K[ki, kj]
        qii = K[ki, ki]
        qjj = K[kj, kj]
        oi = beta[i]
        oj = beta[j]
        if s[i] != s[j]:
            quad = qii + qjj + 2.0 * qij
            if quad <= 0.0:
                quad = 1e-12
            delta = (-G[i] - G[j]) / quad
            diff = oi - oj
            beta[i] += delta
            beta[j] += delta
            if diff > 0.0:
                if beta[j] < 0.0:
                    beta[j] = 0.0
                    beta[i] = diff
            else:
                if beta[i] < 0.0:
                    beta[i] = 0.0
                    beta[j] = -diff
            if diff > 0.0:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = C - diff
            else:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = C + diff
        else:
            quad = qii + qjj - 2.0 * qij
            if quad <= 0.0:
                quad = 1e-12
            delta = (G[i] - G[j]) / quad
            total = oi + oj
            beta[i] -= delta
            beta[j] += delta
            if total > C:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = total - C
            else:
                if beta[j] < 0.0:
                    beta[j] = 0.0
                    beta[i] = total
            if total > C:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = total - C
            else:
                if beta[i] < 0.0:
                    beta[i] = 0.0
                    beta[j] = total
        di = beta[i] - oi
        dj = beta[j] - oj
        for t in range(m):
            kt = t % n
            G[t] += s[t] * (s[i] * K[ki, kt] * di + s[j] * K[kj, kt] * dj)
    return beta, G, it, converged
