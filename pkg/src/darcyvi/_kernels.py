"""Numba kernels for cell-parallel assembly and sparse triangular sweeps."""

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def gather_sum(flat, perm, ptr, out):
    """out[k] = sum(flat[perm[ptr[k]:ptr[k+1]]]); fixed summation order."""
    for k in prange(out.shape[0]):
        s = 0.0
        for m in range(ptr[k], ptr[k + 1]):
            s += flat[perm[m]]
        out[k] = s


@njit(parallel=True, cache=True)
def rt0_weighted_mass(X, signs, vol, xq, Kinv, wq):
    """Per-cell matrices M_ij = int K^{-1} phi_j . phi_i (signs included)."""
    nc, nv, d = X.shape
    nq = wq.shape[0]
    M = np.zeros((nc, nv, nv))
    fact = 1.0
    for k in range(2, d + 1):
        fact *= k
    for c in prange(nc):
        phi = np.empty((nv, d))
        scale = 1.0 / (d * vol[c])
        for q in range(nq):
            w = wq[q] * fact * vol[c]
            for i in range(nv):
                for k in range(d):
                    phi[i, k] = signs[c, i] * scale * (xq[c, q, k] - X[c, i, k])
            for i in range(nv):
                for j in range(nv):
                    s = 0.0
                    for k in range(d):
                        t = 0.0
                        for l in range(d):
                            t += Kinv[c, q, k, l] * phi[j, l]
                        s += phi[i, k] * t
                    M[c, i, j] += w * s
    return M


@njit(parallel=True, cache=True)
def rt0_local(M, signs, q_loc, p_cell, mu, dmu, Fu, Juu, Jup):
    nc, nv = q_loc.shape
    for c in prange(nc):
        for i in range(nv):
            mq = 0.0
            for j in range(nv):
                mq += M[c, i, j] * q_loc[c, j]
                Juu[c, i, j] = mu[c] * M[c, i, j]
            Fu[c, i] = mu[c] * mq - p_cell[c] * signs[c, i]
            Jup[c, i] = dmu[c] * mq - signs[c, i]


@njit(parallel=True, cache=True)
def vms_local(N, wq, G, vol, Kinv, K, rb, u_loc, p_loc, mu0, beta, law,
              Fu, Fp, Juu, Jup, Jpu, Jpp, jacobian):
    """Stabilized equal-order element residual and Jacobian blocks.

    Local velocity index is a*d + k (node a, component k). Returns the index
    of the first cell with non-positive viscosity, or -1.
    """
    nc, nv, d = G.shape
    nq = wq.shape[0]
    fact = 1.0
    for k in range(2, d + 1):
        fact *= k
    bad = np.full(nc, -1)
    for c in prange(nc):
        alpha = np.empty((d, d))
        ainv = np.empty((d, d))
        uq = np.empty(d)
        au = np.empty(d)
        dau = np.empty(d)
        gp = np.zeros(d)
        g = np.empty(d)
        ag = np.empty(d)
        agG = np.empty(nv)
        uG = np.empty(nv)
        for k in range(d):
            for a in range(nv):
                gp[k] += G[c, a, k] * p_loc[c, a]
        divu = 0.0
        for a in range(nv):
            for k in range(d):
                divu += G[c, a, k] * u_loc[c, a, k]
        for q in range(nq):
            w = wq[q] * fact * vol[c]
            pq = 0.0
            for a in range(nv):
                pq += N[q, a] * p_loc[c, a]
            for k in range(d):
                s = 0.0
                for a in range(nv):
                    s += N[q, a] * u_loc[c, a, k]
                uq[k] = s
            if law == 0:
                mu = mu0 * (1.0 + beta * pq)
                dmu = mu0 * beta
            else:
                mu = mu0 * np.exp(beta * pq)
                dmu = beta * mu
            if mu <= 0.0:
                bad[c] = c
                mu = mu0
            for k in range(d):
                for l in range(d):
                    alpha[k, l] = mu * Kinv[c, q, k, l]
                    ainv[k, l] = K[c, q, k, l] / mu
            for k in range(d):
                g[k] = gp[k] - rb[c, q, k]
            for k in range(d):
                s1 = 0.0
                s2 = 0.0
                s3 = 0.0
                for l in range(d):
                    s1 += alpha[k, l] * uq[l]
                    s2 += Kinv[c, q, k, l] * uq[l]
                    s3 += ainv[k, l] * g[l]
                au[k] = s1
                dau[k] = dmu * s2
                ag[k] = s3
            for a in range(nv):
                s1 = 0.0
                s2 = 0.0
                for k in range(d):
                    s1 += ag[k] * G[c, a, k]
                    s2 += uq[k] * G[c, a, k]
                agG[a] = s1
                uG[a] = s2
            for a in range(nv):
                Na = N[q, a]
                for k in range(d):
                    Fu[c, a, k] += w * (0.5 * au[k] * Na - pq * G[c, a, k]
                                        - 0.5 * rb[c, q, k] * Na - 0.5 * Na * gp[k])
                Fp[c, a] += w * (-divu * Na - 0.5 * uG[a] - 0.5 * agG[a])
            if not jacobian:
                continue
            for a in range(nv):
                Na = N[q, a]
                for b in range(nv):
                    Nb = N[q, b]
                    for k in range(d):
                        for l in range(d):
                            Juu[c, a * d + k, b * d + l] += w * 0.5 * alpha[k, l] * Na * Nb
                        Jup[c, a * d + k, b] += w * (0.5 * dau[k] * Nb * Na - Nb * G[c, a, k]
                                                     - 0.5 * G[c, b, k] * Na)
                    for l in range(d):
                        Jpu[c, a, b * d + l] += w * (-G[c, b, l] * Na - 0.5 * Nb * G[c, a, l])
                    s = 0.0
                    for k in range(d):
                        for l in range(d):
                            s += ainv[k, l] * G[c, b, l] * G[c, a, k]
                    Jpp[c, a, b] += w * (0.5 * (dmu / mu) * Nb * agG[a] - 0.5 * s)
    first = -1
    for c in range(nc):
        if bad[c] >= 0:
            first = c
            break
    return first


# ILU(0) ------------------------------------------------------------------------


@njit(cache=True)
def ilu0_factor(indptr, indices, data, diag_pos, shift_scale):
    """In-place ILU(0) on a CSR matrix with sorted column indices.

    Zero (or tiny) pivots are replaced by ``shift_scale * ||row||``; returns
    the number of such shifts.
    """
    n = indptr.shape[0] - 1
    lu = data.copy()
    shifts = 0
    marker = np.full(n, -1)
    for i in range(n):
        for m in range(indptr[i], indptr[i + 1]):
            marker[indices[m]] = m
        for m in range(indptr[i], diag_pos[i]):
            k = indices[m]
            piv = lu[diag_pos[k]]
            lik = lu[m] / piv
            lu[m] = lik
            for mm in range(diag_pos[k] + 1, indptr[k + 1]):
                j = indices[mm]
                pos = marker[j]
                if pos >= 0:
                    lu[pos] -= lik * lu[mm]
        d = lu[diag_pos[i]]
        rownorm = 0.0
        for m in range(indptr[i], indptr[i + 1]):
            rownorm += data[m] * data[m]
        rownorm = np.sqrt(rownorm)
        if abs(d) <= 1e-14 * rownorm or d == 0.0:
            lu[diag_pos[i]] = shift_scale * rownorm if rownorm > 0 else shift_scale
            shifts += 1
        for m in range(indptr[i], indptr[i + 1]):
            marker[indices[m]] = -1
    return lu, shifts


@njit(cache=True)
def ilu0_solve(indptr, indices, lu, diag_pos, b):
    n = b.shape[0]
    x = b.copy()
    for i in range(n):
        s = x[i]
        for m in range(indptr[i], diag_pos[i]):
            s -= lu[m] * x[indices[m]]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for m in range(diag_pos[i] + 1, indptr[i + 1]):
            s -= lu[m] * x[indices[m]]
        x[i] = s / lu[diag_pos[i]]
    return x
