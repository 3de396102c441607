"""Compiled random-walk Metropolis kernel for Poisson log-linear posteriors.

The design matrix is binary, so it is stored in CSR form as the column
indices of its ones; a cell's linear predictor is then a sum of parameters.
Random numbers are drawn outside the kernel (one numpy generator per chain)
and passed in blocks, which keeps chains bit-reproducible.
"""

import numpy as np
from numba import njit

TARGET_ACCEPT = 0.25
ADAPT_START = 2000
ADAPT_EVERY = 1000


@njit(cache=True, nogil=True)
def log_posterior(theta, indptr, indices, y, prec):
    s = 0.0
    for i in range(len(y)):
        e = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            e += theta[indices[k]]
        s += y[i] * e - np.exp(e)
    for j in range(len(theta)):
        s -= 0.5 * prec[j] * theta[j] * theta[j]
    return s


@njit(cache=True, nogil=True)
def run_block(theta, logp, indptr, indices, y, prec, chol, state, cov_sum, mean,
              normals, log_u, adapting, thin, out, out_pos):
    """Advance one chain by ``len(log_u)`` iterations.

    ``state`` holds ``[log_scale, iteration, accepted, n_adapt]`` and is
    updated in place, as are ``theta``, ``chol`` and the running moments
    ``mean``/``cov_sum``.  Every ``thin``-th post-adaptation state is written
    to ``out`` starting at ``out_pos``.  Returns ``(logp, out_pos)``.
    """
    p = len(theta)
    prop = np.empty(p)
    delta = np.empty(p)
    for t in range(len(log_u)):
        scale = np.exp(state[0])
        for j in range(p):
            s = 0.0
            for l in range(j + 1):
                s += chol[j, l] * normals[t, l]
            delta[j] = scale * s
            prop[j] = theta[j] + delta[j]
        new = log_posterior(prop, indptr, indices, y, prec)
        acc = 0.0
        if log_u[t] < new - logp:
            for j in range(p):
                theta[j] = prop[j]
            logp = new
            acc = 1.0
        state[1] += 1.0
        if adapting:
            it = state[1]
            state[0] += (acc - TARGET_ACCEPT) / it ** 0.6
            # Welford update of the running mean and scatter matrix
            state[3] += 1.0
            nn = state[3]
            for j in range(p):
                delta[j] = theta[j] - mean[j]
                mean[j] += delta[j] / nn
            for j in range(p):
                dj = theta[j] - mean[j]
                for l in range(p):
                    cov_sum[j, l] += delta[l] * dj
            if it >= ADAPT_START and int(it) % ADAPT_EVERY == 0:
                c = cov_sum / (nn - 1.0) * (2.38 ** 2 / p)
                for j in range(p):
                    c[j, j] += 1e-10
                ok = True
                for j in range(p):
                    if not c[j, j] > 0.0:
                        ok = False
                if ok:
                    try:
                        newchol = np.linalg.cholesky(c)
                    except Exception:
                        ok = False
                    if ok:
                        for j in range(p):
                            for l in range(p):
                                chol[j, l] = newchol[j, l]
        else:
            state[2] += acc
            if int(state[1]) % thin == 0 and out_pos < out.shape[0]:
                for j in range(p):
                    out[out_pos, j] = theta[j]
                out_pos += 1
    return logp, out_pos
