"""Compiled inner loops for the constrained random walk."""
import math

import numpy as np
from numba import njit

# pieces whose weight is below exp(-NEGLIGIBLE) times the largest are skipped;
# they move the kernel by well under 1e-15
NEGLIGIBLE = 40.0

BUDGET = -1
EMPTIED = 0
OVERFLOW = 1


@njit(nogil=True, cache=True)
def fill_kernel(x, inv_n, src, prob, tilt_num, grads, offsets, inv_delta, kernel, logits, tmp):
    """Write the weight-averaged IS kernel at state ``x`` into ``kernel``.

    ``tilt_num[l, v]`` is jump ``v``'s numerator under gradient ``l`` when its
    source node is nonempty; jumps out of empty nodes keep their nominal
    probability.  Each piece is normalized on its own before mixing.
    """
    L, d = grads.shape
    V = prob.shape[0]
    top = -np.inf
    for l in range(L):
        s = 0.0
        for i in range(d):
            s += grads[l, i] * x[i]
        logits[l] = -(offsets[l] + s * inv_n) * inv_delta
        if logits[l] > top:
            top = logits[l]
    wsum = 0.0
    for l in range(L):
        z = logits[l] - top
        logits[l] = math.exp(z) if z > -NEGLIGIBLE else 0.0
        wsum += logits[l]
    for v in range(V):
        kernel[v] = 0.0
    for l in range(L):
        w = logits[l] / wsum
        if w == 0.0:
            continue
        norm = 0.0
        for v in range(V):
            s_v = src[v]
            if s_v < 0 or x[s_v] > 0:
                tmp[v] = tilt_num[l, v]
            else:
                tmp[v] = prob[v]
            norm += tmp[v]
        c = w / norm
        for v in range(V):
            kernel[v] += c * tmp[v]


@njit(nogil=True, cache=True)
def run_paths(gen, n_paths, d, src, dst, prob, logp, tilt_num, grads, offsets,
              inv_delta, n, shared, sizes, naive, max_steps,
              out_status, out_steps, out_loglr, start):
    """Simulate ``n_paths`` consecutive paths from ``(1, 0, ..., 0)`` using ``gen``."""
    V = prob.shape[0]
    L = grads.shape[0]
    x = np.zeros(d, dtype=np.int64)
    kernel = np.empty(V)
    logits = np.empty(L)
    tmp = np.empty(V)
    inv_n = 1.0 / n
    for p in range(n_paths):
        for i in range(d):
            x[i] = 0
        x[0] = 1
        total = 1
        steps = 0
        loglr = 0.0
        if shared:
            status = OVERFLOW if total >= n else BUDGET
        else:
            status = OVERFLOW if x[0] >= sizes[0] else BUDGET
        while status == BUDGET and steps < max_steps:
            if naive:
                for v in range(V):
                    kernel[v] = prob[v]
            else:
                fill_kernel(x, inv_n, src, prob, tilt_num, grads, offsets, inv_delta,
                            kernel, logits, tmp)
            u = gen.random()
            acc = 0.0
            pick = V - 1
            for v in range(V):
                acc += kernel[v]
                if u < acc:
                    pick = v
                    break
            while kernel[pick] == 0.0:
                pick -= 1
            if not naive:
                loglr += logp[pick] - math.log(kernel[pick])
            steps += 1
            s_v = src[pick]
            if s_v >= 0 and x[s_v] == 0:
                continue
            t_v = dst[pick]
            if s_v >= 0:
                x[s_v] -= 1
                total -= 1
            if t_v >= 0:
                x[t_v] += 1
                total += 1
                if shared:
                    if total >= n:
                        status = OVERFLOW
                elif x[t_v] >= sizes[t_v]:
                    status = OVERFLOW
            if status == BUDGET and total == 0:
                status = EMPTIED
        out_status[start + p] = status
        out_steps[start + p] = steps
        out_loglr[start + p] = loglr
