"""Compiled inner loop for ensemble simulation.

Mirrors ``urn_core.sample_draw`` / ``urn_core.step`` operation by
operation so that a compiled trajectory and a pure-Python trajectory fed
the same uniforms are identical.
"""

import numpy as np
from numba import njit

OK = 0
NEGATIVE = 1
EMPTY = 2
OVERFLOW = 3

_INT64_MAX = np.iinfo(np.int64).max


@njit(nogil=True, cache=True)
def advance(counts, comps, coefs, adds, without, uniforms, step0, ckpts, ckpt_pos, snapshots, probs):
    """Run ``len(uniforms)`` steps in place.

    ``step0`` is the number of steps already taken; snapshots of ``counts``
    are written to ``snapshots[j]`` after step ``ckpts[j]``.  Returns
    ``(status, steps_done, next_ckpt_pos, draw_index)``.
    """
    K, d = comps.shape
    zs = np.empty(d)
    total = np.int64(0)
    for i in range(d):
        total += counts[i]
    n_ckpt = ckpts.shape[0]
    for t in range(uniforms.shape[0]):
        if without:
            for k in range(K):
                p = coefs[k]
                pos = 0
                for i in range(d):
                    c = counts[i]
                    for j in range(comps[k, i]):
                        p *= (c - j) / (total - pos)
                        pos += 1
                probs[k] = p
        else:
            for i in range(d):
                zs[i] = counts[i] / total
            for k in range(K):
                p = coefs[k]
                for i in range(d):
                    z = zs[i]
                    for _ in range(comps[k, i]):
                        p *= z
                probs[k] = p
        u = uniforms[t]
        cum = 0.0
        last = -1
        chosen = -1
        for k in range(K):
            if probs[k] > 0.0:
                last = k
            cum += probs[k]
            if u < cum:
                chosen = k
                break
        if chosen < 0:
            chosen = last
        new_total = np.int64(0)
        for i in range(d):
            a = adds[chosen, i]
            if a > 0 and counts[i] > _INT64_MAX - a:
                return OVERFLOW, t, ckpt_pos, chosen
            if counts[i] + a < 0:
                return NEGATIVE, t, ckpt_pos, chosen
            new_total += counts[i] + a
        if new_total <= 0:
            return EMPTY, t, ckpt_pos, chosen
        for i in range(d):
            counts[i] += adds[chosen, i]
        total = new_total
        n = step0 + t + 1
        while ckpt_pos < n_ckpt and ckpts[ckpt_pos] == n:
            for i in range(d):
                snapshots[ckpt_pos, i] = counts[i]
            ckpt_pos += 1
    return OK, uniforms.shape[0], ckpt_pos, -1
