"""Compiled per-thread hot loops for the rank engine.

Every floating-point expression here mirrors :mod:`cortex_sim.dynamics` and
:mod:`cortex_sim.plasticity` term for term; changing the evaluation order
breaks bit-exact agreement with the reference simulator.

Record arrays are sorted by (thread tag, pre, delay, edge id).  ``run_ptr``
has one entry per (thread, pre, delay) run plus a sentinel.
"""

from __future__ import annotations

import math

import numba
import numpy as np

_JIT = dict(nogil=True, cache=True)


@numba.njit(**_JIT)
def collect_pairs(step, d_min, d_max, ring_ids, ring_n, ring_step, pp, aa):
    """Gather buffered (pre, age) pairs due at ``step``, sorted by pre.

    Returns the pair count.  ``pp``/``aa`` must be large enough to hold every
    buffered id.
    """
    cap = ring_n.size
    n = 0
    for age in range(d_min, d_max + 1):
        e = step - age
        if e < 0:
            break
        slot = e % cap
        if ring_step[slot] != e:
            continue
        for j in range(ring_n[slot]):
            pp[n] = ring_ids[slot, j]
            aa[n] = age
            n += 1
    if n > 1:
        order = np.argsort(pp[:n], kind="mergesort")
        tp = pp[:n][order].copy()
        ta = aa[:n][order].copy()
        pp[:n] = tp
        aa[:n] = ta
    return n


@numba.njit(**_JIT)
def _process_record(r, step, rec_target, rec_weight, rec_exc, rec_plastic,
                    rec_kplus, rec_lastpre, syn_e, syn_i, kminus, lastpost, stdp,
                    audit, bit, edge_mask, post_mask):
    t = rec_target[r]
    if audit:
        edge_mask[r] |= bit
        post_mask[t] |= bit
    w = rec_weight[r]
    if rec_plastic[r]:
        dt = stdp[6]
        km = kminus[t] * math.exp(-(float(step - lastpost[t]) * dt) / stdp[4])
        w = w - stdp[0] * w * km
        if not w > stdp[5]:
            w = stdp[5]
        rec_weight[r] = w
        rec_kplus[r] = rec_kplus[r] * math.exp(-(float(step - rec_lastpre[r]) * dt) / stdp[3]) + 1.0
        rec_lastpre[r] = step
    if rec_exc[r]:
        syn_e[t] += w
    else:
        syn_i[t] += w


@numba.njit(**_JIT)
def deliver_thread(k, step, n_pairs, pp, aa, d_min, n_pre, n_d, run_ptr,
                   rec_target, rec_weight, rec_edge, rec_exc, rec_plastic,
                   rec_kplus, rec_lastpre, syn_e, syn_i, kminus, lastpost, stdp,
                   audit, edge_mask, post_mask):
    """Apply every record of thread ``k`` hit by a buffered spike.

    Pre ids are visited in ascending order; a pre with several active ages
    has its records merged by edge id.  Returns the number of records applied.
    """
    bit = np.int64(1) << k
    base = k * n_pre
    applied = 0
    i = 0
    while i < n_pairs:
        p = pp[i]
        j = i + 1
        while j < n_pairs and pp[j] == p:
            j += 1
        if j - i == 1:
            key = (base + p) * n_d + (aa[i] - d_min)
            for r in range(run_ptr[key], run_ptr[key + 1]):
                _process_record(r, step, rec_target, rec_weight, rec_exc, rec_plastic,
                                rec_kplus, rec_lastpre, syn_e, syn_i, kminus, lastpost,
                                stdp, audit, bit, edge_mask, post_mask)
                applied += 1
        else:
            total = 0
            for q in range(i, j):
                key = (base + p) * n_d + (aa[q] - d_min)
                total += run_ptr[key + 1] - run_ptr[key]
            tmp = np.empty(total, dtype=np.int64)
            m = 0
            for q in range(i, j):
                key = (base + p) * n_d + (aa[q] - d_min)
                for r in range(run_ptr[key], run_ptr[key + 1]):
                    tmp[m] = r
                    m += 1
            order = np.argsort(rec_edge[tmp], kind="mergesort")
            for q in range(total):
                _process_record(tmp[order[q]], step, rec_target, rec_weight, rec_exc,
                                rec_plastic, rec_kplus, rec_lastpre, syn_e, syn_i, kminus,
                                lastpost, stdp, audit, bit, edge_mask, post_mask)
            applied += total
        i = j
    return applied


@numba.njit(**_JIT)
def update_thread(k, step, lo, hi, u, syn_e, syn_i, refr, i_ext, params,
                  post_ptr, post_recs, rec_weight, rec_kplus, rec_lastpre,
                  kminus, lastpost, stdp, plastic_on, audit, edge_mask, post_mask,
                  out, n_out):
    """Advance neurons ``lo..hi-1``; append spiking local indices to ``out``.

    Also applies potentiation on the incoming plastic synapses of every
    spiking neuron and bumps its postsynaptic trace.  Returns the new length
    of ``out``.
    """
    bit = np.int64(1) << k
    first = n_out
    for i in range(lo, hi):
        if audit:
            post_mask[i] |= bit
        P = params[i]
        if refr[i] > 0:
            refr[i] -= 1
            syn_e[i] *= P[4]
            syn_i[i] *= P[5]
            u[i] = P[8]
            continue
        if P[10] != 0.0:
            ie = syn_e[i] * (P[11] - u[i])
            ii = syn_i[i] * (P[12] - u[i])
        else:
            ie = syn_e[i]
            ii = syn_i[i]
        v = u[i] - P[6]
        v = P[0] * v + P[1] * ie + P[2] * ii + P[3] * i_ext[i]
        un = v + P[6]
        syn_e[i] *= P[4]
        syn_i[i] *= P[5]
        if un >= P[7]:
            u[i] = P[8]
            refr[i] = np.int64(P[9])
            out[n_out] = i
            n_out += 1
        else:
            u[i] = un
    if plastic_on:
        dt = stdp[6]
        for q in range(first, n_out):
            i = out[q]
            for m in range(post_ptr[i], post_ptr[i + 1]):
                r = post_recs[m]
                if audit:
                    edge_mask[r] |= bit
                kp = rec_kplus[r] * math.exp(-(float(step - rec_lastpre[r]) * dt) / stdp[3])
                w = rec_weight[r]
                rec_weight[r] = w + stdp[1] * w ** stdp[2] * kp
            kminus[i] = kminus[i] * math.exp(-(float(step - lastpost[i]) * dt) / stdp[4]) + 1.0
            lastpost[i] = step
    return n_out


@numba.njit(**_JIT)
def add_external(lo, hi, syn_e, ext):
    for i in range(lo, hi):
        syn_e[i] += ext[i]


@numba.njit(**_JIT)
def rank_step(step, thread_bounds, ext, has_ext,
              n_pairs, pp, aa, d_min, n_pre, n_d, run_ptr,
              rec_target, rec_weight, rec_edge, rec_exc, rec_plastic, rec_kplus, rec_lastpre,
              u, syn_e, syn_i, refr, i_ext, params,
              post_ptr, post_recs, kminus, lastpost, stdp, plastic_on,
              audit, edge_mask, post_mask, out):
    """All compute workers of one rank for one step, run one after another.

    Each worker touches only its own neuron range and its own records, so
    running them in sequence or concurrently gives the same result.
    """
    n_out = 0
    applied = 0
    for k in range(thread_bounds.size - 1):
        lo = thread_bounds[k]
        hi = thread_bounds[k + 1]
        if has_ext:
            add_external(lo, hi, syn_e, ext)
        applied += deliver_thread(k, step, n_pairs, pp, aa, d_min, n_pre, n_d, run_ptr,
                                  rec_target, rec_weight, rec_edge, rec_exc, rec_plastic,
                                  rec_kplus, rec_lastpre, syn_e, syn_i, kminus, lastpost,
                                  stdp, audit, edge_mask, post_mask)
        n_out = update_thread(k, step, lo, hi, u, syn_e, syn_i, refr, i_ext, params,
                              post_ptr, post_recs, rec_weight, rec_kplus, rec_lastpre,
                              kminus, lastpost, stdp, plastic_on, audit, edge_mask,
                              post_mask, out, n_out)
    return n_out, applied
