"""Compiled run kernel, trace-for-trace equivalent to :class:`txnsim.engine.Simulator`.

Because every service time is exactly one unit and event times live on the
dyadic grid of :func:`txnsim.des.quantize`, completions are scheduled in
non-decreasing time order; the kernel keeps them in a FIFO and merges it with
the injection stream, the pre-sorted fault list and the end-of-run marker by
(time, seq). Alive out-neighbors are selected with one Fenwick tree per node.
Crossed paths are recovered from per-node service histories, using processed
event indices to decide residency exactly.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from .config import SimConfig
from .des import RngStreams
from .engine import CAUSES, Phase, RunMetrics, build_network, classify_phase, fault_plan_for
from .nodes import Status
from .topology import Network

_SCALE = 2.0 ** 32
BIG = np.int64(2 ** 62)

# metric slots
M_INJECTED, M_COMMITTED, M_AB_DEATH, M_AB_NONBR, M_AB_TIMEOUT, M_AB_CASCADE = 0, 1, 2, 3, 4, 5
M_INFLIGHT, M_DEAD_OVL, M_DEAD_FAULT, M_EVENTS, M_OVERFLOW, M_STATUS = 6, 7, 8, 9, 10, 11
F_CHOKE, F_FIRST_ABORT, F_END = 0, 1, 2

# kernel status codes
OK, ERR_SLOTS, ERR_FIFO, ERR_TRACE, ERR_RESIDENTS = 0, 1, 2, 3, 4

TRACE_KINDS = ("inject", "hop", "complete", "commit", "abort", "death", "choke", "end")
DEATH_DETAIL = (Status.DISABLED_OVERLOAD.value, Status.DISABLED_FAULT.value)


@numba.njit(cache=True, inline="always")
def _q(x):
    return math.floor(x * _SCALE + 0.5) / _SCALE


@numba.njit(cache=True)
def _fen_init(fen, base, n):
    for i in range(1, n + 1):
        fen[base + i - 1] = i & (-i)


@numba.njit(cache=True)
def _fen_remove(fen, base, n, pos):
    i = pos + 1
    while i <= n:
        fen[base + i - 1] -= 1
        i += i & (-i)


@numba.njit(cache=True)
def _fen_select(fen, base, n, k):
    """0-based position of the (k+1)-th one."""
    idx = 0
    rem = k + 1
    mask = 1
    while mask * 2 <= n:
        mask *= 2
    while mask > 0:
        nxt = idx + mask
        if nxt <= n and fen[base + nxt - 1] < rem:
            idx = nxt
            rem -= fen[base + nxt - 1]
        mask //= 2
    return idx


@numba.njit(cache=True)
def _kernel(out_ptr, out_idx, in_ptr, in_idx, fault_t, fault_node, fault_seq,
            n_nodes, cap, res_cap, duration, rate, p0, window, ttl, len_mean, len_sd,
            g_inject, g_source, g_length, g_routing, g_cascade,
            slot_cap, fifo_cap, hist_cap, hop_cap,
            trace_on, trace_cap):
    N = n_nodes
    mi = np.zeros(12, np.int64)
    mf = np.full(3, np.nan)

    # topology bookkeeping
    deg = np.empty(N, np.int64)
    alive_out = np.empty(N, np.int64)
    fen = np.empty(out_idx.size, np.int64)
    for v in range(N):
        deg[v] = out_ptr[v + 1] - out_ptr[v]
        alive_out[v] = deg[v]
        _fen_init(fen, out_ptr[v], deg[v])
    gfen = np.empty(N, np.int64)
    _fen_init(gfen, 0, N)
    alive = np.ones(N, np.uint8)
    n_alive = N

    load = np.zeros(N, np.int64)
    res = np.empty((N, res_cap), np.int64)

    use_hist = p0 > 0.0
    H = hist_cap if use_hist else 1
    nh_uid = np.empty((N, H), np.int64)
    nh_slot = np.empty((N, H), np.int64)
    nh_start = np.empty((N, H), np.float64)
    nh_sev = np.empty((N, H), np.int64)
    nh_rev = np.empty((N, H), np.int64)
    nh_head = np.zeros(N, np.int64)

    K = hop_cap if use_hist else 1
    s_uid = np.full(slot_cap, -1, np.int64)
    s_len = np.zeros(slot_cap, np.int64)
    s_done = np.zeros(slot_cap, np.int64)
    s_node = np.full(slot_cap, -1, np.int64)
    s_run = np.zeros(slot_cap, np.uint8)
    s_insvc = np.zeros(slot_cap, np.uint8)
    s_hist = np.zeros(slot_cap, np.int64)
    s_hopn = np.zeros(slot_cap, np.int64)
    h_node = np.empty((slot_cap, K), np.int64)
    h_start = np.empty((slot_cap, K), np.float64)
    h_sev = np.empty((slot_cap, K), np.int64)
    h_rev = np.empty((slot_cap, K), np.int64)
    free = np.empty(slot_cap, np.int64)
    for i in range(slot_cap):
        free[i] = slot_cap - 1 - i
    n_free = slot_cap
    n_running = 0

    fq_t = np.empty(fifo_cap, np.float64)
    fq_seq = np.empty(fifo_cap, np.int64)
    fq_slot = np.empty(fifo_cap, np.int64)
    fq_uid = np.empty(fifo_cap, np.int64)
    fq_hop = np.empty(fifo_cap, np.int64)
    fq_head = 0
    fq_len = 0
    fmask = fifo_cap - 1

    tcap = trace_cap if trace_on else 1
    tr_t = np.empty(tcap, np.float64)
    tr_k = np.empty(tcap, np.int64)
    tr_txn = np.empty(tcap, np.int64)
    tr_node = np.empty(tcap, np.int64)
    tr_det = np.empty(tcap, np.int64)
    n_tr = 0

    # abort machinery
    vq_slot = np.empty(slot_cap + 1, np.int64)
    vq_cause = np.empty(slot_cap + 1, np.int64)
    bq = np.empty(slot_cap + 1, np.int64)
    partners = np.empty(slot_cap + 1, np.int64)
    to_free = np.empty(slot_cap + 1, np.int64)

    n_faults = fault_t.size
    fi = 0
    eor_seq = n_faults
    seq = n_faults + 1
    inj_t = np.inf
    inj_seq = 0
    if rate > 0:
        inj_t = _q(g_inject.standard_exponential() / rate)
        inj_seq = seq
        seq += 1

    ev = 0
    status = OK
    while True:
        # pick the earliest of FIFO head, injection, fault, end of run by (time, seq)
        kind = 3
        bt = duration
        bs = eor_seq
        if fq_len > 0:
            h = fq_head & fmask
            if fq_t[h] < bt or (fq_t[h] == bt and fq_seq[h] < bs):
                kind = 1
                bt = fq_t[h]
                bs = fq_seq[h]
        if inj_t < bt or (inj_t == bt and inj_seq < bs):
            kind = 0
            bt = inj_t
            bs = inj_seq
        if fi < n_faults:
            if fault_t[fi] < bt or (fault_t[fi] == bt and fault_seq[fi] < bs):
                kind = 2
                bt = fault_t[fi]
                bs = fault_seq[fi]
        t = bt
        ev += 1
        mi[M_EVENTS] += 1
        if kind == 3:
            mf[F_END] = t
            if trace_on:
                if n_tr >= tcap:
                    status = ERR_TRACE
                    break
                tr_t[n_tr] = t; tr_k[n_tr] = 7; tr_txn[n_tr] = -1; tr_node[n_tr] = -1; tr_det[n_tr] = 0
                n_tr += 1
            break

        nv = 0            # victims queued for abort this event
        start_slot = -1   # transaction to admit at start_node
        start_node = -1
        if kind == 0:
            inj_t = np.inf
            if n_alive > 0:
                k = math.floor(g_source.random() * n_alive)
                if n_alive == N:
                    src = k
                else:
                    src = _fen_select(gfen, 0, N, k)
                L = 0
                while True:
                    L = math.floor(len_mean + len_sd * g_length.standard_normal() + 0.5)
                    if L >= 1:
                        break
                if n_free == 0:
                    status = ERR_SLOTS
                    break
                n_free -= 1
                sl = free[n_free]
                uid = mi[M_INJECTED]
                mi[M_INJECTED] += 1
                s_uid[sl] = uid
                s_len[sl] = L
                s_done[sl] = 0
                s_node[sl] = -1
                s_run[sl] = 1
                s_insvc[sl] = 0
                s_hopn[sl] = 0
                n_running += 1
                if trace_on:
                    if n_tr >= tcap:
                        status = ERR_TRACE
                        break
                    tr_t[n_tr] = t; tr_k[n_tr] = 0; tr_txn[n_tr] = uid; tr_node[n_tr] = src; tr_det[n_tr] = L
                    n_tr += 1
                start_slot = sl
                start_node = src
        elif kind == 1:
            h = fq_head & fmask
            sl = fq_slot[h]
            uid = fq_uid[h]
            hop = fq_hop[h]
            fq_head += 1
            fq_len -= 1
            if s_uid[sl] == uid and s_run[sl] == 1 and s_done[sl] == hop:
                node = s_node[sl]
                # release
                j = 0
                while res[node, j] != sl:
                    j += 1
                for q in range(j, load[node] - 1):
                    res[node, q] = res[node, q + 1]
                load[node] -= 1
                s_insvc[sl] = 0
                if use_hist:
                    if s_hist[sl] >= nh_head[node] - H:
                        nh_rev[node, s_hist[sl] % H] = ev
                    h_rev[sl, (s_hopn[sl] - 1) % K] = ev
                s_done[sl] += 1
                if trace_on:
                    if n_tr >= tcap:
                        status = ERR_TRACE
                        break
                    tr_t[n_tr] = t; tr_k[n_tr] = 2; tr_txn[n_tr] = uid; tr_node[n_tr] = node; tr_det[n_tr] = s_done[sl]
                    n_tr += 1
                if s_done[sl] == s_len[sl]:
                    s_run[sl] = 0
                    n_running -= 1
                    mi[M_COMMITTED] += 1
                    if trace_on:
                        if n_tr >= tcap:
                            status = ERR_TRACE
                            break
                        tr_t[n_tr] = t; tr_k[n_tr] = 3; tr_txn[n_tr] = uid; tr_node[n_tr] = node; tr_det[n_tr] = 0
                        n_tr += 1
                    s_uid[sl] = -1
                    free[n_free] = sl
                    n_free += 1
                elif s_done[sl] >= ttl:
                    vq_slot[0] = sl
                    vq_cause[0] = 2
                    nv = 1
                elif alive_out[node] == 0:
                    vq_slot[0] = sl
                    vq_cause[0] = 1
                    nv = 1
                else:
                    k = math.floor(g_routing.random() * alive_out[node])
                    if alive_out[node] == deg[node]:
                        pos = k
                    else:
                        pos = _fen_select(fen, out_ptr[node], deg[node], k)
                    start_slot = sl
                    start_node = out_idx[out_ptr[node] + pos]
        else:
            node = fault_node[fi]
            fi += 1
            if alive[node] == 1:
                # fault death
                alive[node] = 0
                mi[M_DEAD_FAULT] += 1
                for q in range(load[node]):
                    vs = res[node, q]
                    vq_slot[nv] = vs
                    vq_cause[nv] = 0
                    nv += 1
                    s_insvc[vs] = 0
                    if use_hist:
                        if s_hist[vs] >= nh_head[node] - H:
                            nh_rev[node, s_hist[vs] % H] = ev
                        h_rev[vs, (s_hopn[vs] - 1) % K] = ev
                load[node] = 0
                n_alive -= 1
                _fen_remove(gfen, 0, N, node)
                for e in range(in_ptr[node], in_ptr[node + 1]):
                    w = in_idx[e]
                    lo = out_ptr[w]
                    hi = out_ptr[w + 1]
                    while lo < hi:
                        mid = (lo + hi) // 2
                        if out_idx[mid] < node:
                            lo = mid + 1
                        else:
                            hi = mid
                    alive_out[w] -= 1
                    _fen_remove(fen, out_ptr[w], deg[w], lo - out_ptr[w])
                if trace_on:
                    if n_tr >= tcap:
                        status = ERR_TRACE
                        break
                    tr_t[n_tr] = t; tr_k[n_tr] = 5; tr_txn[n_tr] = -1; tr_node[n_tr] = node; tr_det[n_tr] = 1
                    n_tr += 1

        # admission of a (new or continuing) subtransaction
        if start_slot >= 0:
            sl = start_slot
            node = start_node
            if load[node] + 1 >= cap:
                # overload death: residents, then the arriving transaction
                alive[node] = 0
                mi[M_DEAD_OVL] += 1
                for q in range(load[node]):
                    vs = res[node, q]
                    vq_slot[nv] = vs
                    vq_cause[nv] = 0
                    nv += 1
                    s_insvc[vs] = 0
                    if use_hist:
                        if s_hist[vs] >= nh_head[node] - H:
                            nh_rev[node, s_hist[vs] % H] = ev
                        h_rev[vs, (s_hopn[vs] - 1) % K] = ev
                vq_slot[nv] = sl
                vq_cause[nv] = 0
                nv += 1
                s_node[sl] = node
                load[node] = 0
                n_alive -= 1
                _fen_remove(gfen, 0, N, node)
                for e in range(in_ptr[node], in_ptr[node + 1]):
                    w = in_idx[e]
                    lo = out_ptr[w]
                    hi = out_ptr[w + 1]
                    while lo < hi:
                        mid = (lo + hi) // 2
                        if out_idx[mid] < node:
                            lo = mid + 1
                        else:
                            hi = mid
                    alive_out[w] -= 1
                    _fen_remove(fen, out_ptr[w], deg[w], lo - out_ptr[w])
                if trace_on:
                    if n_tr >= tcap:
                        status = ERR_TRACE
                        break
                    tr_t[n_tr] = t; tr_k[n_tr] = 5; tr_txn[n_tr] = -1; tr_node[n_tr] = node; tr_det[n_tr] = 0
                    n_tr += 1
            else:
                if load[node] >= res_cap:
                    status = ERR_RESIDENTS
                    break
                res[node, load[node]] = sl
                load[node] += 1
                s_node[sl] = node
                s_insvc[sl] = 1
                if use_hist:
                    pos = nh_head[node]
                    hi_ = pos % H
                    if pos >= H and nh_start[node, hi_] > t - window - 2.0:
                        mi[M_OVERFLOW] += 1
                    nh_uid[node, hi_] = s_uid[sl]
                    nh_slot[node, hi_] = sl
                    nh_start[node, hi_] = t
                    nh_sev[node, hi_] = ev
                    nh_rev[node, hi_] = BIG
                    s_hist[sl] = pos
                    nh_head[node] = pos + 1
                    r_ = s_hopn[sl] % K
                    h_node[sl, r_] = node
                    h_start[sl, r_] = t
                    h_sev[sl, r_] = ev
                    h_rev[sl, r_] = BIG
                s_hopn[sl] += 1
                if trace_on:
                    if n_tr >= tcap:
                        status = ERR_TRACE
                        break
                    tr_t[n_tr] = t; tr_k[n_tr] = 1; tr_txn[n_tr] = s_uid[sl]; tr_node[n_tr] = node; tr_det[n_tr] = s_done[sl]
                    n_tr += 1
                if fq_len >= fifo_cap:
                    status = ERR_FIFO
                    break
                tl = (fq_head + fq_len) & fmask
                fq_t[tl] = t + 1.0
                fq_seq[tl] = seq
                fq_slot[tl] = sl
                fq_uid[tl] = s_uid[sl]
                fq_hop[tl] = s_done[sl]
                fq_len += 1
                seq += 1

        if kind == 0 and start_node >= 0:
            inj_t = t + _q(g_inject.standard_exponential() / rate)
            inj_seq = seq
            seq += 1

        # abort batch with breadth-first cascade
        if nv > 0:
            nb = 0
            nfree_pending = 0
            for q in range(nv):
                vs = vq_slot[q]
                if s_run[vs] == 1:
                    s_run[vs] = 0
                    n_running -= 1
                    mi[M_AB_DEATH + vq_cause[q]] += 1
                    if np.isnan(mf[F_FIRST_ABORT]):
                        mf[F_FIRST_ABORT] = t
                    if trace_on:
                        if n_tr >= tcap:
                            status = ERR_TRACE
                            break
                        tr_t[n_tr] = t; tr_k[n_tr] = 4; tr_txn[n_tr] = s_uid[vs]; tr_node[n_tr] = s_node[vs]; tr_det[n_tr] = vq_cause[q]
                        n_tr += 1
                    bq[nb] = vs
                    nb += 1
                    to_free[nfree_pending] = vs
                    nfree_pending += 1
            if status != OK:
                break
            if use_hist:
                bi = 0
                horizon = t - window
                while bi < nb:
                    x = bq[bi]
                    bi += 1
                    xuid = s_uid[x]
                    npart = 0
                    hn = s_hopn[x]
                    j0 = hn - K if hn > K else 0
                    for j in range(j0, hn):
                        r_ = j % K
                        sx = h_start[x, r_]
                        if sx + 1.0 <= horizon:
                            continue
                        n = h_node[x, r_]
                        sevx = h_sev[x, r_]
                        revx = h_rev[x, r_]
                        head = nh_head[n]
                        p_ = head - H if head > H else 0
                        while p_ < head:
                            hi_ = p_ % H
                            p_ += 1
                            esev = nh_sev[n, hi_]
                            if esev > revx:
                                break
                            euid = nh_uid[n, hi_]
                            if euid == xuid:
                                continue
                            if esev < sevx and sevx < nh_rev[n, hi_]:
                                enc = sx
                            elif sevx < esev and esev < revx:
                                enc = nh_start[n, hi_]
                            else:
                                continue
                            if enc <= horizon:
                                continue
                            dup = False
                            for q in range(npart):
                                pq = partners[q]
                                if (pq >= 0 and s_uid[pq] == euid) or pq == -1 - euid:
                                    dup = True
                                    break
                            if dup:
                                continue
                            es = nh_slot[n, hi_]
                            if s_uid[es] == euid:
                                partners[npart] = es
                            else:
                                partners[npart] = -1 - euid
                            npart += 1
                    for q in range(npart):
                        ps = partners[q]
                        if ps < 0 or s_run[ps] != 1:
                            continue
                        if g_cascade.random() < p0:
                            s_run[ps] = 0
                            n_running -= 1
                            mi[M_AB_CASCADE] += 1
                            pn = s_node[ps]
                            if s_insvc[ps] == 1:
                                j = 0
                                while res[pn, j] != ps:
                                    j += 1
                                for q2 in range(j, load[pn] - 1):
                                    res[pn, q2] = res[pn, q2 + 1]
                                load[pn] -= 1
                                s_insvc[ps] = 0
                                if s_hist[ps] >= nh_head[pn] - H:
                                    nh_rev[pn, s_hist[ps] % H] = ev
                                h_rev[ps, (s_hopn[ps] - 1) % K] = ev
                            if trace_on:
                                if n_tr >= tcap:
                                    status = ERR_TRACE
                                    break
                                tr_t[n_tr] = t; tr_k[n_tr] = 4; tr_txn[n_tr] = s_uid[ps]; tr_node[n_tr] = pn; tr_det[n_tr] = 3
                                n_tr += 1
                            bq[nb] = ps
                            nb += 1
                            to_free[nfree_pending] = ps
                            nfree_pending += 1
                    if status != OK:
                        break
                if status != OK:
                    break
            for q in range(nfree_pending):
                s_uid[to_free[q]] = -1
                free[n_free] = to_free[q]
                n_free += 1

        if n_alive == 0:
            mf[F_CHOKE] = t
            mf[F_END] = t
            if trace_on:
                if n_tr >= tcap:
                    status = ERR_TRACE
                    break
                tr_t[n_tr] = t; tr_k[n_tr] = 6; tr_txn[n_tr] = -1; tr_node[n_tr] = -1; tr_det[n_tr] = 0
                n_tr += 1
            break

    mi[M_INFLIGHT] = n_running
    mi[M_STATUS] = status
    return mi, mf, tr_t[:n_tr], tr_k[:n_tr], tr_txn[:n_tr], tr_node[:n_tr], tr_det[:n_tr]


def _pow2(n: int) -> int:
    return 1 << max(1, int(n - 1).bit_length())


class KernelCapacityError(RuntimeError):
    pass


def _format_trace(tr_t, tr_k, tr_txn, tr_node, tr_det) -> list[str]:
    lines = []
    causes = [c.value for c in CAUSES]
    for t, k, txn, node, det in zip(tr_t.tolist(), tr_k.tolist(), tr_txn.tolist(),
                                    tr_node.tolist(), tr_det.tolist()):
        kind = TRACE_KINDS[k]
        if kind == "abort":
            detail = causes[det]
        elif kind == "death":
            detail = DEATH_DETAIL[det]
        elif kind in ("inject", "hop", "complete"):
            detail = det
        else:
            detail = ""
        lines.append(f"{t!r},{kind},{txn},{node},{detail}")
    return lines


def simulate_fast(cfg: SimConfig, network: Network | None = None, *, trace: bool = False,
                  max_attempts: int = 6):
    """Compiled counterpart of :func:`txnsim.engine.simulate`; returns (metrics, trace)."""
    cap = cfg.capacity
    cap_int = int(cap) if math.isfinite(cap) else 2 ** 62
    window = float(cfg.dep_window)
    res_cap = int(cap_int - 1) if cap_int <= 4097 else 256
    slot_cap = max(1024, min(cfg.n_nodes * res_cap + 1,
                             int(4 * cfg.inject_rate * (cfg.ttl + 2)) + 1024))
    fifo_cap = _pow2(slot_cap)
    hist_cap = _pow2(2 * min(res_cap, 4096) * (int(window) + 3) + 16)
    hop_cap = int(math.ceil(window)) + 3
    trace_cap = 1 << 16
    for _ in range(max_attempts):
        streams = RngStreams(cfg.seed)
        net = network if network is not None else build_network(cfg, streams)
        plan = fault_plan_for(cfg).draw(cfg.n_nodes, streams["faults"])
        ft = np.array([p[0] for p in plan], dtype=np.float64)
        fnode = np.array([p[1] for p in plan], dtype=np.int64)
        order = np.argsort(ft, kind="stable")
        out = _kernel(net.out_ptr, net.out_idx.astype(np.int64), net.in_ptr, net.in_idx.astype(np.int64),
                      ft[order], fnode[order], order.astype(np.int64),
                      cfg.n_nodes, cap_int, res_cap, float(cfg.duration), float(cfg.inject_rate),
                      float(cfg.cascade_prob), window, float(cfg.ttl),
                      float(cfg.txn_len_mean), float(cfg.txn_len_sd),
                      streams["inject"], streams["source"], streams["length"],
                      streams["routing"], streams["cascade"],
                      slot_cap, fifo_cap, hist_cap, hop_cap, trace, trace_cap)
        mi, mf = out[0], out[1]
        status = int(mi[M_STATUS])
        if status == OK:
            break
        if status == ERR_SLOTS:
            slot_cap *= 2
            fifo_cap = _pow2(slot_cap)
        elif status == ERR_FIFO:
            fifo_cap *= 2
        elif status == ERR_TRACE:
            trace_cap *= 8
        elif status == ERR_RESIDENTS:
            res_cap *= 4
            hist_cap = _pow2(2 * res_cap * (int(window) + 3) + 16)
    else:
        raise KernelCapacityError(f"kernel buffers exhausted (status {status})")

    m = RunMetrics(cfg.n_nodes, cfg.duration, cfg.abort_threshold)
    m.injected = int(mi[M_INJECTED])
    m.committed = int(mi[M_COMMITTED])
    m.aborted_node_death = int(mi[M_AB_DEATH])
    m.aborted_no_alive_neighbor = int(mi[M_AB_NONBR])
    m.aborted_timeout = int(mi[M_AB_TIMEOUT])
    m.aborted_cascade = int(mi[M_AB_CASCADE])
    m.in_flight_at_end = int(mi[M_INFLIGHT])
    m.nodes_dead_overload = int(mi[M_DEAD_OVL])
    m.nodes_dead_fault = int(mi[M_DEAD_FAULT])
    m.events = int(mi[M_EVENTS])
    m.history_overflow = int(mi[M_OVERFLOW])
    m.choke_time = None if np.isnan(mf[F_CHOKE]) else float(mf[F_CHOKE])
    m.first_abort_time = None if np.isnan(mf[F_FIRST_ABORT]) else float(mf[F_FIRST_ABORT])
    m.end_time = float(mf[F_END])
    m.phase = classify_phase(m)
    lines = _format_trace(*out[2:]) if trace else None
    return m, lines
