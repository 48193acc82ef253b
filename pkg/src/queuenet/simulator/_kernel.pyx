# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event loop.  Same inputs, outputs and arithmetic as ``_pure.simulate``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, INFINITY

cnp.import_array()

cdef enum:
    FIFO = 0
    SP = 1
    WFQ = 2
    DRR = 3


cdef struct State:
    double warmup
    bint check
    bint fifo_ordered
    long long seq
    # static layout
    const int* link_policy
    const int* link_qlo
    const int* link_qhi
    const double* link_cap
    const int* q_order
    const int* q_cap
    const double* q_weight
    const double* q_quantum
    const double* arr_size
    # queues
    long long* buf_start
    int* buf_pid
    double* buf_tag
    int* q_head
    int* q_len
    double* q_deficit
    char* q_fresh
    double* q_last_tag
    long long* last_out
    # links
    int* link_backlog
    char* link_busy
    int* in_service
    double* link_vtime
    int* link_ptr
    double* done_time
    long long* done_seq
    # packets and counters
    long long* pk_enq
    long long* served_pkts
    double* served_bits


cdef inline cnp.ndarray _c(obj, dtype):
    return np.ascontiguousarray(obj, dtype=dtype)


def simulate(dict inp):
    # keep references so the raw pointers stay valid
    a_time = _c(inp["arr_time"], np.float64)
    a_flow = _c(inp["arr_flow"], np.int32)
    a_size = _c(inp["arr_size"], np.float64)
    a_hop_start = _c(inp["flow_hop_start"], np.int32)
    a_hop_link = _c(inp["hop_link"], np.int32)
    a_hop_queue = _c(inp["hop_queue"], np.int32)
    a_link_cap = _c(inp["link_cap"], np.float64)
    a_link_policy = _c(inp["link_policy"], np.int32)
    a_link_qlo = _c(inp["link_qlo"], np.int32)
    a_link_qhi = _c(inp["link_qhi"], np.int32)
    a_q_order = _c(inp["q_order"], np.int32)
    a_q_cap = _c(inp["q_cap"], np.int32)
    a_q_weight = _c(inp["q_weight"], np.float64)
    a_q_quantum = _c(inp["q_quantum"], np.float64)
    cdef double duration = inp["duration"]

    cdef Py_ssize_t n_flows = a_hop_start.shape[0] - 1
    cdef Py_ssize_t n_links = a_link_cap.shape[0]
    cdef Py_ssize_t n_queues = a_q_cap.shape[0]
    cdef Py_ssize_t n_arr = a_time.shape[0]

    out_sent = np.zeros(n_flows, dtype=np.int64)
    out_delivered = np.zeros(n_flows, dtype=np.int64)
    out_dropped = np.zeros(n_flows, dtype=np.int64)
    out_delay = np.zeros(n_flows, dtype=np.float64)
    out_spkts = np.zeros(n_queues, dtype=np.int64)
    out_sbits = np.zeros(n_queues, dtype=np.float64)
    out_maxocc = np.zeros(n_queues, dtype=np.int64)
    out_qdrops = np.zeros(n_queues, dtype=np.int64)

    buf_start = np.zeros(n_queues + 1, dtype=np.int64)
    buf_start[1:] = np.cumsum(a_q_cap.astype(np.int64))
    total_slots = max(int(buf_start[n_queues]), 1)
    buf_pid = np.zeros(total_slots, dtype=np.int32)
    buf_tag = np.zeros(total_slots, dtype=np.float64)
    q_head = np.zeros(n_queues + 1, dtype=np.int32)
    q_len = np.zeros(n_queues + 1, dtype=np.int32)
    q_deficit = np.zeros(n_queues + 1, dtype=np.float64)
    q_fresh = np.zeros(n_queues + 1, dtype=np.int8)
    q_last_tag = np.zeros(n_queues + 1, dtype=np.float64)
    last_out = np.full(n_queues + 1, -1, dtype=np.int64)
    link_backlog = np.zeros(n_links + 1, dtype=np.int32)
    link_busy = np.zeros(n_links + 1, dtype=np.int8)
    in_service = np.full(n_links + 1, -1, dtype=np.int32)
    link_vtime = np.zeros(n_links + 1, dtype=np.float64)
    link_ptr = np.zeros(n_links + 1, dtype=np.int32)
    done_time = np.full(n_links + 1, INFINITY, dtype=np.float64)
    done_seq = np.zeros(n_links + 1, dtype=np.int64)
    pk_hop = np.zeros(n_arr + 1, dtype=np.int32)
    pk_enq = np.zeros(n_arr + 1, dtype=np.int64)

    cdef State s
    s.warmup = inp["warmup"]
    s.check = inp["check"]
    s.fifo_ordered = True
    s.seq = 0
    s.link_policy = <const int*> cnp.PyArray_DATA(a_link_policy)
    s.link_qlo = <const int*> cnp.PyArray_DATA(a_link_qlo)
    s.link_qhi = <const int*> cnp.PyArray_DATA(a_link_qhi)
    s.link_cap = <const double*> cnp.PyArray_DATA(a_link_cap)
    s.q_order = <const int*> cnp.PyArray_DATA(a_q_order)
    s.q_cap = <const int*> cnp.PyArray_DATA(a_q_cap)
    s.q_weight = <const double*> cnp.PyArray_DATA(a_q_weight)
    s.q_quantum = <const double*> cnp.PyArray_DATA(a_q_quantum)
    s.arr_size = <const double*> cnp.PyArray_DATA(a_size)
    s.buf_start = <long long*> cnp.PyArray_DATA(buf_start)
    s.buf_pid = <int*> cnp.PyArray_DATA(buf_pid)
    s.buf_tag = <double*> cnp.PyArray_DATA(buf_tag)
    s.q_head = <int*> cnp.PyArray_DATA(q_head)
    s.q_len = <int*> cnp.PyArray_DATA(q_len)
    s.q_deficit = <double*> cnp.PyArray_DATA(q_deficit)
    s.q_fresh = <char*> cnp.PyArray_DATA(q_fresh)
    s.q_last_tag = <double*> cnp.PyArray_DATA(q_last_tag)
    s.last_out = <long long*> cnp.PyArray_DATA(last_out)
    s.link_backlog = <int*> cnp.PyArray_DATA(link_backlog)
    s.link_busy = <char*> cnp.PyArray_DATA(link_busy)
    s.in_service = <int*> cnp.PyArray_DATA(in_service)
    s.link_vtime = <double*> cnp.PyArray_DATA(link_vtime)
    s.link_ptr = <int*> cnp.PyArray_DATA(link_ptr)
    s.done_time = <double*> cnp.PyArray_DATA(done_time)
    s.done_seq = <long long*> cnp.PyArray_DATA(done_seq)
    s.pk_enq = <long long*> cnp.PyArray_DATA(pk_enq)
    s.served_pkts = <long long*> cnp.PyArray_DATA(out_spkts)
    s.served_bits = <double*> cnp.PyArray_DATA(out_sbits)

    cdef const double* arr_time = <const double*> cnp.PyArray_DATA(a_time)
    cdef const int* arr_flow = <const int*> cnp.PyArray_DATA(a_flow)
    cdef const double* arr_size = s.arr_size
    cdef const int* hop_start = <const int*> cnp.PyArray_DATA(a_hop_start)
    cdef const int* hop_link = <const int*> cnp.PyArray_DATA(a_hop_link)
    cdef const int* hop_queue = <const int*> cnp.PyArray_DATA(a_hop_queue)
    cdef int* p_hop = <int*> cnp.PyArray_DATA(pk_hop)
    cdef long long* sent = <long long*> cnp.PyArray_DATA(out_sent)
    cdef long long* delivered = <long long*> cnp.PyArray_DATA(out_delivered)
    cdef long long* dropped = <long long*> cnp.PyArray_DATA(out_dropped)
    cdef double* delay_sum = <double*> cnp.PyArray_DATA(out_delay)
    cdef long long* max_occ = <long long*> cnp.PyArray_DATA(out_maxocc)
    cdef long long* q_drops = <long long*> cnp.PyArray_DATA(out_qdrops)

    cdef long long enq_seq = 0, events = 0, best_seq
    cdef bint work_conserving = True
    cdef Py_ssize_t i = 0, l, best_l, k, g, j, slot, pid, f, h
    cdef double now, next_arr, next_tx, size, tag
    cdef double warmup = s.warmup

    with nogil:
        while True:
            next_arr = arr_time[i] if i < n_arr else INFINITY
            best_l = -1
            next_tx = INFINITY
            best_seq = 0
            for l in range(n_links):
                if s.done_time[l] < next_tx or (best_l >= 0 and s.done_time[l] == next_tx
                                                and s.done_seq[l] < best_seq):
                    next_tx = s.done_time[l]
                    best_seq = s.done_seq[l]
                    best_l = l
            if next_arr <= next_tx:
                now = next_arr
                if now >= duration:
                    break
                pid = i
                i += 1
                f = arr_flow[pid]
                p_hop[pid] = hop_start[f]
                if now >= warmup:
                    sent[f] += 1
                l = -1
            else:
                now = next_tx
                if now >= duration:
                    break
                l = best_l
                s.done_time[l] = INFINITY
                pid = s.in_service[l]
                s.in_service[l] = -1
                f = arr_flow[pid]
                h = p_hop[pid] + 1
                if h == hop_start[f + 1]:
                    if arr_time[pid] >= warmup:
                        delivered[f] += 1
                        delay_sum[f] += now - arr_time[pid]
                    pid = -1
                else:
                    p_hop[pid] = h

            # hop arrival of packet pid (external or forwarded)
            if pid >= 0:
                h = p_hop[pid]
                k = hop_link[h]
                g = hop_queue[h]
                size = arr_size[pid]
                if s.q_len[g] >= s.q_cap[g]:
                    if arr_time[pid] >= warmup:
                        dropped[f] += 1
                        q_drops[g] += 1
                else:
                    tag = 0.0
                    if s.link_policy[k] == WFQ:
                        tag = s.link_vtime[k] if s.link_vtime[k] > s.q_last_tag[g] else s.q_last_tag[g]
                        tag = tag + size / s.q_weight[g]
                        s.q_last_tag[g] = tag
                    slot = s.buf_start[g] + (s.q_head[g] + s.q_len[g]) % s.q_cap[g]
                    s.buf_pid[slot] = <int>pid
                    s.buf_tag[slot] = tag
                    s.q_len[g] += 1
                    s.link_backlog[k] += 1
                    if s.q_len[g] > max_occ[g]:
                        max_occ[g] = s.q_len[g]
                    if s.check:
                        s.pk_enq[pid] = enq_seq
                        enq_seq += 1
                    if not s.link_busy[k]:
                        _start(&s, k, now)

            # the link that just finished picks its next packet
            if l >= 0:
                _start(&s, l, now)
            events += 1
            if s.check:
                for j in range(n_links):
                    if s.link_backlog[j] > 0 and not s.link_busy[j]:
                        work_conserving = False

    return {
        "flow_sent": out_sent,
        "flow_delivered": out_delivered,
        "flow_dropped": out_dropped,
        "flow_delay_sum": out_delay,
        "q_served_pkts": out_spkts,
        "q_served_bits": out_sbits,
        "q_max_occupancy": out_maxocc,
        "q_drops": out_qdrops,
        "work_conserving": bool(work_conserving),
        "fifo_ordered": bool(s.fifo_ordered),
        "events": events,
    }


cdef void _start(State* s, Py_ssize_t l, double now) noexcept nogil:
    cdef Py_ssize_t lo = s.link_qlo[l], hi = s.link_qhi[l], k = hi - lo
    cdef Py_ssize_t g = -1, j, q, misses, pid
    cdef int policy = s.link_policy[l]
    cdef double best_tag, head, rounds, r, size
    if s.link_backlog[l] == 0:
        if policy == WFQ:
            s.link_vtime[l] = 0.0
            for j in range(lo, hi):
                s.q_last_tag[j] = 0.0
        s.link_busy[l] = 0
        return
    if policy == FIFO:
        g = lo
    elif policy == SP:
        for j in range(lo, hi):
            if s.q_len[s.q_order[j]] > 0:
                g = s.q_order[j]
                break
    elif policy == WFQ:
        best_tag = INFINITY
        for j in range(lo, hi):
            if s.q_len[j] > 0 and s.buf_tag[s.buf_start[j] + s.q_head[j]] < best_tag:
                g = j
                best_tag = s.buf_tag[s.buf_start[j] + s.q_head[j]]
        s.link_vtime[l] = best_tag
    else:
        misses = 0
        while True:
            q = lo + s.link_ptr[l]
            if s.q_len[q] > 0:
                if not s.q_fresh[q]:
                    s.q_deficit[q] += s.q_quantum[q]
                    s.q_fresh[q] = 1
                if s.arr_size[s.buf_pid[s.buf_start[q] + s.q_head[q]]] <= s.q_deficit[q]:
                    g = q
                    break
                s.q_fresh[q] = 0
            else:
                s.q_deficit[q] = 0.0
                s.q_fresh[q] = 0
            s.link_ptr[l] = (s.link_ptr[l] + 1) % k
            misses += 1
            if misses >= k:
                # a whole round granted nothing: skip the idle rounds at once
                rounds = INFINITY
                for j in range(lo, hi):
                    if s.q_len[j] > 0:
                        head = s.arr_size[s.buf_pid[s.buf_start[j] + s.q_head[j]]]
                        r = ceil((head - s.q_deficit[j]) / s.q_quantum[j])
                        if r < rounds:
                            rounds = r
                for j in range(lo, hi):
                    if s.q_len[j] > 0:
                        s.q_deficit[j] += (rounds - 1) * s.q_quantum[j]
                misses = 0

    pid = s.buf_pid[s.buf_start[g] + s.q_head[g]]
    s.q_head[g] = (s.q_head[g] + 1) % s.q_cap[g]
    s.q_len[g] -= 1
    s.link_backlog[l] -= 1
    size = s.arr_size[pid]
    if policy == DRR:
        s.q_deficit[g] -= size
        if s.q_len[g] == 0:
            s.q_deficit[g] = 0.0
            s.q_fresh[g] = 0
            s.link_ptr[l] = (s.link_ptr[l] + 1) % k
    if s.check:
        if s.pk_enq[pid] < s.last_out[g]:
            s.fifo_ordered = False
        s.last_out[g] = s.pk_enq[pid]
    if now >= s.warmup:
        s.served_pkts[g] += 1
        s.served_bits[g] += size
    s.link_busy[l] = 1
    s.in_service[l] = <int>pid
    s.seq += 1
    s.done_time[l] = now + size / s.link_cap[l]
    s.done_seq[l] = s.seq
