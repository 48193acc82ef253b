"""Reference event loop in plain Python (used when the compiled kernel is unavailable)."""
from __future__ import annotations

import heapq

import numpy as np

from .scheduling import PortState, QueueState


def simulate(inp: dict) -> dict:
    arr_time = inp["arr_time"].tolist()
    arr_flow = inp["arr_flow"].tolist()
    arr_size = inp["arr_size"].tolist()
    hop_start = inp["flow_hop_start"].tolist()
    hop_link = inp["hop_link"].tolist()
    hop_queue = inp["hop_queue"].tolist()
    link_cap = inp["link_cap"].tolist()
    link_qlo = inp["link_qlo"].tolist()
    link_qhi = inp["link_qhi"].tolist()
    q_order = inp["q_order"].tolist()
    q_cap = inp["q_cap"].tolist()
    q_weight = inp["q_weight"].tolist()
    q_quantum = inp["q_quantum"].tolist()
    warmup = float(inp["warmup"])
    duration = float(inp["duration"])
    check = bool(inp["check"])

    n_flows = len(hop_start) - 1
    n_links = len(link_cap)
    n_queues = len(q_cap)

    ports = []
    for l in range(n_links):
        lo, hi = link_qlo[l], link_qhi[l]
        queues = [QueueState(q_cap[g], q_weight[g], q_quantum[g]) for g in range(lo, hi)]
        ports.append(PortState(int(inp["link_policy"][l]), queues, [g - lo for g in q_order[lo:hi]]))

    sent = [0] * n_flows
    delivered = [0] * n_flows
    dropped = [0] * n_flows
    delay_sum = [0.0] * n_flows
    served_pkts = [0] * n_queues
    served_bits = [0.0] * n_queues
    q_drops = [0] * n_queues

    n_arr = len(arr_time)
    pk_hop = [0] * n_arr
    in_service = [-1] * n_links
    heap: list = []
    seq = 0
    enq_seq = 0
    last_out = [-1] * n_queues
    pk_enq = [0] * n_arr if check else None
    work_conserving = True
    fifo_ordered = True
    events = 0

    def start_service(l, now):
        nonlocal seq, fifo_ordered
        port = ports[l]
        qi = port.select_next()
        if qi is None:
            port.busy = False
            return
        pid, size = port.dequeue(qi)
        g = link_qlo[l] + qi
        if check:
            if pk_enq[pid] < last_out[g]:
                fifo_ordered = False
            last_out[g] = pk_enq[pid]
        if now >= warmup:
            served_pkts[g] += 1
            served_bits[g] += size
        port.busy = True
        in_service[l] = pid
        seq += 1
        heapq.heappush(heap, (now + size / link_cap[l], seq, l))

    def arrive(pid, now):
        nonlocal enq_seq
        h = pk_hop[pid]
        l = hop_link[h]
        g = hop_queue[h]
        port = ports[l]
        if port.enqueue(g - link_qlo[l], pid, arr_size[pid]):
            if check:
                pk_enq[pid] = enq_seq
                enq_seq += 1
            if not port.busy:
                start_service(l, now)
        elif arr_time[pid] >= warmup:
            dropped[arr_flow[pid]] += 1
            q_drops[g] += 1

    i = 0
    while True:
        next_arr = arr_time[i] if i < n_arr else np.inf
        next_tx = heap[0][0] if heap else np.inf
        if next_arr <= next_tx:
            now = next_arr
            if now >= duration:
                break
            pid = i
            i += 1
            f = arr_flow[pid]
            pk_hop[pid] = hop_start[f]
            if now >= warmup:
                sent[f] += 1
            arrive(pid, now)
        else:
            now, _, l = heapq.heappop(heap)
            if now >= duration:
                break
            pid = in_service[l]
            in_service[l] = -1
            f = arr_flow[pid]
            h = pk_hop[pid] + 1
            if h == hop_start[f + 1]:
                if arr_time[pid] >= warmup:
                    delivered[f] += 1
                    delay_sum[f] += now - arr_time[pid]
            else:
                pk_hop[pid] = h
                arrive(pid, now)
            start_service(l, now)
        events += 1
        if check:
            for port in ports:
                if port.backlog > 0 and not port.busy:
                    work_conserving = False

    max_occ = [0] * n_queues
    for l, port in enumerate(ports):
        for qi, q in enumerate(port.queues):
            max_occ[link_qlo[l] + qi] = q.max_occupancy

    return {
        "flow_sent": np.array(sent, dtype=np.int64),
        "flow_delivered": np.array(delivered, dtype=np.int64),
        "flow_dropped": np.array(dropped, dtype=np.int64),
        "flow_delay_sum": np.array(delay_sum, dtype=np.float64),
        "q_served_pkts": np.array(served_pkts, dtype=np.int64),
        "q_served_bits": np.array(served_bits, dtype=np.float64),
        "q_max_occupancy": np.array(max_occ, dtype=np.int64),
        "q_drops": np.array(q_drops, dtype=np.int64),
        "work_conserving": work_conserving,
        "fifo_ordered": fifo_ordered,
        "events": events,
    }
