"""Event-driven simulation of the multi-class network.

Each node is a FIFO compute server followed by a FIFO communication server.
A packet finishing compute is forwarded with probability gamma/lambda and
otherwise absorbed by the computation; after communication it is routed,
possibly changing class, or leaves the network.
"""
from __future__ import annotations

import heapq
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .errors import CompflowError, InstabilityError
from .flownet import FlowSolution, NetworkSpec, solve_traffic, validate_routing

_BATCH = 1 << 16
_N_BATCHES = 20


@dataclass
class SimConfig:
    network: NetworkSpec
    departures: int | None = 100_000
    duration: float | None = None
    warmup: float = 0.2
    seed: int = 0
    slot: float = 1.0
    ratio: np.ndarray | float | None = None  # gamma/lambda per (node, class); defaults to Gamma_c
    histogram_node: int | None = None
    max_events: int = 500_000_000

    def __post_init__(self):
        if (self.departures is None) == (self.duration is None):
            raise ValueError("give exactly one of departures or duration")
        if (self.departures is not None and self.departures <= 0) or (self.duration is not None and self.duration <= 0):
            raise ValueError("horizon must be positive")
        if not 0 <= self.warmup < 1:
            raise ValueError("warmup must lie in [0, 1)")
        if self.slot <= 0:
            raise ValueError("slot duration must be positive")


@dataclass
class SimStats:
    network: NetworkSpec = field(repr=False)
    ratio: np.ndarray
    L: np.ndarray
    m: np.ndarray
    n: np.ndarray
    throughput: np.ndarray
    sojourn: np.ndarray
    L_halfwidth: np.ndarray
    arrivals: np.ndarray
    completions: np.ndarray
    generated: np.ndarray
    slotted: np.ndarray  # (V, C, slots): packets forwarded to communication per slot
    window: float
    events: int
    external_total: np.ndarray
    exited_total: np.ndarray
    absorbed_total: np.ndarray
    in_flight: np.ndarray
    histogram: dict = field(default_factory=dict, repr=False)

    def rows(self) -> list[dict]:
        net = self.network
        V, C = net.shape
        return [
            {
                "node": net.node_names[v],
                "class": net.class_names[c],
                "L": self.L[v, c],
                "m": self.m[v, c],
                "n": self.n[v, c],
                "throughput": self.throughput[v, c],
                "sojourn": self.sojourn[v, c],
                "L_halfwidth": self.L_halfwidth[v, c],
                "arrivals": int(self.arrivals[v, c]),
                "generated": int(self.generated[v, c]),
            }
            for v in range(V)
            for c in range(C)
        ]


def _check_stable(net, ratio):
    V, C = net.shape
    if not np.allclose(net.mu, net.mu[:, :1]):
        raise ValueError("simulation needs a class-independent communication rate per node")
    flow = solve_traffic(net, "ratio", ratio=ratio)
    comm_load = flow.gamma.sum(axis=1) / net.mu[:, 0]
    if np.any(comm_load >= 1):
        v = int(np.argmax(comm_load))
        raise InstabilityError(f"node {v}: communication utilization {comm_load[v]:.6g} >= 1")
    if net.chi is not None:
        with np.errstate(divide="ignore"):
            comp_load = np.where(np.isfinite(net.chi), flow.lam / net.chi, 0.0).sum(axis=1)
        if np.any(comp_load >= 1):
            v = int(np.argmax(comp_load))
            raise InstabilityError(f"node {v}: compute utilization {comp_load[v]:.6g} >= 1")
    return flow


def run_simulation(cfg: SimConfig) -> SimStats:
    net = cfg.network
    problems = validate_routing(net.routing)
    if problems:
        raise CompflowError("invalid routing: " + "; ".join(problems))
    V, C = net.shape
    N = V * C
    ratio = np.broadcast_to(net.gamma_surj if cfg.ratio is None else cfg.ratio, (V, C)).astype(float)
    _check_stable(net, ratio)

    rng = np.random.default_rng(cfg.seed)
    exp_buf = rng.standard_exponential(_BATCH)
    uni_buf = rng.random(_BATCH)
    pos = [0, 0]

    def expo():
        nonlocal exp_buf
        i = pos[0]
        if i == _BATCH:
            exp_buf = rng.standard_exponential(_BATCH)
            i = 0
        pos[0] = i + 1
        return exp_buf[i]

    def unif():
        nonlocal uni_buf
        i = pos[1]
        if i == _BATCH:
            uni_buf = rng.random(_BATCH)
            i = 0
        pos[1] = i + 1
        return uni_buf[i]

    beta = net.beta.ravel().tolist()
    keep = ratio.ravel().tolist()
    mu = net.mu[:, 0].tolist()
    if net.chi is None:
        chi = [math.inf] * N
    else:
        chi = [x if x > 0 else math.inf for x in net.chi.ravel().tolist()]
    has_compute = [math.isfinite(x) for x in chi]

    # routing tables: cumulative probabilities over flattened destinations
    R = net.routing.matrix()
    route_cum, route_dst = [], []
    for i in range(N):
        dst = np.flatnonzero(R[i] > 0)
        route_dst.append(dst.tolist())
        route_cum.append(np.cumsum(R[i, dst]).tolist())

    comp_q = [[] for _ in range(V)]  # FIFO as list + head index
    comp_h = [0] * V
    comm_q = [[] for _ in range(V)]
    comm_h = [0] * V

    cnt_m = [0] * N
    cnt_n = [0] * N
    area_m = [0.0] * N
    area_n = [0.0] * N
    last_m = [0.0] * N
    last_n = [0.0] * N

    arrivals = [0] * N
    completions = [0] * N
    sojourn_sum = [0.0] * N
    generated = [0] * N
    gen_slots = [[] for _ in range(N)]
    ext_total = [0] * N
    exited_total = [0] * N
    absorbed_total = [0] * N

    hist_node = cfg.histogram_node
    hist: dict = {}
    hist_state = [0] * C
    hist_last = 0.0

    heap = []
    seq = 0
    for i in range(N):
        if beta[i] > 0:
            heapq.heappush(heap, (expo() / beta[i], seq, 0, i))
            seq += 1

    if cfg.departures is not None:
        total_target = cfg.departures
        warm_target = int(cfg.warmup * cfg.departures)
        time_end = math.inf
    else:
        total_target = math.inf
        warm_target = None
        time_end = cfg.duration
    warm_time = cfg.warmup * cfg.duration if cfg.duration is not None else math.inf

    measuring = False
    t_start = 0.0
    departed = 0
    events = 0
    now = 0.0
    batch_marks = []  # (time, area snapshot) at batch boundaries
    next_batch = None
    batch_size = None
    next_batch_time = math.inf
    batch_dt = None
    if cfg.departures is not None:
        batch_size = max(1, (cfg.departures - warm_target) // _N_BATCHES)
    else:
        batch_dt = cfg.duration * (1 - cfg.warmup) / _N_BATCHES

    def flush(t):
        for i in range(N):
            area_m[i] += cnt_m[i] * (t - last_m[i])
            last_m[i] = t
            area_n[i] += cnt_n[i] * (t - last_n[i])
            last_n[i] = t

    def start_measuring(t):
        nonlocal t_start, measuring, next_batch, next_batch_time, hist_last
        flush(t)
        hist_last = t
        for i in range(N):
            area_m[i] = area_n[i] = 0.0
            arrivals[i] = completions[i] = generated[i] = 0
            sojourn_sum[i] = 0.0
            gen_slots[i] = []
        t_start = t
        measuring = True
        batch_marks.append((t, [0.0] * N))
        if batch_size is not None:
            next_batch = departed + batch_size
        else:
            next_batch_time = t + batch_dt

    def snapshot(t):
        flush(t)
        batch_marks.append((t, [area_m[i] + area_n[i] for i in range(N)]))

    def hist_update(t, c, delta):
        nonlocal hist_last
        if measuring:
            key = tuple(hist_state)
            hist[key] = hist.get(key, 0.0) + (t - hist_last)
        hist_last = t
        hist_state[c] += delta

    def arrive(t, i, t_arr):
        # packet of flat class index i enters node i // C
        v = i // C
        arrivals[i] += 1
        if has_compute[i]:
            area_m[i] += cnt_m[i] * (t - last_m[i])
            last_m[i] = t
            cnt_m[i] += 1
            q = comp_q[v]
            q.append((i, t_arr))
            if len(q) - comp_h[v] == 1:
                nonlocal seq
                heapq.heappush(heap, (t + expo() / chi[i], seq, 1, v))
                seq += 1
        else:
            forward_or_absorb(t, i, t_arr)

    def forward_or_absorb(t, i, t_arr):
        nonlocal departed, seq
        v = i // C
        if keep[i] >= 1.0 or unif() < keep[i]:
            generated[i] += 1
            if measuring:
                gen_slots[i].append(int((t - t_start) / cfg.slot))
            area_n[i] += cnt_n[i] * (t - last_n[i])
            last_n[i] = t
            cnt_n[i] += 1
            if v == hist_node:
                hist_update(t, i % C, 1)
            q = comm_q[v]
            q.append((i, t_arr))
            if len(q) - comm_h[v] == 1:
                heapq.heappush(heap, (t + expo() / mu[v], seq, 2, v))
                seq += 1
        else:
            absorbed_total[i] += 1
            departed += 1
            if measuring and t_arr >= t_start:
                completions[i] += 1
                sojourn_sum[i] += t - t_arr

    if warm_target == 0 or (cfg.duration is not None and cfg.warmup == 0):
        start_measuring(0.0)

    while heap:
        t, _, kind, idx = heapq.heappop(heap)
        if t > time_end:
            now = time_end
            break
        now = t
        events += 1
        if events > cfg.max_events:
            raise CompflowError(f"event cap of {cfg.max_events} exceeded")
        if not measuring and t >= warm_time:
            start_measuring(t)
        while t >= next_batch_time:
            snapshot(next_batch_time)
            next_batch_time += batch_dt

        if kind == 0:
            ext_total[idx] += 1
            heapq.heappush(heap, (t + expo() / beta[idx], seq, 0, idx))
            seq += 1
            arrive(t, idx, t)
        elif kind == 1:
            v = idx
            q = comp_q[v]
            i, t_arr = q[comp_h[v]]
            comp_h[v] += 1
            if comp_h[v] > 4096 and comp_h[v] * 2 > len(q):
                del q[: comp_h[v]]
                comp_h[v] = 0
            area_m[i] += cnt_m[i] * (t - last_m[i])
            last_m[i] = t
            cnt_m[i] -= 1
            if len(q) > comp_h[v]:
                nxt = q[comp_h[v]][0]
                heapq.heappush(heap, (t + expo() / chi[nxt], seq, 1, v))
                seq += 1
            forward_or_absorb(t, i, t_arr)
        else:
            v = idx
            q = comm_q[v]
            i, t_arr = q[comm_h[v]]
            comm_h[v] += 1
            if comm_h[v] > 4096 and comm_h[v] * 2 > len(q):
                del q[: comm_h[v]]
                comm_h[v] = 0
            area_n[i] += cnt_n[i] * (t - last_n[i])
            last_n[i] = t
            cnt_n[i] -= 1
            if v == hist_node:
                hist_update(t, i % C, -1)
            if len(q) > comm_h[v]:
                heapq.heappush(heap, (t + expo() / mu[v], seq, 2, v))
                seq += 1
            if measuring and t_arr >= t_start:
                completions[i] += 1
                sojourn_sum[i] += t - t_arr
            cum = route_cum[i]
            if cum:
                u = unif()
                k = bisect_right(cum, u)
                if k < len(cum):
                    arrive(t, route_dst[i][k], t)
                    continue
            exited_total[i] += 1
            departed += 1

        if not measuring and warm_target is not None and departed >= warm_target:
            start_measuring(t)
        elif measuring and next_batch is not None and departed >= next_batch:
            snapshot(t)
            next_batch += batch_size
        if departed >= total_target:
            break

    if not measuring:
        start_measuring(now)
    flush(now)
    if hist_node is not None:
        hist_update(now, 0, 0)
    window = now - t_start

    if batch_marks[-1][0] < now:
        batch_marks.append((now, [area_m[i] + area_n[i] for i in range(N)]))

    shape = (V, C)
    with np.errstate(divide="ignore", invalid="ignore"):
        L_m = np.array(area_m).reshape(shape) / window if window > 0 else np.zeros(shape)
        L_n = np.array(area_n).reshape(shape) / window if window > 0 else np.zeros(shape)
        arr = np.array(arrivals).reshape(shape)
        comp = np.array(completions).reshape(shape)
        thr = arr / window if window > 0 else np.zeros(shape)
        soj = np.where(comp > 0, np.array(sojourn_sum).reshape(shape) / np.maximum(comp, 1), 0.0)

    halfwidth = np.zeros(shape)
    if len(batch_marks) >= 3:
        times = np.array([b[0] for b in batch_marks])
        areas = np.array([b[1] for b in batch_marks])
        dt = np.diff(times)
        ok = dt > 0
        if ok.sum() >= 2:
            means = np.diff(areas, axis=0)[ok] / dt[ok, None]
            b = means.shape[0]
            halfwidth = (sps.t.ppf(0.975, b - 1) * means.std(axis=0, ddof=1) / math.sqrt(b)).reshape(shape)

    n_slots = int(window / cfg.slot) + 1 if window > 0 else 0
    slotted = np.zeros((V, C, n_slots), dtype=np.int64)
    for i in range(N):
        if gen_slots[i]:
            slotted[i // C, i % C] = np.bincount(gen_slots[i], minlength=n_slots)[:n_slots]

    ext = np.array(ext_total).reshape(shape)
    exited = np.array(exited_total).reshape(shape)
    absorbed = np.array(absorbed_total).reshape(shape)
    in_flight = np.array([cnt_m[i] + cnt_n[i] for i in range(N)]).reshape(shape)
    return SimStats(
        network=net,
        ratio=ratio,
        L=L_m + L_n,
        m=L_m,
        n=L_n,
        throughput=thr,
        sojourn=soj,
        L_halfwidth=halfwidth,
        arrivals=arr,
        completions=comp,
        generated=np.array(generated).reshape(shape),
        slotted=slotted,
        window=window,
        events=events,
        external_total=ext,
        exited_total=exited,
        absorbed_total=absorbed,
        in_flight=in_flight,
        histogram=hist,
    )


def empirical_little_check(stats: SimStats, tol: float = 0.02) -> list[dict]:
    """Per node-class check of L against throughput times mean sojourn."""
    net = stats.network
    V, C = net.shape
    rows = []
    for v in range(V):
        for c in range(C):
            L = stats.L[v, c]
            lw = stats.throughput[v, c] * stats.sojourn[v, c]
            err = abs(L - lw)
            rows.append(
                {
                    "node": net.node_names[v],
                    "class": net.class_names[c],
                    "L": L,
                    "lambda_W": lw,
                    "abs_error": err,
                    "pass": bool(err <= tol * L) if L > 0 else True,
                }
            )
    return rows


def analytic_occupancy(net: NetworkSpec, flow: FlowSolution) -> tuple[np.ndarray, np.ndarray]:
    """Mean compute and communication occupancies of the tandem node model.

    Both stages are multi-class FIFO M/M/1 queues with class-independent
    rates, so each class holds its share of the aggregate occupancy.
    """
    V, C = net.shape
    m = np.zeros((V, C))
    n = np.zeros((V, C))
    mu = net.mu[:, 0]
    rho = flow.gamma / mu[:, None]
    n = rho / (1.0 - rho.sum(axis=1, keepdims=True))
    if net.chi is not None:
        chi = net.chi
        with np.errstate(divide="ignore", invalid="ignore"):
            sigma = np.where(np.isfinite(chi) & (chi > 0), flow.lam / chi, 0.0)
        m = sigma / (1.0 - sigma.sum(axis=1, keepdims=True))
    return m, n


def compare_to_analytic(stats: SimStats, flow: FlowSolution, tol: float = 0.05) -> dict:
    """Relative errors of simulated rates, occupancies and sojourns against theory."""
    net = flow.network if flow.network is not None else stats.network
    if net.shape != stats.network.shape or flow.lam.shape != stats.L.shape:
        raise ValueError("simulation and flow solution describe different networks")
    m, n = analytic_occupancy(net, flow)
    L = m + n
    V, C = net.shape
    rows, failed = [], []
    for v in range(V):
        for c in range(C):
            lam = flow.lam[v, c]
            W = L[v, c] / lam if lam > 0 else 0.0

            def rel(sim, theory):
                if theory == 0:
                    return abs(sim)
                return abs(sim - theory) / abs(theory)

            errs = {
                "lambda": rel(stats.throughput[v, c], lam),
                "L": rel(stats.L[v, c], L[v, c]),
                "W": rel(stats.sojourn[v, c], W),
            }
            ok = all(e <= tol for e in errs.values())
            name = f"{net.node_names[v]}/{net.class_names[c]}"
            if not ok:
                failed.append(name)
            rows.append(
                {
                    "node": net.node_names[v],
                    "class": net.class_names[c],
                    "lambda_theory": lam,
                    "L_theory": L[v, c],
                    "W_theory": W,
                    "lambda_sim": stats.throughput[v, c],
                    "L_sim": stats.L[v, c],
                    "W_sim": stats.sojourn[v, c],
                    "err_lambda": errs["lambda"],
                    "err_L": errs["L"],
                    "err_W": errs["W"],
                    "pass": ok,
                }
            )
    return {"pass": not failed, "failed": failed, "rows": rows}
