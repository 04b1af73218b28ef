"""Total-delay objectives and their minimization over processing factors.

The decision variable is the processing ratio ``t = gamma / lambda`` per
(node, class), boxed in ``[Gamma_c, 1]``. Arrival rates are always recovered
from the traffic equations, so flow conservation holds at every iterate.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, SingularSystemError
from .flownet import FlowSolution, NetworkSpec, RoutingPolicy, solve_traffic
from .queueing import Complexity, CostBreakdown, DelayMode

SWEEP_PARAMETERS = ("mu", "beta", "Gamma", "L", "k")


@dataclass
class SolverOptions:
    max_iters: int = 2000
    step: float = 0.1
    tol: float = 1e-9  # on the projected gradient, scaled by max(1, |f|)
    restarts: int = 8
    seed: int = 0
    mode: str = "projected_descent"
    grid_points: int = 100_001
    record: bool = False

    def __post_init__(self):
        if self.mode not in ("closed_form", "projected_descent", "grid"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if min(self.max_iters, self.step, self.tol, self.grid_points) <= 0 or self.restarts < 0:
            raise ValueError("solver options must be positive")


@dataclass
class Objective:
    total: float
    per_node_class: dict
    feasible: bool
    active_constraints: list
    ratio: np.ndarray
    converged: bool = True
    iterations: int = 0
    history: list = field(default_factory=list, repr=False)


def cost_arrays(net: NetworkSpec, lam: np.ndarray, gamma: np.ndarray):
    """Per (node, class) compute and communication delays, vectorized.

    Returns ``(w_comp, w_comm, m, n, feasible)``; node-classes without
    traffic contribute zero delay.
    """
    active = lam > 0
    slack = net.mu - gamma
    feasible = bool(np.all(slack[active] > 0) and np.all(gamma <= lam * (1 + 1e-12)))
    with np.errstate(divide="ignore", invalid="ignore"):
        w_comm = np.where(active, 1.0 / slack, 0.0)
        n = np.where(active, gamma / slack, 0.0)
        m = np.where(active, np.maximum(lam - gamma, 0.0) / slack, 0.0)
        w_comp = np.zeros_like(lam)
        for c, cls in enumerate(net.complexity):
            k, lc, mc = net.k[:, c], lam[:, c], m[:, c]
            if cls == Complexity.SEARCH:
                d = k * np.log2(1.0 + mc)
            elif cls == Complexity.MAPREDUCE:
                d = k * mc
            elif cls == Complexity.CLASSIFICATION:
                d = k * np.expm1(mc)
            else:
                if net.chi is None:
                    raise ValueError("ExpService classes need chi")
                chi = net.chi[:, c]
                sigma = lc / chi
                if np.any(sigma[active[:, c]] >= 1):
                    feasible = False
                w_comp[:, c] = np.where(active[:, c], k / (chi * (1.0 - sigma)), 0.0)
                continue
            w_comp[:, c] = np.where(active[:, c], d / lc, 0.0)
    return w_comp, w_comm, m, n, feasible


def _total(net, w_comp, w_comm):
    if net.delay_mode == DelayMode.PIPELINED:
        return float(np.maximum(w_comp, w_comm).sum())
    return float((w_comp + w_comm).sum())


def _lower(net):
    V, C = net.shape
    return np.broadcast_to(net.gamma_surj, (V, C)).astype(float)


def objective_value(net: NetworkSpec, ratio) -> float:
    """Total delay at processing ratio ``ratio``; ``inf`` when infeasible."""
    try:
        flow = solve_traffic(net, "ratio", ratio=ratio)
    except SingularSystemError:
        return math.inf
    w_comp, w_comm, *_, feasible = cost_arrays(net, flow.lam, flow.gamma)
    return _total(net, w_comp, w_comm) if feasible else math.inf


def evaluate(net: NetworkSpec, ratio) -> tuple[Objective, FlowSolution]:
    """Objective and flows at a fixed processing ratio."""
    flow = solve_traffic(net, "ratio", ratio=ratio)
    w_comp, w_comm, m, n, feasible = cost_arrays(net, flow.lam, flow.gamma)
    V, C = net.shape
    per = {
        (v, c): CostBreakdown(float(w_comp[v, c]), float(w_comm[v, c]), net.delay_mode)
        for v in range(V)
        for c in range(C)
        if flow.lam[v, c] > 0
    }
    lo = _lower(net)
    t = flow.ratio
    active = []
    for (v, c) in per:
        if t[v, c] <= lo[v, c] + 1e-9:
            active.append(f"gamma>=lambda*Gamma at node {v} class {c}")
        if t[v, c] >= 1 - 1e-9:
            active.append(f"gamma<=lambda at node {v} class {c}")
    total = _total(net, w_comp, w_comm) if feasible else math.inf
    return Objective(total, per, feasible, active, np.array(t)), flow


def comms_cost(net: NetworkSpec, form: str = "closed") -> float:
    """Pure-communication cost, with every node forwarding all it receives.

    ``closed`` evaluates the diagonal-routing closed form, summing
    ``1 / sum_v (mu_v^c - lambda_v^c)`` over classes with lambda from the
    diagonal-routing bound. ``direct`` sums ``1 / (mu - lambda)`` over active
    node-classes using the exact traffic solution with gamma = lambda; this is
    the value of the no-computation objective itself.
    """
    if form == "closed":
        ptilde = net.routing.destination_mass()
        diag = 1.0 - ptilde
        if np.any(diag <= 0):
            raise SingularSystemError("diagonal routing mass >= 1; closed form undefined")
        lam = net.beta / diag
        if np.any(lam >= net.mu):
            raise InfeasibleError("no-computation load reaches the service rate")
        return float(np.sum(1.0 / np.sum(net.mu - lam, axis=0)))
    if form == "direct":
        flow = solve_traffic(net, "ratio", ratio=1.0)
        active = flow.lam > 0
        if np.any(flow.lam[active] >= net.mu[active]):
            raise InfeasibleError("no-computation load reaches the service rate")
        return float(np.sum(1.0 / (net.mu[active] - flow.lam[active])))
    raise ValueError(f"unknown form {form!r}")


def convex_special_case(net: NetworkSpec) -> FlowSolution:
    """Flows when every node compresses fully, gamma = Gamma_c lambda.

    Solves gamma = Gamma (beta + R^T gamma) for gamma directly, then recovers
    lambda from flow conservation.
    """
    V, C = net.shape
    g = np.broadcast_to(net.gamma_surj, (V, C)).ravel()
    R_T = net.routing.matrix().T
    A = np.eye(V * C) - g[:, None] * R_T
    try:
        gamma = np.linalg.solve(A, g * net.beta.ravel())
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("I - Gamma R^T is singular") from exc
    lam = net.beta.ravel() + R_T @ gamma
    resid = float(np.max(np.abs(gamma - g * lam), initial=0.0))
    gamma, lam = gamma.reshape(V, C), lam.reshape(V, C)
    feasible = bool(np.all((lam < net.mu) | (lam == 0)))
    return FlowSolution(lam, gamma, resid, feasible, net)


def _num_grad(f, x, fx, lo, hi, h=1e-7):
    g = np.zeros_like(x)
    for i in range(x.size):
        if hi.flat[i] - lo.flat[i] <= 0:
            continue
        up, dn = x.copy(), x.copy()
        up.flat[i] = min(x.flat[i] + h, hi.flat[i])
        dn.flat[i] = max(x.flat[i] - h, lo.flat[i])
        fu, fd = f(up), f(dn)
        if math.isinf(fu):
            up, fu = x, fx
        if math.isinf(fd):
            dn, fd = x, fx
        width = up.flat[i] - dn.flat[i]
        g.flat[i] = (fu - fd) / width if width > 0 else 0.0
    return g


def _descend(f, x, lo, hi, opts, history):
    """Spectral projected gradient: Barzilai-Borwein steps, Armijo backtracking by halving.

    Converges when the scaled projected gradient falls below ``opts.tol``.
    """
    fx = f(x)
    g = _num_grad(f, x, fx, lo, hi)
    alpha = opts.step / max(1.0, np.max(np.abs(g)) / max(1.0, abs(fx)))
    for it in range(1, opts.max_iters + 1):
        scale = max(1.0, abs(fx))
        if np.max(np.abs(np.clip(x - g / scale, lo, hi) - x)) <= opts.tol:
            return x, fx, it, True
        d = np.clip(x - alpha * g, lo, hi) - x
        slope = float(g.ravel() @ d.ravel())
        if slope >= 0:
            return x, fx, it, True
        lam = 1.0
        while True:
            cand = x + lam * d
            fc = f(cand)
            if fc <= fx + 1e-4 * lam * slope:
                break
            lam *= 0.5
            if lam < 1e-14:
                return x, fx, it, True
        gc = _num_grad(f, cand, fc, lo, hi)
        s_vec, y_vec = (cand - x).ravel(), (gc - g).ravel()
        sy = float(s_vec @ y_vec)
        alpha = float(np.clip(s_vec @ s_vec / sy, 1e-12, 1e12)) if sy > 0 else 1e12
        x, fx, g = cand, fc, gc
        if history is not None:
            history.append(x.copy())
    return x, fx, opts.max_iters, False


def min_cost(net: NetworkSpec, opts: SolverOptions | None = None) -> tuple[Objective, FlowSolution]:
    """Locally optimal processing factors for the total-delay objective.

    Spectral projected gradient with central-difference gradients and
    step halving, started from the full-compression point, the no-computation corner, the
    box midpoint and ``opts.restarts`` seeded random points.
    """
    opts = opts or SolverOptions()
    lo = _lower(net)
    hi = np.ones_like(lo)

    def f(t):
        return objective_value(net, t)

    if math.isinf(f(lo)):
        raise InfeasibleError("no feasible operating point: flows at full compression already saturate a node")

    if opts.mode == "closed_form":
        obj, flow = evaluate(net, lo)
        return obj, flow

    if opts.mode == "grid":
        free = np.flatnonzero((hi - lo).ravel() > 0)
        if free.size > 1:
            raise ValueError("grid mode supports at most one free variable")
        best_t, best_f = lo.copy(), f(lo)
        if free.size:
            i = free[0]
            for val in np.linspace(lo.flat[i], 1.0, opts.grid_points):
                t = lo.copy()
                t.flat[i] = val
                fv = f(t)
                if fv < best_f:
                    best_t, best_f = t, fv
        obj, flow = evaluate(net, best_t)
        return obj, flow

    rng = np.random.default_rng(opts.seed)
    starts = [lo.copy(), hi.copy(), 0.5 * (lo + hi)]
    starts += [lo + rng.random(lo.shape) * (hi - lo) for _ in range(opts.restarts)]
    history = [] if opts.record else None
    best = None
    total_iters = 0
    all_converged = True
    for x0 in starts:
        if math.isinf(f(x0)):
            continue
        x, fx, iters, ok = _descend(f, x0, lo, hi, opts, history)
        total_iters += iters
        all_converged &= ok
        if best is None or fx < best[1]:
            best = (x, fx)
    obj, flow = evaluate(net, best[0])
    obj.converged = all_converged
    obj.iterations = total_iters
    obj.history = history or []
    return obj, flow


def separate_and_mixed(net: NetworkSpec) -> tuple[NetworkSpec, NetworkSpec]:
    """The two flow layouts compared by :func:`compare_separate_vs_mixed`.

    Separate: class ``c`` enters only node ``c mod V`` and leaves after one
    service. Mixed: each class is split evenly over the nodes, departs with
    probability Gamma_c and otherwise moves to a uniformly chosen node
    without changing class.
    """
    V, C = net.shape
    totals = net.beta.sum(axis=0)
    sep_beta = np.zeros((V, C))
    for c in range(C):
        sep_beta[c % V, c] = totals[c]
    separate = net.with_(beta=sep_beta, routing=RoutingPolicy.no_routing(V, C))

    transfer = np.zeros((V, C, V, C))
    depart = np.zeros((V, C))
    for c in range(C):
        depart[:, c] = net.gamma_surj[c]
        for v in range(V):
            transfer[v, c, :, c] = (1.0 - net.gamma_surj[c]) / V
    source = np.full((C, V), 1.0 / V)
    mixed = net.with_(beta=np.tile(totals / V, (V, 1)), routing=RoutingPolicy(transfer, depart, source))
    return separate, mixed


def compare_separate_vs_mixed(net: NetworkSpec, opts: SolverOptions | None = None) -> list[dict]:
    rows = []
    V, _ = net.shape
    for name, layout in zip(("separate", "mixed"), separate_and_mixed(net)):
        row = {"config": name, "min_cost": math.nan, "comms_cost": math.nan, "feasible": False, "error": ""}
        row.update({f"L_{layout.node_names[v]}": math.nan for v in range(V)})
        try:
            obj, flow = min_cost(layout, opts)
            _, _, m, n, _ = cost_arrays(layout, flow.lam, flow.gamma)
            row.update(min_cost=obj.total, feasible=obj.feasible)
            row.update({f"L_{layout.node_names[v]}": float((m + n)[v].sum()) for v in range(V)})
            try:
                row["comms_cost"] = comms_cost(layout, "direct")
            except InfeasibleError:
                row["comms_cost"] = math.inf  # pure relaying is unstable here
        except (InfeasibleError, SingularSystemError) as exc:
            row["error"] = str(exc)
        rows.append(row)
    return rows


def scale_to_occupancy(net: NetworkSpec, L: float) -> NetworkSpec:
    """Rescale external arrivals so the busiest node-class, without computing, holds ``L`` packets."""
    base = solve_traffic(net, "ratio", ratio=1.0).lam
    active = base > 0
    if not active.any():
        raise ValueError("network has no traffic to scale")
    alpha = np.min(L * net.mu[active] / ((1.0 + L) * base[active]))
    return net.with_(beta=net.beta * alpha)


def apply_parameter(net: NetworkSpec, parameter: str, value: float) -> NetworkSpec:
    if parameter == "mu":
        return net.with_(mu=np.full(net.shape, float(value)))
    if parameter == "beta":
        peak = net.beta.max()
        if peak <= 0:
            raise ValueError("beta sweep needs a nonzero arrival pattern")
        return net.with_(beta=net.beta * (value / peak))
    if parameter == "Gamma":
        return net.with_(gamma_surj=np.full(net.shape[1], float(value)))
    if parameter == "L":
        return scale_to_occupancy(net, value)
    if parameter == "k":
        return net.with_(k=np.full(net.shape, float(value)))
    raise ValueError(f"cannot sweep {parameter!r}; choose from {SWEEP_PARAMETERS}")


def _sweep_point(args):
    net, parameter, value, opts, at_L = args
    row = {
        "parameter": parameter,
        "value": float(value),
        "min_cost": math.nan,
        "comms_cost": math.nan,
        "comms_cost_closed": math.nan,
        "feasible": False,
        "converged": False,
        "mean_ratio": math.nan,
        "error": "",
    }
    try:
        point = apply_parameter(net, parameter, value)
        if at_L is not None and parameter != "L":
            point = scale_to_occupancy(point, at_L)
        obj, flow = min_cost(point, opts)
        active = flow.lam > 0
        row.update(
            min_cost=obj.total,
            feasible=obj.feasible,
            converged=obj.converged,
            mean_ratio=float(flow.ratio[active].mean()) if active.any() else math.nan,
        )
        try:
            row["comms_cost"] = comms_cost(point, "direct")
        except InfeasibleError:
            row["comms_cost"] = math.inf
        try:
            row["comms_cost_closed"] = comms_cost(point, "closed")
        except (InfeasibleError, SingularSystemError):
            row["comms_cost_closed"] = math.inf
    except Exception as exc:  # recorded in-row; the sweep carries on
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(
    net: NetworkSpec, parameter: str, grid, opts: SolverOptions | None = None, jobs: int = 1, at_L: float | None = None
) -> list[dict]:
    """One row per grid point; point errors are recorded in the row.

    With ``at_L`` the arrivals are rescaled at every point so the busiest
    node-class holds ``at_L`` packets without computation.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"cannot sweep {parameter!r}; choose from {SWEEP_PARAMETERS}")
    opts = opts or SolverOptions()
    tasks = [(net, parameter, v, opts, at_L) for v in grid]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]
