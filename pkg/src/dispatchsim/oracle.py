"""Independent reference implementations used by tests and `certify`.

Nothing here shares code with the value-function or policy modules beyond
the model types: the Monte-Carlo estimators re-implement the slot dynamics
from scratch (vectorized over replications), and the exhaustive lookahead
enumerates one interval's transition distribution exactly, taking the
continuation value function as an injected callable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import GlobalState, Instance, SystemConfig


class BudgetExceeded(RuntimeError):
    def __init__(self, size: int, budget: int):
        super().__init__(f"enumeration grew to {size} states (budget {budget})")
        self.size = size


@dataclass(frozen=True)
class OracleEstimate:
    mean: float
    standard_error: float
    num_samples: int
    tail_bound: float = 0.0


def _estimate(values: np.ndarray, tail_bound: float = 0.0) -> OracleEstimate:
    n = len(values)
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return OracleEstimate(float(values.mean()), se, n, tail_bound)


def stage_cost_bound(instance: Instance) -> float:
    """Loose upper bound on the per-interval cost, for truncation bounds."""
    cfg = instance.config
    mp1, j = cfg.num_servers + 1, cfg.num_job_types
    return (mp1 * j * (cfg.max_queue_len + cfg.overflow_penalty)
            + cfg.num_aps * mp1 * j * (cfg.max_upload_latency + 1))


def discount_tail_bound(instance: Instance, T: int) -> float:
    g = instance.config.discount
    return g ** T * stage_cost_bound(instance) / (1.0 - g)


# ---------------------------------------------------------------------------
# Monte-Carlo discounted cost

def _mc_static_vectorized(instance: Instance, actions: np.ndarray, T: int,
                          replications: int, seed: int) -> np.ndarray:
    """All replications of a fixed-action run stepped together.

    Independent re-implementation of the simulator's phase order on numpy
    arrays: ring buffer of pending deliveries, saturating queue births,
    geometric head-of-line service.
    """
    cfg = instance.config
    K, Mp1, J = cfg.num_aps, cfg.num_servers + 1, cfg.num_job_types
    t_b, xi, lmax = cfg.slots_per_interval, cfg.max_upload_latency, cfg.max_queue_len
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=seed, spawn_key=(7,))))
    R = replications
    W = xi + 1
    pending = np.zeros((R, Mp1, J, W), dtype=np.int32)
    queues = np.zeros((R, Mp1, J), dtype=np.int32)
    infl = np.zeros(R, dtype=np.int64)
    mu = instance.service.completion_prob
    cdf = np.cumsum(instance.upload.pmf, axis=-1)
    lam = instance.arrivals.probs
    streams = [(k, j, int(actions[k, j])) for k in range(K) for j in range(J)
               if lam[k, j] > 0]
    gvals = np.zeros(R)
    slot = 0
    for t in range(T):
        cost = (infl + queues.sum(axis=(1, 2))
                + cfg.overflow_penalty * (queues == lmax).sum(axis=(1, 2)))
        gvals += cfg.discount ** t * cost
        if t == T - 1:
            break
        for _ in range(t_b):
            births = pending[:, :, :, slot % W].astype(np.int32)
            infl -= births.sum(axis=(1, 2))
            pending[:, :, :, slot % W] = 0
            for (k, j, m) in streams:
                arrived = rng.random(R) < lam[k, j]
                if not arrived.any():
                    continue
                lat = np.searchsorted(cdf[k, m, j], rng.random(R), side="right")
                zero = arrived & (lat == 0)
                births[zero, m, j] += 1
                fly = arrived & (lat > 0)
                if fly.any():
                    idx = np.nonzero(fly)[0]
                    pending[idx, m, j, (slot + lat[idx]) % W] += 1
                    infl[idx] += 1
            admitted = np.minimum(births, lmax - queues)
            queues += admitted
            served = (queues > 0) & (rng.random((R, Mp1, J)) < mu)
            queues -= served
            slot += 1
    return gvals


def mc_discounted_cost(instance: Instance, policy, T: int, replications: int,
                       seed: int) -> OracleEstimate:
    """Replicated-simulation estimate of the discounted cost from empty start.

    ``policy`` is a policy name, a Policy object, or a factory
    ``f(replication_seed) -> Policy``.  A static baseline (fixed selfish
    actions) takes a fast vectorized path.
    """
    from . import sim
    from .policy import Policy, StaticPolicy, make_policy, selfish_actions

    gamma = instance.config.discount
    tail = discount_tail_bound(instance, T)
    if isinstance(policy, str) and policy == "static" or isinstance(policy, StaticPolicy):
        vals = _mc_static_vectorized(instance, selfish_actions(instance), T,
                                     replications, seed)
        return _estimate(vals, tail)
    vals = np.empty(replications)
    for i in range(replications):
        if isinstance(policy, str):
            pol = make_policy(policy, instance, seed=seed + 1000 + i)
        elif isinstance(policy, Policy):
            pol = policy
        else:
            pol = policy(seed + 1000 + i)
        records = sim.run(instance, pol, T, seed=seed + i)
        vals[i] = sim.discounted_cost(records, gamma, T)
    return _estimate(vals, tail)


# ---------------------------------------------------------------------------
# Exact one-interval lookahead

def exhaustive_lookahead(instance: Instance, gsi: GlobalState,
                         next_actions: np.ndarray,
                         continuation: Callable[[GlobalState], float],
                         budget: int = 200_000) -> float:
    """Exact expectation of the continuation value at the next boundary.

    Enumerates every arrival/latency/service outcome of one interval under the
    snapshot's current actions; ``next_actions`` becomes the action table of
    the successor state (it governs dispatching only from the next interval
    on).  States are merged by probability along the way; raises
    BudgetExceeded if the merged frontier ever exceeds ``budget``.
    """
    cfg = instance.config
    K, J = cfg.num_aps, cfg.num_job_types
    t_b, lmax = cfg.slots_per_interval, cfg.max_queue_len
    mu = instance.service.completion_prob
    lam = instance.arrivals.probs
    pmf = instance.upload.pmf

    # pending: tuple of (delivery_rel_slot, k, job_order, m, j, dispatch_rel_slot)
    init_pending = []
    order = 0
    for (k, m, j), ages in sorted(gsi.transit.items()):
        surv = pmf[k, m, j][::-1].cumsum()[::-1]
        for age in ages:
            if surv[age] <= 0:
                continue
            init_pending.append((k, order, m, j, -age, tuple(
                (ell - age, float(pmf[k, m, j][ell] / surv[age]))
                for ell in range(age, cfg.max_upload_latency + 1)
                if pmf[k, m, j][ell] > 0)))
            order += 1

    def grow(states):
        if len(states) > budget:
            raise BudgetExceeded(len(states), budget)
        return states

    # resolve initial jobs' residual latencies up front (branch per job)
    base_pending: dict = {(): 1.0}
    for (k, order, m, j, dsp, residuals) in init_pending:
        nxt: dict = {}
        for pend, prob in base_pending.items():
            for rel, p in residuals:
                key = pend + ((rel, k, order, m, j, dsp),)
                nxt[key] = nxt.get(key, 0.0) + prob * p
        base_pending = grow(nxt)

    frontier = {}
    qinit = tuple(map(tuple, gsi.queues.tolist()))
    for pend, prob in base_pending.items():
        frontier[(pend, qinit)] = prob

    streams = [(k, j) for k in range(K) for j in range(J) if lam[k, j] > 0]
    order_base = order

    for n in range(t_b):
        # arrivals (+ latency branch) under the snapshot's current actions
        for (k, j) in streams:
            m = int(gsi.actions[k, j])
            lat_branch = [(int(ell), float(pmf[k, m, j][ell]))
                          for ell in range(cfg.max_upload_latency + 1)
                          if pmf[k, m, j][ell] > 0]
            nxt: dict = {}
            for (pend, q), prob in frontier.items():
                if lam[k, j] < 1.0:
                    nxt[(pend, q)] = (nxt.get((pend, q), 0.0)
                                      + prob * (1.0 - lam[k, j]))
                for ell, pl in lat_branch:
                    key = (pend + ((n + ell, k, order_base + n * K * J + k * J + j,
                                    m, j, n),), q)
                    nxt[key] = nxt.get(key, 0.0) + prob * lam[k, j] * pl
            frontier = grow(nxt)
        # deliveries due this slot, in (AP, job order) sequence
        nxt = {}
        for (pend, q), prob in frontier.items():
            due = sorted([rec for rec in pend if rec[0] == n],
                         key=lambda r: (r[1], r[2]))
            stay = tuple(rec for rec in pend if rec[0] != n)
            qq = [list(rw) for rw in q]
            for (_rel, _k, _o, m, j, _d) in due:
                if qq[m][j] < lmax:
                    qq[m][j] += 1
            key = (stay, tuple(map(tuple, qq)))
            nxt[key] = nxt.get(key, 0.0) + prob
        frontier = grow(nxt)
        # geometric service, one head-of-line completion per queue
        for m in range(cfg.num_servers + 1):
            for j in range(J):
                nxt = {}
                for (pend, q), prob in frontier.items():
                    if q[m][j] == 0:
                        nxt[(pend, q)] = nxt.get((pend, q), 0.0) + prob
                        continue
                    if mu[m, j] < 1.0:
                        nxt[(pend, q)] = (nxt.get((pend, q), 0.0)
                                          + prob * (1.0 - mu[m, j]))
                    qq = [list(rw) for rw in q]
                    qq[m][j] -= 1
                    key = (pend, tuple(map(tuple, qq)))
                    nxt[key] = nxt.get(key, 0.0) + prob * mu[m, j]
                frontier = grow(nxt)

    value = 0.0
    for (pend, q), prob in frontier.items():
        transit: dict = {}
        for (rel, k, _o, m, j, dsp) in pend:
            age = t_b - dsp
            transit.setdefault((k, m, j), []).append(age)
        transit = {key: tuple(sorted(v)) for key, v in transit.items()}
        succ = GlobalState(transit, np.asarray(next_actions), np.array(q))
        value += prob * continuation(succ)
    return value


# ---------------------------------------------------------------------------
# Transit-term enumeration

def enum_transit_value(in_flight_ages, upload_pmf: np.ndarray, arrival_prob: float,
                       routes_here: bool, config: SystemConfig) -> float:
    """Expected in-flight counts per boundary by direct (dispatch, latency) sums.

    For every boundary the expected count is assembled job by job over the
    full latency support; past the support the stream contribution is
    constant, so the remaining boundaries form an exact geometric series.
    """
    gamma, t_b = config.discount, config.slots_per_interval
    xi = config.max_upload_latency
    pmf = np.asarray(upload_pmf, dtype=float)
    i_star = int(np.ceil(xi / t_b))

    def expected_count(b: int) -> float:
        count = 0.0
        for age in in_flight_ages:
            # job dispatched age slots before boundary 0; in flight at b iff
            # its total latency ell satisfies ell >= age + b, given ell >= age
            denom = sum(pmf[ell] for ell in range(age, xi + 1))
            if denom <= 0:
                continue
            num = sum(pmf[ell] for ell in range(age + b, xi + 1))
            count += num / denom
        if routes_here and arrival_prob > 0:
            # stream job dispatched s slots before boundary b (s = 1..b)
            for s in range(1, b + 1):
                count += arrival_prob * sum(pmf[ell] for ell in range(s, xi + 1))
        return count

    total = 0.0
    for i in range(1, i_star + 1):
        total += gamma ** i * expected_count(i * t_b)
    if routes_here and arrival_prob > 0:
        stationary = expected_count((i_star + 1) * t_b)
        total += stationary * gamma ** (i_star + 1) / (1.0 - gamma)
    return total


# ---------------------------------------------------------------------------
# Monte-Carlo single-queue chain

def mc_queue_value(init, hazards, mean_proc: float, config: SystemConfig,
                   samples: int, seed: int) -> OracleEstimate:
    """Monte-Carlo of the birth-death queue chain, truncated at the horizon."""
    from .valuefn import QueueDistribution

    probs = init.probs if isinstance(init, QueueDistribution) else np.asarray(init, float)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=seed, spawn_key=(9,))))
    lmax, t_b = config.max_queue_len, config.slots_per_interval
    gamma, beta = config.discount, config.overflow_penalty
    mu = 1.0 / mean_proc
    q = np.searchsorted(np.cumsum(probs), rng.random(samples), side="right").astype(np.int64)
    vals = np.zeros(samples)
    slot = 0
    for i in range(1, config.horizon_intervals + 1):
        for _ in range(t_b):
            a = hazards.slot_prob(slot)
            born = rng.random(samples) < a
            q = np.minimum(q + born, lmax)
            died = (q > 0) & (rng.random(samples) < mu)
            q -= died
            slot += 1
        vals += gamma ** i * (q + beta * (q == lmax))
    return _estimate(vals)
