"""Per-interval cost and the baseline-policy approximate value function.

The approximate value of a snapshot ``S`` is a sum of independent terms:
transit terms (one per AP/server/type route) counting discounted expected
in-flight jobs at future interval boundaries, and queue terms (one per
server/type queue) propagating a queue-length distribution through a
time-inhomogeneous birth-death chain.

All values are "from the next boundary onward": given a snapshot at some
boundary, the term for the boundary ``i`` intervals later carries weight
``gamma**i`` for ``i >= 1`` and the snapshot's own cost is excluded.  With
that convention the total for an empty initial state equals the discounted
cost stream of a simulation started there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import GlobalState, Instance, ObservableState, SystemConfig


class ScheduleTooShort(ValueError):
    """Hazard schedule with no stationary tail fails to cover the horizon."""


@dataclass(frozen=True)
class QueueDistribution:
    """Probability vector over queue lengths {0..L_max} for one (m, j)."""
    probs: np.ndarray

    def __post_init__(self):
        if np.any(self.probs < -1e-12) or abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise ValueError("queue distribution must be nonnegative and sum to 1")


@dataclass(frozen=True)
class ArrivalHazardSchedule:
    """Per-slot delivery probabilities into one queue.

    ``transient[s]`` gives the hazard for relative slot ``s``; slots past the
    transient use the constant ``stationary`` value (``None`` marks a purely
    finite schedule).
    """
    transient: np.ndarray
    stationary: Optional[float] = None

    def slot_prob(self, s: int) -> float:
        if s < len(self.transient):
            return float(self.transient[s])
        if self.stationary is None:
            raise ScheduleTooShort(f"no hazard defined for slot {s}")
        return self.stationary


@dataclass(frozen=True)
class ValueEstimate:
    transit: np.ndarray     # [K, M+1, J]
    queue: np.ndarray       # [M+1, J]
    total: float


def stage_cost(gsi: GlobalState, config: SystemConfig) -> float:
    """Jobs in flight + jobs queued + overflow penalty for saturated queues."""
    in_flight = gsi.jobs_in_flight()
    queued = int(gsi.queues.sum())
    full = int(np.count_nonzero(gsi.queues == config.max_queue_len))
    return float(in_flight + queued + config.overflow_penalty * full)


# ---------------------------------------------------------------------------
# Transit terms

def _survival(pmf: np.ndarray) -> np.ndarray:
    """S[x] = P(latency >= x) for x in 0..Xi+1."""
    tail = np.cumsum(pmf[::-1])[::-1]
    return np.concatenate([tail, [0.0]])


def transit_value(in_flight_ages, upload_pmf: np.ndarray, arrival_prob: float,
                  routes_here: bool, config: SystemConfig) -> float:
    """Discounted expected in-flight count at future boundaries for one route.

    ``in_flight_ages`` are ages of jobs currently in transit on the route;
    ``routes_here`` says whether the baseline action keeps dispatching this
    AP's arrival stream onto the route.  Closed form: the in-flight part is a
    finite sum (support <= Xi) and the stationary future-arrival part is a
    geometric series.
    """
    gamma, t_b = config.discount, config.slots_per_interval
    xi = config.max_upload_latency
    surv = _survival(upload_pmf)
    i_star = int(np.ceil(xi / t_b))

    total = 0.0
    for i in range(i_star):
        b = (i + 1) * t_b
        count = 0.0
        for age in in_flight_ages:
            if surv[age] > 0 and age + b <= xi:
                count += surv[age + b] / surv[age]
        if routes_here and arrival_prob > 0:
            count += arrival_prob * float(surv[1:min(b, xi) + 1].sum())
        total += gamma ** (i + 1) * count
    if routes_here and arrival_prob > 0:
        mean_latency = float(surv[1:xi + 1].sum())
        total += arrival_prob * mean_latency * gamma ** (i_star + 1) / (1.0 - gamma)
    return total


def predicted_transit_value(in_flight_ages, upload_pmf: np.ndarray,
                            arrival_prob: float, incumbent_routes: bool,
                            candidate_routes: bool, config: SystemConfig) -> float:
    """Expected transit term of the *next* boundary's state, seen from now.

    The incumbent action routes arrivals during the current interval; the
    candidate action takes over from the next boundary.  Exact by linearity of
    the transit term in per-job survival probabilities.
    """
    gamma, t_b = config.discount, config.slots_per_interval
    xi = config.max_upload_latency
    surv = _survival(upload_pmf)
    i_star = int(np.ceil(xi / t_b))

    total = 0.0
    for i in range(1, i_star + 1):
        b = (i + 1) * t_b
        count = 0.0
        for age in in_flight_ages:
            if surv[age] > 0 and age + b <= xi:
                count += surv[age + b] / surv[age]
        if incumbent_routes and arrival_prob > 0:
            lo, hi = i * t_b + 1, min((i + 1) * t_b, xi)
            if lo <= hi:
                count += arrival_prob * float(surv[lo:hi + 1].sum())
        if candidate_routes and arrival_prob > 0:
            count += arrival_prob * float(surv[1:min(i * t_b, xi) + 1].sum())
        total += gamma ** i * count
    if candidate_routes and arrival_prob > 0:
        mean_latency = float(surv[1:xi + 1].sum())
        total += arrival_prob * mean_latency * gamma ** (i_star + 1) / (1.0 - gamma)
    return total


# ---------------------------------------------------------------------------
# Queue terms: time-inhomogeneous birth-death propagation

def _birth_step(p: np.ndarray, a: np.ndarray) -> np.ndarray:
    """One arrival with probability a; saturates at L_max (excess dropped)."""
    up = np.zeros_like(p)
    up[..., 1:] = p[..., :-1]
    up[..., -1] += p[..., -1]
    return (1.0 - a) * p + a * up


def _death_step(p: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Head-of-line completion with probability mu; reflecting at 0."""
    q = p.copy()
    q[..., 1:] -= mu * p[..., 1:]
    q[..., :-1] += mu * p[..., 1:]
    return q


_TAIL_CACHE: dict = {}


def _phi(config: SystemConfig) -> np.ndarray:
    levels = np.arange(config.max_queue_len + 1, dtype=float)
    phi = levels.copy()
    phi[-1] += config.overflow_penalty
    return phi


def _tail_vector(a: float, mu: float, config: SystemConfig) -> np.ndarray:
    """w with p.w = sum_{d>=1} gamma^d E[phi(Q_d)] for the stationary chain.

    Rows of the one-slot matrix are next-state distributions; the interval
    matrix is its t_B-th power and w solves (I - gamma*A) w = gamma*A*phi.
    """
    key = (round(a, 12), round(mu, 12), config.max_queue_len,
           round(config.overflow_penalty, 12), round(config.discount, 12),
           config.slots_per_interval)
    w = _TAIL_CACHE.get(key)
    if w is not None:
        return w
    n = config.max_queue_len + 1
    eye = np.eye(n)
    slot = _death_step(_birth_step(eye, a), mu)        # rows: start state
    a_int = np.linalg.matrix_power(slot, config.slots_per_interval)
    phi = _phi(config)
    gamma = config.discount
    w = np.linalg.solve(eye - gamma * a_int, gamma * (a_int @ phi))
    _TAIL_CACHE[key] = w
    return w


def propagate_queue_batch(p: np.ndarray, hazards: np.ndarray,
                          mu: np.ndarray, num_slots: int) -> np.ndarray:
    """Step a batch of queue distributions through ``num_slots`` slots.

    ``hazards`` is [B, num_slots] (or broadcastable); ``mu`` is [B, 1].
    """
    for s in range(num_slots):
        p = _death_step(_birth_step(p, hazards[:, s:s + 1]), mu)
    return p


def queue_value_batch(inits: np.ndarray, transients: np.ndarray,
                      stationary: np.ndarray, mean_proc: np.ndarray,
                      config: SystemConfig) -> np.ndarray:
    """Vectorized queue_value over a batch sharing one transient length."""
    gamma, t_b = config.discount, config.slots_per_interval
    phi = _phi(config)
    mu = (1.0 / np.asarray(mean_proc, dtype=float)).reshape(-1, 1)
    p = np.array(inits, dtype=float)
    n_trans = transients.shape[1]
    n_boundaries = int(np.ceil(n_trans / t_b)) if n_trans else 0
    pad = n_boundaries * t_b - n_trans
    stat_col = np.asarray(stationary, dtype=float).reshape(-1, 1)
    haz = np.concatenate([transients, np.repeat(stat_col, pad, axis=1)], axis=1) \
        if pad else transients

    values = np.zeros(p.shape[0])
    for i in range(n_boundaries):
        p = propagate_queue_batch(p, haz[:, i * t_b:(i + 1) * t_b], mu, t_b)
        values += gamma ** (i + 1) * (p @ phi)
    tail_w = np.stack([_tail_vector(float(stat_col[b, 0]), float(mu[b, 0]), config)
                       for b in range(p.shape[0])])
    values += gamma ** n_boundaries * np.einsum("bi,bi->b", p, tail_w)
    return values


def queue_value(init, hazards: ArrivalHazardSchedule, mean_proc: float,
                config: SystemConfig) -> float:
    """Discounted expected queue cost at future boundaries for one (m, j).

    Exact slot-by-slot propagation of the queue-length distribution; once the
    hazard schedule is stationary the remaining discounted sum is closed form,
    so the result carries no truncation error.  Finite schedules without a
    stationary tail are truncated at ``horizon_intervals`` and must cover it.
    """
    probs = init.probs if isinstance(init, QueueDistribution) else np.asarray(init, float)
    gamma, t_b = config.discount, config.slots_per_interval
    if hazards.stationary is None:
        needed = config.horizon_intervals * t_b
        if len(hazards.transient) < needed:
            raise ScheduleTooShort(
                f"schedule covers {len(hazards.transient)} slots, needs {needed}")
        phi = _phi(config)
        mu = np.array([[1.0 / mean_proc]])
        p = probs.reshape(1, -1)
        value = 0.0
        for i in range(config.horizon_intervals):
            p = propagate_queue_batch(
                p, hazards.transient[None, i * t_b:(i + 1) * t_b], mu, t_b)
            value += gamma ** (i + 1) * float(p[0] @ phi)
        return value
    return float(queue_value_batch(
        probs.reshape(1, -1), hazards.transient.reshape(1, -1),
        np.array([hazards.stationary]), np.array([mean_proc]), config)[0])


# ---------------------------------------------------------------------------
# Hazard assembly

def combine_hazards(components) -> np.ndarray:
    """a_s = 1 - prod(1 - p_source,s); keeps the chain birth-death."""
    out = None
    for comp in components:
        out = comp.copy() if out is None else 1.0 - (1.0 - out) * (1.0 - comp)
    return out


def _stream_hazard(pmf: np.ndarray, lam: float, length: int,
                   first_slot: int = 0, last_slot: Optional[int] = None) -> np.ndarray:
    """Delivery hazard of a Bernoulli stream dispatching in [first_slot, last_slot]."""
    cdf = np.cumsum(pmf)
    h = np.zeros(length)
    for s in range(length):
        hi = s - first_slot
        if hi < 0:
            continue
        lo = 0 if last_slot is None else s - last_slot
        upper = cdf[min(hi, len(cdf) - 1)]
        lower = cdf[lo - 1] if lo >= 1 else 0.0
        h[s] = lam * (upper - lower)
    return h


def _inflight_hazard(ages, pmf: np.ndarray, length: int) -> np.ndarray:
    surv = _survival(pmf)
    h_each = []
    for age in ages:
        if surv[age] <= 0:
            continue        # stale beyond support: treated as already delivered
        h = np.zeros(length)
        top = min(length, len(pmf) - age)
        if top > 0:
            h[:top] = pmf[age:age + top] / surv[age]
        h_each.append(h)
    return combine_hazards(h_each) if h_each else np.zeros(length)


def baseline_queue_hazards(gsi: GlobalState, actions: np.ndarray,
                           instance: Instance, m: int, j: int) -> ArrivalHazardSchedule:
    """Hazards into queue (m, j) when every AP keeps its current action."""
    cfg = instance.config
    length = cfg.max_upload_latency + 1
    comps = []
    for k in range(cfg.num_aps):
        ages = gsi.transit.get((k, m, j), ())
        if ages:
            comps.append(_inflight_hazard(ages, instance.upload.pmf[k, m, j], length))
    stat = 1.0
    for k in sorted(instance.topology.potential_aps[m]):
        if int(actions[k, j]) != m:
            continue
        lam = float(instance.arrivals.probs[k, j])
        if lam <= 0:
            continue
        comps.append(_stream_hazard(instance.upload.pmf[k, m, j], lam, length))
        stat *= 1.0 - lam
    transient = combine_hazards(comps) if comps else np.zeros(length)
    return ArrivalHazardSchedule(transient, 1.0 - stat)


def approx_value(gsi: GlobalState, baseline_actions: np.ndarray,
                 instance: Instance) -> ValueEstimate:
    """Assemble the decomposed approximate value of a snapshot."""
    cfg = instance.config
    K, Mp1, J = cfg.num_aps, cfg.num_servers + 1, cfg.num_job_types
    transit = np.zeros((K, Mp1, J))
    for k in range(K):
        for j in range(J):
            lam = float(instance.arrivals.probs[k, j])
            target = int(baseline_actions[k, j])
            for m in instance.topology.candidate_servers[k]:
                ages = gsi.transit.get((k, m, j), ())
                if not ages and (m != target or lam <= 0):
                    continue
                transit[k, m, j] = transit_value(
                    ages, instance.upload.pmf[k, m, j], lam, m == target, cfg)

    queue = np.zeros((Mp1, J))
    for m in range(Mp1):
        for j in range(J):
            q = int(gsi.queues[m, j])
            haz = baseline_queue_hazards(gsi, baseline_actions, instance, m, j)
            init = np.zeros(cfg.max_queue_len + 1)
            init[q] = 1.0
            queue[m, j] = queue_value(init, haz, float(instance.service.mean_proc[m, j]), cfg)
    return ValueEstimate(transit, queue, float(transit.sum() + queue.sum()))


# ---------------------------------------------------------------------------
# Forward prediction from an outdated observation

def local_hazard_components(osi: ObservableState, candidate_actions: np.ndarray,
                            instance: Instance, m: int, j: int):
    """(transient slot hazards over the full horizon, stationary level).

    Transient covers the current interval plus the latency support:
    deliveries of observed in-flight jobs of all conflict APs, conflict-AP
    streams under their observed actions, the deciding AP's own stream under
    its incumbent action until the next boundary and under the candidate
    action afterwards.
    """
    cfg = instance.config
    t_b, xi = cfg.slots_per_interval, cfg.max_upload_latency
    k = osi.ap
    length = t_b + xi + 1
    comps = []
    for (k2, m2, j2), ages in osi.transit.items():
        if m2 == m and j2 == j and ages:
            comps.append(_inflight_hazard(ages, instance.upload.pmf[k2, m, j], length))
    stat = 1.0
    for k2 in sorted(instance.topology.potential_aps[m]):
        if k2 == k or k2 not in osi.conflict_aps:
            continue
        if int(osi.actions[k2][j]) != m:
            continue
        lam = float(instance.arrivals.probs[k2, j])
        if lam <= 0:
            continue
        comps.append(_stream_hazard(instance.upload.pmf[k2, m, j], lam, length))
        stat *= 1.0 - lam
    lam_own = float(instance.arrivals.probs[k, j])
    if lam_own > 0:
        if int(osi.actions[k][j]) == m:
            comps.append(_stream_hazard(instance.upload.pmf[k, m, j], lam_own,
                                        length, first_slot=0, last_slot=t_b - 1))
        if int(candidate_actions[j]) == m:
            comps.append(_stream_hazard(instance.upload.pmf[k, m, j], lam_own,
                                        length, first_slot=t_b))
            stat *= 1.0 - lam_own
    transient = combine_hazards(comps) if comps else np.zeros(length)
    return transient, 1.0 - stat


def predict_local_state(osi: ObservableState, observed_delay: int,
                        candidate_actions: np.ndarray, instance: Instance) -> dict:
    """Propagate each observed queue to the next boundary under known hazards.

    Returns {(m, j): (QueueDistribution at the next boundary,
    ArrivalHazardSchedule relative to it)} for all candidate servers of the
    observing AP.  ``observed_delay`` is the realized signaling latency; it
    fixes when the computation may run, not the prediction span, which is
    always one full interval from the snapshot the OSI was taken at.
    """
    del observed_delay
    cfg = instance.config
    t_b = cfg.slots_per_interval
    out = {}
    for m in sorted(osi.servers):
        for j in range(cfg.num_job_types):
            transient, stat = local_hazard_components(
                osi, candidate_actions, instance, m, j)
            init = np.zeros(cfg.max_queue_len + 1)
            init[int(osi.queues[m][j])] = 1.0
            mu = np.array([[1.0 / float(instance.service.mean_proc[m, j])]])
            p = propagate_queue_batch(init.reshape(1, -1),
                                      transient[None, :t_b], mu, t_b)
            out[(m, j)] = (QueueDistribution(p[0]),
                           ArrivalHazardSchedule(transient[t_b:], stat))
    return out
