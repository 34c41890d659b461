"""Slot-granular discrete-time simulation of dispatching, transit and queueing.

Within-slot phase order (fixed; any consistent order is admissible and this
one makes "dispatch immediately on arrival" literal):

1. arrivals are sampled (or replayed from a trace);
2. each arrival enters transit toward its action's target with a sampled
   upload latency (0 for a collocated server);
3. jobs whose latency has elapsed are enqueued, or dropped when the target
   queue is full;
4. each nonempty queue's head job completes with probability 1/c;
5. the clock advances; at the start of each broadcast interval LSIs are
   snapshotted and policies are consulted.

Randomness is organized as one seed-derived stream per stochastic source
(arrivals per AP/type, upload per AP/type, service per server/type,
signaling per AP) so paired-seed runs expose identical arrival sequences to
every policy (common random numbers).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .model import (DispatchActionTable, GlobalState, Instance, project_osi,
                    validate_actions)
from .valuefn import stage_cost

_KIND_ARRIVAL, _KIND_UPLOAD, _KIND_SERVICE, _KIND_SIGNALING, _KIND_EXTRA = range(5)


@dataclass
class MetricsRecord:
    interval: int
    cost: float
    jobs_in_system: int         # at the interval-start snapshot
    arrivals: int               # events during the interval
    completions: int
    drops: int
    response_slots: tuple = ()  # per job completed this interval
    mean_jobs: float = 0.0      # per-slot time average over the interval

    def response_intervals(self, slots_per_interval: int) -> tuple:
        return tuple(-(-r // slots_per_interval) for r in self.response_slots)


def _stream_rng(seed: int, kind: int, i: int, j: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=seed, spawn_key=(kind, i, j))))


class RngBundle:
    """Independent per-source generators, drawn in per-interval blocks."""

    def __init__(self, instance: Instance, seed: int):
        cfg = instance.config
        K, Mp1, J = cfg.num_aps, cfg.num_servers + 1, cfg.num_job_types
        self._arrival = [[_stream_rng(seed, _KIND_ARRIVAL, k, j) for j in range(J)]
                         for k in range(K)]
        self._upload = [[_stream_rng(seed, _KIND_UPLOAD, k, j) for j in range(J)]
                        for k in range(K)]
        self._service = [[_stream_rng(seed, _KIND_SERVICE, m, j) for j in range(J)]
                         for m in range(Mp1)]
        self._signaling = [_stream_rng(seed, _KIND_SIGNALING, k) for k in range(K)]
        self._extra = [_stream_rng(seed, _KIND_EXTRA, k) for k in range(K)]
        self._shape = (K, Mp1, J, cfg.slots_per_interval)

    def interval_blocks(self):
        K, Mp1, J, t_b = self._shape
        arr = np.empty((K, J, t_b))
        upl = np.empty((K, J, t_b))
        svc = np.empty((Mp1, J, t_b))
        for k in range(K):
            for j in range(J):
                arr[k, j] = self._arrival[k][j].random(t_b)
                upl[k, j] = self._upload[k][j].random(t_b)
        for m in range(Mp1):
            for j in range(J):
                svc[m, j] = self._service[m][j].random(t_b)
        return arr, upl, svc

    def signaling_draws(self, K: int) -> np.ndarray:
        return np.array([self._signaling[k].random() for k in range(K)])

    def extra_upload(self, k: int) -> float:
        return self._extra[k].random()


class Simulator:
    """Mutable simulation state plus the slot-stepping engine for one run."""

    def __init__(self, instance: Instance, seed: int):
        cfg = instance.config
        self.instance = instance
        self.cfg = cfg
        self.rng = RngBundle(instance, seed)
        Mp1, J = cfg.num_servers + 1, cfg.num_job_types
        self.slot = 0
        self.queues = np.zeros((Mp1, J), dtype=np.int64)
        self.fcfs = [[deque() for _ in range(J)] for _ in range(Mp1)]
        self.calendar: dict = {}        # delivery slot -> [(k, job_id, m, j, dispatch_slot)]
        self.in_flight_total = 0
        self.queued_total = 0
        self._job_counter = 0
        self._upload_cdf = np.cumsum(instance.upload.pmf, axis=-1)
        self._signaling_cdf = np.cumsum(instance.signaling.pmf, axis=-1)
        self._mu = instance.service.completion_prob
        # per-interval blocks and counters
        self._blocks = None
        self._block_interval = -1
        self.interval_arrivals = 0
        self.interval_completions = 0
        self.interval_drops = 0
        self.interval_responses: list = []
        self.occupancy_sum = 0
        # conservation bookkeeping
        self.enqueued = np.zeros((Mp1, J), dtype=np.int64)
        self.completed = np.zeros((Mp1, J), dtype=np.int64)

    # -- snapshots ---------------------------------------------------------

    def snapshot(self, actions: DispatchActionTable) -> GlobalState:
        transit: dict = {}
        for dslot, jobs in self.calendar.items():
            if dslot < self.slot:
                raise AssertionError("stale calendar entry")
            for (k, _jid, m, j, dispatch_slot) in jobs:
                transit.setdefault((k, m, j), []).append(self.slot - dispatch_slot)
        transit = {key: tuple(sorted(ages)) for key, ages in transit.items()}
        return GlobalState(transit, actions.target.copy(), self.queues.copy())

    def jobs_in_system(self) -> int:
        return self.in_flight_total + self.queued_total

    def sample_signaling(self) -> np.ndarray:
        K = self.cfg.num_aps
        u = self.rng.signaling_draws(K)
        return np.array([int(np.searchsorted(self._signaling_cdf[k], u[k], side="right"))
                         for k in range(K)])

    def reset_interval_counters(self):
        self.interval_arrivals = 0
        self.interval_completions = 0
        self.interval_drops = 0
        self.interval_responses = []
        self.occupancy_sum = 0

    # -- the slot engine ---------------------------------------------------

    def step_slot(self, actions: DispatchActionTable) -> None:
        cfg = self.cfg
        t_b = cfg.slots_per_interval
        t, n = divmod(self.slot, t_b)
        if t != self._block_interval:
            self._blocks = self.rng.interval_blocks()
            self._block_interval = t
        arr_u, upl_u, svc_u = self._blocks

        self.occupancy_sum += self.in_flight_total + self.queued_total

        # phase 1+2: arrivals enter transit (latency 0 delivers this slot)
        trace = self.instance.arrivals.trace
        if trace is not None:
            events = [(k, j, c) for (k, j, c) in trace.get(self.slot, ())]
        else:
            ks, js = np.nonzero(arr_u[:, :, n] < self.instance.arrivals.probs)
            events = [(int(k), int(j), 1) for k, j in zip(ks, js)]
        for k, j, count in events:
            target = int(actions.target[k, j])
            for i in range(count):
                u = upl_u[k, j, n] if i == 0 else self.rng.extra_upload(k)
                latency = int(np.searchsorted(self._upload_cdf[k, target, j], u,
                                              side="right"))
                self._job_counter += 1
                self.calendar.setdefault(self.slot + latency, []).append(
                    (k, self._job_counter, target, j, self.slot))
                if latency > 0:
                    self.in_flight_total += 1
                self.interval_arrivals += 1

        # phase 3: deliveries (and drops) in (AP index, job id) order
        due = self.calendar.pop(self.slot, None)
        if due:
            due.sort(key=lambda rec: rec[:2])
            for (k, _jid, m, j, dispatch_slot) in due:
                if dispatch_slot < self.slot:
                    self.in_flight_total -= 1
                if self.queues[m, j] == cfg.max_queue_len:
                    self.interval_drops += 1
                else:
                    self.queues[m, j] += 1
                    self.queued_total += 1
                    self.enqueued[m, j] += 1
                    self.fcfs[m][j].append(dispatch_slot)

        # phase 4: at most one geometric head-of-line completion per queue
        comp_m, comp_j = np.nonzero((self.queues > 0) & (svc_u[:, :, n] < self._mu))
        for m, j in zip(comp_m, comp_j):
            dispatch_slot = self.fcfs[m][j].popleft()
            self.queues[m, j] -= 1
            self.queued_total -= 1
            self.completed[m, j] += 1
            self.interval_completions += 1
            self.interval_responses.append(self.slot - dispatch_slot)

        # phase 5
        self.slot += 1

    def check_conservation(self) -> bool:
        return bool(np.all(self.enqueued - self.completed - self.queues == 0))


def run(instance: Instance, policy, num_intervals: int, seed: int):
    """Simulate whole broadcast intervals under a policy; deterministic in seed.

    At each interval start the GSI is snapshotted, each AP's OSI delivery slot
    is sampled, and the policy is consulted for the APs it schedules this
    interval (all APs unless the policy restricts updates); the returned
    actions take effect from the next interval.  All policies start from the
    Selfish action table.
    """
    from .policy import PolicyDecisionInput, selfish_actions

    cfg = instance.config
    sim = Simulator(instance, seed)
    actions = DispatchActionTable(selfish_actions(instance))
    validate_actions(instance, actions)
    records = []
    for t in range(num_intervals):
        gsi = sim.snapshot(actions)
        delays = sim.sample_signaling()
        update = policy.update_set(t)
        if update is None:
            update = range(cfg.num_aps)
        pending = {}
        for k in sorted(update):
            osi = project_osi(gsi, instance.topology, k)
            inp = PolicyDecisionInput(k, osi, int(delays[k]),
                                      actions.target[k].copy(), t)
            row = np.asarray(policy.decide(inp), dtype=np.int64)
            for j in range(cfg.num_job_types):
                if int(row[j]) not in instance.topology.candidate_servers[k]:
                    raise ValueError(f"policy action {row[j]} outside candidate "
                                     f"set of AP {k}")
            pending[k] = row
        sim.reset_interval_counters()
        for _ in range(cfg.slots_per_interval):
            sim.step_slot(actions)
        records.append(MetricsRecord(
            interval=t,
            cost=stage_cost(gsi, cfg),
            jobs_in_system=gsi.jobs_in_flight() + int(gsi.queues.sum()),
            arrivals=sim.interval_arrivals,
            completions=sim.interval_completions,
            drops=sim.interval_drops,
            response_slots=tuple(sim.interval_responses),
            mean_jobs=sim.occupancy_sum / cfg.slots_per_interval,
        ))
        for k, row in pending.items():
            actions.target[k] = row
    if not sim.check_conservation():
        raise AssertionError("queue conservation violated")
    return records


def discounted_cost(metrics, gamma: float, T: int) -> float:
    """Discounted sum of per-interval costs over the first T intervals."""
    if T > len(metrics):
        raise ValueError(f"T={T} exceeds metrics length {len(metrics)}")
    return float(sum(gamma ** i * metrics[i].cost for i in range(T)))
