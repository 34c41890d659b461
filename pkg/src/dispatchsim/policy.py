"""Dispatching policies: static, random, selfish, queue-aware, approximate MDP.

Every policy maps a per-AP decision input (outdated partial observation plus
realized signaling latency) to the AP's action row for the next interval.
Policies that restrict which APs update in a given interval expose the set
via ``update_set``; all other APs keep their previous actions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Instance, ObservableState
from .partition import SubsetPartition, greedy_partition, scheduled_subset
from .valuefn import (_inflight_hazard, _stream_hazard,
                      predicted_transit_value, propagate_queue_batch,
                      queue_value_batch)

POLICY_NAMES = ("static", "random", "selfish", "queue_aware", "mdp")


@dataclass(frozen=True)
class PolicyDecisionInput:
    ap: int
    osi: ObservableState
    signaling_latency: int
    previous_actions: np.ndarray        # [J] action row of this AP
    interval: int


class Policy:
    def update_set(self, t: int):
        """AP indices that recompute at interval t; None means all."""
        return None

    def decide(self, inp: PolicyDecisionInput) -> np.ndarray:
        raise NotImplementedError


class StaticPolicy(Policy):
    """Baseline: every AP repeats its previous actions forever."""

    def decide(self, inp):
        return inp.previous_actions.copy()


class RandomPolicy(Policy):
    """Uniform choice over the candidate set, per job type, per interval."""

    def __init__(self, instance: Instance, seed: int):
        self.instance = instance
        K = instance.config.num_aps
        self._rng = [np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=seed, spawn_key=(100, k))))
            for k in range(K)]
        self._choices = [np.array(sorted(s)) for s in instance.topology.candidate_servers]

    def decide(self, inp):
        opts = self._choices[inp.ap]
        idx = self._rng[inp.ap].integers(0, len(opts),
                                         size=self.instance.config.num_job_types)
        return opts[idx]


def selfish_actions(instance: Instance) -> np.ndarray:
    """argmin over candidates of expected upload + processing time, per (k, j)."""
    cfg = instance.config
    u = instance.upload.means
    c = instance.service.mean_proc
    out = np.zeros((cfg.num_aps, cfg.num_job_types), dtype=np.int64)
    for k in range(cfg.num_aps):
        opts = sorted(instance.topology.candidate_servers[k])
        for j in range(cfg.num_job_types):
            scores = [u[k, m, j] + c[m, j] for m in opts]
            out[k, j] = opts[int(np.argmin(scores))]     # argmin takes lowest index on ties
    return out


class SelfishPolicy(Policy):
    def __init__(self, instance: Instance):
        self._table = selfish_actions(instance)

    def decide(self, inp):
        return self._table[inp.ap].copy()


class QueueAwarePolicy(Policy):
    """Selfish plus an outdated-queue term: u + c + Q_observed * c."""

    def __init__(self, instance: Instance):
        self.instance = instance

    def decide(self, inp):
        inst = self.instance
        k = inp.ap
        opts = sorted(inst.topology.candidate_servers[k])
        u = inst.upload.means
        c = inst.service.mean_proc
        out = np.empty(inst.config.num_job_types, dtype=np.int64)
        for j in range(inst.config.num_job_types):
            scores = [u[k, m, j] + c[m, j] + float(inp.osi.queues[m][j]) * c[m, j]
                      for m in opts]
            out[j] = opts[int(np.argmin(scores))]
        return out


class MdpPolicy(Policy):
    """Alternating per-subset action updates against the baseline value function.

    For each job type the policy scores every candidate server by the
    predicted transit cost of its own stream plus the predicted queue costs of
    all candidate servers, where queue-length distributions are propagated one
    interval ahead from the outdated observation.  Job types decouple exactly
    (queues are per server *and* type), so the scan costs J * |M_k| candidate
    evaluations per scheduled AP.
    """

    def __init__(self, instance: Instance, partition: SubsetPartition | None = None):
        self.instance = instance
        self.partition = partition or greedy_partition(instance.topology)
        self.candidate_evaluations = 0
        self.last_scores: dict = {}
        cfg = instance.config
        self._length = cfg.slots_per_interval + cfg.max_upload_latency + 1
        # state-independent stream hazards, cached per (k, m, j) route
        self._full = {}
        self._inc_window = {}
        self._cand_window = {}
        t_b = cfg.slots_per_interval
        for k in range(cfg.num_aps):
            for j in range(cfg.num_job_types):
                lam = float(instance.arrivals.probs[k, j])
                if lam <= 0:
                    continue
                for m in instance.topology.candidate_servers[k]:
                    pmf = instance.upload.pmf[k, m, j]
                    self._full[(k, m, j)] = _stream_hazard(pmf, lam, self._length)
                    self._inc_window[(k, m, j)] = _stream_hazard(
                        pmf, lam, self._length, first_slot=0, last_slot=t_b - 1)
                    self._cand_window[(k, m, j)] = _stream_hazard(
                        pmf, lam, self._length, first_slot=t_b)

    def update_set(self, t):
        return sorted(scheduled_subset(self.partition, t))

    def decide(self, inp: PolicyDecisionInput) -> np.ndarray:
        inst = self.instance
        cfg = inst.config
        t_b = cfg.slots_per_interval
        k = inp.ap
        osi = inp.osi
        opts = sorted(inst.topology.candidate_servers[k])
        J = cfg.num_job_types
        n_rows = J * len(opts) * 2          # (j, m, own-stream-in/out) variants

        length = self._length
        trans = np.empty((n_rows, length))
        stat = np.empty(n_rows)
        inits = np.zeros((n_rows, cfg.max_queue_len + 1))
        mus = np.empty(n_rows)
        row = 0
        for j in range(J):
            inc = int(inp.previous_actions[j])
            lam_own = float(inst.arrivals.probs[k, j])
            for m in opts:
                keep = np.ones(length)
                for (k2, m2, j2), ages in osi.transit.items():
                    if m2 == m and j2 == j and ages:
                        keep *= 1.0 - _inflight_hazard(
                            ages, inst.upload.pmf[k2, m, j], length)
                stat_keep = 1.0
                for k2 in sorted(inst.topology.potential_aps[m]):
                    if k2 == k or k2 not in osi.conflict_aps:
                        continue
                    if int(osi.actions[k2][j]) != m:
                        continue
                    lam2 = float(inst.arrivals.probs[k2, j])
                    if lam2 <= 0:
                        continue
                    keep *= 1.0 - self._full[(k2, m, j)]
                    stat_keep *= 1.0 - lam2
                if inc == m and lam_own > 0:
                    keep *= 1.0 - self._inc_window[(k, m, j)]
                # variant 0: candidate routes elsewhere; variant 1: routes here
                trans[row] = 1.0 - keep
                stat[row] = 1.0 - stat_keep
                if lam_own > 0:
                    trans[row + 1] = 1.0 - keep * (1.0 - self._cand_window[(k, m, j)])
                    stat[row + 1] = 1.0 - stat_keep * (1.0 - lam_own)
                else:
                    trans[row + 1] = trans[row]
                    stat[row + 1] = stat[row]
                q_obs = int(osi.queues[m][j])
                inits[row, q_obs] = inits[row + 1, q_obs] = 1.0
                mus[row] = mus[row + 1] = 1.0 / float(inst.service.mean_proc[m, j])
                row += 2

        # one interval of forward propagation, then the queue value from there
        p1 = propagate_queue_batch(inits, trans[:, :t_b], mus.reshape(-1, 1), t_b)
        w_queue = queue_value_batch(p1, trans[:, t_b:], stat,
                                    1.0 / mus, cfg)

        out = inp.previous_actions.copy()
        self.last_scores = {}
        for j in range(J):
            inc = int(inp.previous_actions[j])
            lam_own = float(inst.arrivals.probs[k, j])
            base = j * len(opts) * 2
            best_m, best_score = None, None
            for cand in opts:
                score = 0.0
                for mi, m in enumerate(opts):
                    variant = 1 if m == cand else 0
                    score += w_queue[base + 2 * mi + variant]
                    ages = osi.transit.get((k, m, j), ())
                    score += predicted_transit_value(
                        ages, inst.upload.pmf[k, m, j], lam_own,
                        inc == m, cand == m, cfg)
                self.candidate_evaluations += 1
                self.last_scores[(j, cand)] = float(score)
                if best_score is None or score < best_score - 1e-12:
                    best_m, best_score = cand, score
            out[j] = best_m
        return out


def make_policy(name: str, instance: Instance, seed: int = 0,
                partition: SubsetPartition | None = None) -> Policy:
    """Policy factory keyed by the experiment-config name string."""
    if name == "static":
        return StaticPolicy()
    if name == "random":
        return RandomPolicy(instance, seed)
    if name == "selfish":
        return SelfishPolicy(instance)
    if name == "queue_aware":
        return QueueAwarePolicy(instance)
    if name == "mdp":
        return MdpPolicy(instance, partition)
    raise ValueError(f"unknown policy {name!r}; choose from {POLICY_NAMES}")
