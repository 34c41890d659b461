"""Static and dynamic domain types for the edge dispatching system.

Index conventions used across the whole package:

* APs are ``0 .. K-1``.
* Processing servers are ``0 .. M`` where server ``0`` is the cloud
  (``M + 1`` servers in total).
* Job types are ``0 .. J-1``.
* An in-flight job's *age* at an interval boundary is the number of slots
  since it was dispatched.  A job with age ``xi`` and total upload latency
  ``L`` (``xi <= L``) is delivered during relative slot ``L - xi``; age 0
  means "dispatched at this boundary instant".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

SCHEMA_VERSION = 1

PMF_TOL = 1e-9


class InvariantViolation(ValueError):
    """Raised when an instance component breaks a structural invariant."""

    def __init__(self, message: str, indices: tuple = ()):
        super().__init__(message if not indices else f"{message} at {indices}")
        self.indices = indices


@dataclass(frozen=True)
class SystemConfig:
    num_aps: int
    num_servers: int            # edge servers; total processing servers = num_servers + 1
    num_job_types: int
    slots_per_interval: int
    max_upload_latency: int     # Xi, in slots
    max_queue_len: int
    overflow_penalty: float
    discount: float
    horizon_intervals: int

    def __post_init__(self):
        for name in ("num_aps", "num_servers", "num_job_types",
                     "slots_per_interval", "max_upload_latency",
                     "max_queue_len", "horizon_intervals"):
            if getattr(self, name) < 1:
                raise InvariantViolation(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 < self.discount < 1.0:
            raise InvariantViolation(f"discount must lie strictly in (0,1), got {self.discount}")
        if self.overflow_penalty < 0:
            raise InvariantViolation("overflow_penalty must be nonnegative")


def horizon_for(gamma: float, max_queue_len: int, overflow_penalty: float,
                tol: float = 1e-3) -> int:
    """Smallest H with gamma^(H+1) * (L_max + beta) / (1 - gamma) < tol."""
    bound = (max_queue_len + overflow_penalty) / (1.0 - gamma)
    h = int(np.ceil(np.log(tol / bound) / np.log(gamma))) - 1
    return max(h, 1)


@dataclass(frozen=True)
class Topology:
    candidate_servers: tuple    # per AP k: frozenset of server indices (always contains 0)
    potential_aps: tuple        # per server m (0..M): frozenset of AP indices
    collocated: frozenset       # set of (k, m) pairs with an AP-collocated edge server
    conflict_sets: tuple        # per AP k: frozenset of AP indices

    def is_collocated(self, k: int, m: int) -> bool:
        return (k, m) in self.collocated


def conflict_set(topo: Topology, k: int) -> frozenset:
    """APs whose dispatching contends with AP k on a shared edge server.

    The cloud (server 0) is excluded: with the cloud in every candidate set
    every conflict set would be the whole AP set and no nontrivial subset
    partition could exist.
    """
    out = {k}
    for m in topo.candidate_servers[k]:
        if m != 0:
            out.update(topo.potential_aps[m])
    return frozenset(out)


def make_topology(candidate_servers: Sequence[Sequence[int]],
                  collocated: Sequence[Sequence[int]],
                  num_servers: int) -> Topology:
    """Build a Topology from candidate sets, deriving potential/conflict sets."""
    cand = tuple(frozenset(s) for s in candidate_servers)
    pot = []
    for m in range(num_servers + 1):
        pot.append(frozenset(k for k, s in enumerate(cand) if m in s))
    coll = frozenset((int(k), int(m)) for k, m in collocated)
    topo = Topology(cand, tuple(pot), coll, ())
    conflicts = tuple(conflict_set(topo, k) for k in range(len(cand)))
    return Topology(cand, tuple(pot), coll, conflicts)


@dataclass(frozen=True)
class ArrivalModel:
    """Per-slot Bernoulli arrival probabilities, optionally overridden by a trace.

    ``trace`` maps slot -> tuple of (ap, job_type, count) events; when present
    the simulator replays it instead of sampling Bernoulli arrivals.
    """
    probs: np.ndarray                       # [K, J] in [0, 1]
    trace: Optional[Mapping[int, tuple]] = None


@dataclass(frozen=True)
class UploadLatencyModel:
    pmf: np.ndarray                         # [K, M+1, J, Xi+1]; index = latency in slots

    @property
    def means(self) -> np.ndarray:
        support = np.arange(self.pmf.shape[-1])
        return self.pmf @ support

    def survival(self) -> np.ndarray:
        """S[k, m, j, x] = P(latency >= x) for x in 0..Xi+1."""
        tail = np.cumsum(self.pmf[..., ::-1], axis=-1)[..., ::-1]
        zeros = np.zeros(self.pmf.shape[:-1] + (1,))
        return np.concatenate([tail, zeros], axis=-1)


@dataclass(frozen=True)
class ServiceModel:
    mean_proc: np.ndarray                   # [M+1, J], slots, >= 1

    @property
    def completion_prob(self) -> np.ndarray:
        return 1.0 / self.mean_proc


@dataclass(frozen=True)
class SignalingLatencyModel:
    pmf: np.ndarray                         # [K, t_B]; support 0..t_B-1


@dataclass(frozen=True)
class DispatchActionTable:
    target: np.ndarray                      # [K, J] server indices

    def for_ap(self, k: int) -> np.ndarray:
        return self.target[k]


@dataclass(frozen=True)
class GlobalState:
    """Full system snapshot at an interval boundary (GSI).

    ``transit`` maps (k, m, j) -> sorted tuple of in-flight job ages; absent
    keys mean no jobs in flight on that route.
    """
    transit: Mapping[tuple, tuple]
    actions: np.ndarray                     # [K, J]
    queues: np.ndarray                      # [M+1, J]

    def transit_vector(self, k: int, m: int, j: int, max_latency: int) -> np.ndarray:
        vec = np.zeros(max_latency + 1, dtype=np.int64)
        for age in self.transit.get((k, m, j), ()):
            vec[age] += 1
        return vec

    def jobs_in_flight(self) -> int:
        return sum(len(v) for v in self.transit.values())


@dataclass(frozen=True)
class ObservableState:
    """Per-AP partial view (OSI): LSIs of conflict APs + candidate-server queues."""
    ap: int
    conflict_aps: frozenset
    servers: frozenset
    transit: Mapping[tuple, tuple]          # restricted to k' in conflict_aps
    actions: Mapping[int, np.ndarray]       # k' -> [J] action row
    queues: Mapping[int, np.ndarray]        # m -> [J] queue lengths


def project_osi(gsi: GlobalState, topo: Topology, k: int) -> ObservableState:
    """Def.-5 projection of a GSI onto the view of AP ``k``."""
    xk = topo.conflict_sets[k]
    mk = topo.candidate_servers[k]
    transit = {key: ages for key, ages in gsi.transit.items() if key[0] in xk}
    actions = {kk: gsi.actions[kk].copy() for kk in sorted(xk)}
    queues = {m: gsi.queues[m].copy() for m in sorted(mk)}
    return ObservableState(k, xk, frozenset(mk), transit, actions, queues)


@dataclass(frozen=True)
class Instance:
    """A fully validated problem instance; sole input accepted downstream."""
    config: SystemConfig
    topology: Topology
    arrivals: ArrivalModel
    upload: UploadLatencyModel
    service: ServiceModel
    signaling: SignalingLatencyModel
    upload_survival: np.ndarray = field(repr=False, default=None)

    @property
    def num_servers_total(self) -> int:
        return self.config.num_servers + 1


def _check_pmf(p: np.ndarray, what: str, indices: tuple):
    if np.any(p < -PMF_TOL):
        raise InvariantViolation(f"{what} has negative mass", indices)
    if abs(float(p.sum()) - 1.0) > PMF_TOL:
        raise InvariantViolation(f"{what} does not sum to 1 (sum={p.sum()})", indices)


def validate_instance(config: SystemConfig, topo: Topology, arrivals: ArrivalModel,
                      upload: UploadLatencyModel, service: ServiceModel,
                      signaling: SignalingLatencyModel) -> Instance:
    """Check every structural invariant; return the instance iff all hold."""
    K, M, J = config.num_aps, config.num_servers, config.num_job_types
    if len(topo.candidate_servers) != K:
        raise InvariantViolation("candidate_servers length != num_aps")
    if len(topo.potential_aps) != M + 1:
        raise InvariantViolation("potential_aps length != num_servers + 1")
    for k in range(K):
        cand = topo.candidate_servers[k]
        if 0 not in cand:
            raise InvariantViolation("cloud server 0 missing from candidate set", (k,))
        for m in cand:
            if not 0 <= m <= M:
                raise InvariantViolation("candidate server index out of range", (k, m))
            if k not in topo.potential_aps[m]:
                raise InvariantViolation("candidate/potential sets inconsistent", (k, m))
    for m in range(M + 1):
        for k in topo.potential_aps[m]:
            if m not in topo.candidate_servers[k]:
                raise InvariantViolation("potential/candidate sets inconsistent", (k, m))
    coll_per_ap = {}
    for (k, m) in topo.collocated:
        if m == 0:
            raise InvariantViolation("cloud cannot be collocated", (k, m))
        if m not in topo.candidate_servers[k]:
            raise InvariantViolation("collocated server outside candidate set", (k, m))
        if coll_per_ap.setdefault(k, m) != m:
            raise InvariantViolation("more than one collocated server for AP", (k,))
    for k in range(K):
        expect = conflict_set(topo, k)
        if topo.conflict_sets[k] != expect:
            raise InvariantViolation("stored conflict set does not match Def.-4 recomputation", (k,))

    if arrivals.probs.shape != (K, J):
        raise InvariantViolation("arrival probability array has wrong shape")
    if np.any(arrivals.probs < 0) or np.any(arrivals.probs > 1):
        raise InvariantViolation("arrival probability outside [0, 1]")
    if arrivals.trace is not None:
        last = -1
        for slot in arrivals.trace:
            if slot < 0:
                raise InvariantViolation("trace slot negative", (slot,))
            if slot < last:
                raise InvariantViolation("trace slots not sorted", (slot,))
            last = slot

    Xi = config.max_upload_latency
    if upload.pmf.shape != (K, M + 1, J, Xi + 1):
        raise InvariantViolation("upload pmf array has wrong shape")
    for k in range(K):
        for m in topo.candidate_servers[k]:
            for j in range(J):
                p = upload.pmf[k, m, j]
                _check_pmf(p, "upload pmf", (k, m, j))
                if topo.is_collocated(k, m):
                    if abs(p[0] - 1.0) > PMF_TOL:
                        raise InvariantViolation("collocated upload latency must be the point mass 0", (k, m, j))
                elif p[0] > PMF_TOL:
                    raise InvariantViolation("non-collocated upload support must start at 1", (k, m, j))

    if service.mean_proc.shape != (M + 1, J):
        raise InvariantViolation("service mean array has wrong shape")
    if np.any(service.mean_proc < 1.0):
        raise InvariantViolation("mean processing time must be >= 1 slot")

    tB = config.slots_per_interval
    if signaling.pmf.shape != (K, tB):
        raise InvariantViolation("signaling pmf must have support within [0, t_B)")
    for k in range(K):
        _check_pmf(signaling.pmf[k], "signaling pmf", (k,))

    return Instance(config, topo, arrivals, upload, service, signaling,
                    upload_survival=upload.survival())


def validate_actions(instance: Instance, actions: DispatchActionTable) -> None:
    K, J = instance.config.num_aps, instance.config.num_job_types
    if actions.target.shape != (K, J):
        raise InvariantViolation("action table has wrong shape")
    for k in range(K):
        for j in range(J):
            if int(actions.target[k, j]) not in instance.topology.candidate_servers[k]:
                raise InvariantViolation("action outside candidate set", (k, j))


# ---------------------------------------------------------------------------
# Instance file format (single JSON document, row-major [k][m][j] arrays)

def instance_to_json(instance: Instance) -> dict:
    topo = instance.topology
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "num_aps": instance.config.num_aps,
            "num_servers": instance.config.num_servers,
            "num_job_types": instance.config.num_job_types,
            "slots_per_interval": instance.config.slots_per_interval,
            "max_upload_latency": instance.config.max_upload_latency,
            "max_queue_len": instance.config.max_queue_len,
            "overflow_penalty": instance.config.overflow_penalty,
            "discount": instance.config.discount,
            "horizon_intervals": instance.config.horizon_intervals,
        },
        "topology": {
            "candidate_servers": [sorted(s) for s in topo.candidate_servers],
            "collocated": sorted([list(p) for p in topo.collocated]),
        },
        "arrivals": {"probs": instance.arrivals.probs.tolist()},
        "upload": {"pmf": instance.upload.pmf.tolist()},
        "service": {"mean_proc": instance.service.mean_proc.tolist()},
        "signaling": {"pmf": instance.signaling.pmf.tolist()},
    }
    if instance.arrivals.trace is not None:
        doc["arrivals"]["trace"] = [
            [slot, k, j, c] for slot in sorted(instance.arrivals.trace)
            for (k, j, c) in instance.arrivals.trace[slot]
        ]
    return doc


def instance_from_json(doc: dict) -> Instance:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InvariantViolation(f"unsupported schema_version {doc.get('schema_version')!r}")
    c = doc["config"]
    config = SystemConfig(
        num_aps=c["num_aps"], num_servers=c["num_servers"],
        num_job_types=c["num_job_types"], slots_per_interval=c["slots_per_interval"],
        max_upload_latency=c["max_upload_latency"], max_queue_len=c["max_queue_len"],
        overflow_penalty=c["overflow_penalty"], discount=c["discount"],
        horizon_intervals=c["horizon_intervals"])
    topo = make_topology(doc["topology"]["candidate_servers"],
                         doc["topology"].get("collocated", []),
                         config.num_servers)
    trace = None
    if "trace" in doc["arrivals"]:
        trace = {}
        for slot, k, j, count in doc["arrivals"]["trace"]:
            trace.setdefault(int(slot), []).append((int(k), int(j), int(count)))
        trace = {s: tuple(v) for s, v in trace.items()}
    arrivals = ArrivalModel(np.asarray(doc["arrivals"]["probs"], dtype=float), trace)
    upload = UploadLatencyModel(np.asarray(doc["upload"]["pmf"], dtype=float))
    service = ServiceModel(np.asarray(doc["service"]["mean_proc"], dtype=float))
    signaling = SignalingLatencyModel(np.asarray(doc["signaling"]["pmf"], dtype=float))
    return validate_instance(config, topo, arrivals, upload, service, signaling)


def load_instance(path: str) -> Instance:
    with open(path) as fh:
        return instance_from_json(json.load(fh))


def save_instance(instance: Instance, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_json(instance), fh, indent=1, sort_keys=True)
        fh.write("\n")
